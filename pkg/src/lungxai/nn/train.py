from __future__ import annotations

import logging

import numpy as np

from .losses import bce_dice_loss, cce_loss
from .network import Network
from .optim import AdamState, TrainConfig, adam_step

log = logging.getLogger(__name__)

LOSSES = {"cce": cce_loss, "bce-dice": bce_dice_loss}


def fit_network(net: Network, X, Y, cfg: TrainConfig, on_epoch=None, batch_metric=None):
    """Minibatch Adam training over shuffled epochs.

    ``batch_metric(output, target)`` returns per-sample values averaged into a
    running ``train_metric`` over each epoch. ``on_epoch(epoch, mean_loss)`` is
    called after every epoch and may return a dict of extra values merged
    into the history row. Returns the history as a list of dicts.
    """
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    params = net.param_dict()
    state = AdamState()
    history = []
    n = len(X)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, seen, metric = 0.0, 0, 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            trace = net.forward(X[idx], train=True, rng=rng)
            loss, grad = loss_fn(trace.output, Y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            grads = net.backward(trace, grad, input_grad=False).params
            adam_step(params, grads, state, cfg)
            total += loss * len(idx)
            seen += len(idx)
            if batch_metric is not None:
                metric += float(np.sum(batch_metric(trace.output, Y[idx])))
        row = {"epoch": epoch, "loss": total / seen}
        if batch_metric is not None:
            row["train_metric"] = metric / seen
        if on_epoch is not None:
            row.update(on_epoch(epoch, row["loss"]) or {})
        log.info("epoch %d %s", epoch, {k: round(v, 5) for k, v in row.items() if k != "epoch"})
        history.append(row)
    return history

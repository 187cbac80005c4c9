from __future__ import annotations

import numpy as np

from ..nn import Conv2D, Network, Softmax


def resolve_network(model) -> Network:
    """Accept a fitted estimator exposing ``network_`` or a bare network."""
    net = getattr(model, "network_", model)
    if not isinstance(net, Network):
        raise TypeError(f"expected a Network or a fitted estimator with network_, got {type(model).__name__}")
    return net


def logit_index(net: Network) -> int:
    """Layer whose output is the pre-softmax class score."""
    last = len(net.layers) - 1
    return last - 1 if isinstance(net.layers[last], Softmax) else last


def last_conv_activation(net: Network) -> int:
    """Index of the activation following the last convolution (the conv itself if none follows)."""
    convs = [i for i, layer in enumerate(net.layers) if isinstance(layer, Conv2D)]
    if not convs:
        raise ValueError("network has no convolution layer to explain")
    i = convs[-1]
    if i + 1 < len(net.layers) and net.layers[i + 1].kind == "relu":
        return i + 1
    return i


def target_gradients(net: Network, X, target_class, stop=None):
    """Forward to the logits, seed d(logit[target]) = 1 and backpropagate.

    Returns ``(trace, gradients)``.
    """
    stop = logit_index(net) if stop is None else stop
    trace = net.forward(X, stop=stop)
    seed = np.zeros_like(trace.output)
    seed[:, target_class] = 1.0
    return trace, net.backward(trace, seed, param_grads=False)

"""Slice-level covid/normal classifier, confusion metrics and patient-level CV."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .data.augment import augment_dataset
from .data.split import patient_folds
from .nn import Conv2D, Dense, Dropout, Flatten, MaxPool2, Network, ReLU, ShapeError, Softmax, TrainConfig
from .nn import checkpoint, fit_network
from .validation import check_images, check_labels

N_BLOCKS = 4


def build_cnn(side, filters=32, kernel_size=3, hidden_units=64, dropout=0.25, seed=0, dtype=np.float32):
    """Four conv(3x3, same) + ReLU + 2x2 max-pool blocks, dropout after the
    first and last block, then dense(hidden) + ReLU and dense(2) + softmax."""
    if side % 2**N_BLOCKS:
        raise ShapeError(f"input side {side} is not divisible by {2**N_BLOCKS}")
    layers = []
    cin = 1
    for block in range(N_BLOCKS):
        layers += [Conv2D(cin, filters, kernel_size), ReLU(), MaxPool2()]
        if block in (0, N_BLOCKS - 1):
            layers.append(Dropout(dropout))
        cin = filters
    flat = filters * (side // 2**N_BLOCKS) ** 2
    layers += [Flatten(), Dense(flat, hidden_units), ReLU(), Dense(hidden_units, 2), Softmax()]
    return Network(layers, (1, side, side), seed=seed, dtype=dtype)


class SliceClassifier(ClassifierMixin, BaseEstimator):
    """Binary CT-slice classifier (1 = covid, 0 = normal).

    Inputs are lung-masked slices. Defaults follow the reference schedule:
    batch 32, 20 epochs, learning rate 1e-3, Adam, categorical cross-entropy.
    ``augment_copies`` appends that many randomly flipped or rotated copies
    of the training set before fitting.
    """

    def __init__(self, filters=32, kernel_size=3, hidden_units=64, dropout=0.25, epochs=20, batch_size=32,
                 learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, augment_copies=1, seed=0):
        self.filters = filters
        self.kernel_size = kernel_size
        self.hidden_units = hidden_units
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.augment_copies = augment_copies
        self.seed = seed

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, n=len(X))
        if len(np.unique(y)) < 2:
            raise ValueError("training set contains a single class; both covid and normal slices are needed")
        self.classes_ = np.array([0, 1])
        if self.augment_copies:
            X, index = augment_dataset(X, None, self.augment_copies, seed=self.seed)
            y = y[index]
        self.network_ = build_cnn(X.shape[2], self.filters, self.kernel_size, self.hidden_units,
                                  self.dropout, seed=self.seed)
        cfg = TrainConfig(batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
                          beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon, loss="cce", seed=self.seed)
        onehot = np.eye(2, dtype=np.float32)[y]

        def batch_acc(out, tgt):
            return out.argmax(axis=1) == tgt.argmax(axis=1)

        history = fit_network(self.network_, X, onehot, cfg, batch_metric=batch_acc)
        for row in history:
            row["train_accuracy"] = row.pop("train_metric")
        self.history_ = history
        return self

    @property
    def logit_layer(self):
        """Index of the layer producing pre-softmax class scores."""
        return len(self.network_.layers) - 2

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict(check_images(X, side=self.network_.input_shape[1]))

    def decision_function(self, X):
        """Pre-softmax logits, shaped ``(N, 2)``."""
        check_is_fitted(self, "network_")
        X = check_images(X, side=self.network_.input_shape[1])
        return self.network_.predict(X, stop=self.logit_layer)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def save(self, path):
        check_is_fitted(self, "network_")
        checkpoint.save(path, self.network_, meta={"task": "classification", "params": self.get_params()})

    @classmethod
    def load(cls, path):
        net, meta = checkpoint.load(path)
        if meta.get("task") != "classification":
            raise checkpoint.CheckpointError(f"{path} is not a classification checkpoint")
        est = cls(**meta["params"])
        est.network_ = net
        est.classes_ = np.array([0, 1])
        return est


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def n(self):
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        y_true = check_labels(y_true)
        y_pred = check_labels(y_pred, n=len(y_true))
        return cls(
            tp=int(np.sum((y_pred == 1) & (y_true == 1))),
            tn=int(np.sum((y_pred == 0) & (y_true == 0))),
            fp=int(np.sum((y_pred == 1) & (y_true == 0))),
            fn=int(np.sum((y_pred == 0) & (y_true == 1))),
        )


@dataclass
class Metrics:
    """Classification scores; a metric with a zero denominator is ``None``
    and its reason is recorded in ``undefined``."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    fdr: float | None
    undefined: dict = field(default_factory=dict)

    NAMES = ("accuracy", "precision", "recall", "f1", "fdr")

    def as_dict(self):
        return asdict(self)


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    if counts.n == 0:
        raise ValueError("all confusion counts are zero")
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    undefined = {}
    precision = fdr = recall = f1 = None
    if tp + fp > 0:
        precision = tp / (tp + fp)
        fdr = fp / (fp + tp)
    else:
        undefined["precision"] = undefined["fdr"] = "no positive predictions"
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        undefined["recall"] = "no positive samples"
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        undefined["f1"] = "precision or recall undefined, or both zero"
    return Metrics((tp + tn) / counts.n, precision, recall, f1, fdr, undefined)


# -- cross-validation --------------------------------------------------------------

@dataclass
class CVReport:
    folds: list
    metrics: list
    mean: dict
    std: dict

    def as_dict(self):
        return {"folds": self.folds, "metrics": [m.as_dict() for m in self.metrics],
                "mean": self.mean, "std": self.std}

    def table(self):
        """Mean +/- std per metric, in percent."""
        head = "| Model | Precision | Recall | F1-score | Accuracy |"
        cells = []
        for name in ("precision", "recall", "f1", "accuracy"):
            m, s = self.mean.get(name), self.std.get(name)
            cells.append("n/a" if m is None else f"{100 * m:.2f}±{100 * s:.2f}%")
        return "\n".join([head, "|---|---|---|---|---|", "| CNN | " + " | ".join(cells) + " |"])


def summarize(metrics: list):
    mean, std = {}, {}
    for name in Metrics.NAMES:
        vals = [getattr(m, name) for m in metrics if getattr(m, name) is not None]
        mean[name] = float(np.mean(vals)) if vals else None
        std[name] = float(np.std(vals)) if vals else None
    return mean, std


def cross_validate_patients(estimator, X, y, groups, k=5, seed=0):
    """k-fold cross-validation with folds split at the patient level.

    ``groups`` gives the patient id of every slice. A fresh clone of
    ``estimator`` is trained per fold; each patient is validated exactly once.
    """
    X = check_images(X)
    y = check_labels(y, n=len(X))
    groups = np.asarray(groups)
    labels = {}
    for pid, lab in zip(groups, y):
        if labels.setdefault(pid, lab) != lab:
            raise ValueError(f"patient {pid!r} has slices with different labels")
    folds = patient_folds(labels, k, seed)
    results = []
    for fold in folds:
        val = np.isin(groups, fold)
        model = clone(estimator).fit(X[~val], y[~val])
        results.append(compute_metrics(ConfusionCounts.from_predictions(y[val], model.predict(X[val]))))
    mean, std = summarize(results)
    return CVReport([list(map(str, f)) for f in folds], results, mean, std)

"""Ground-truth faithfulness evaluation of attribution maps.

Raw maps are calibrated by the maximum raw value seen on the training split,
binarized at a threshold chosen on the training split, and compared with the
infection masks by Dice, separately for positive and negative slices.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .attribution import Heatmap, grad_cam_batch, integrated_gradients, lime_explain
from .segmentation import dice_scores
from .validation import check_images, check_labels, check_masks

DEFAULT_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))
METHODS = ("gradcam", "ig", "lime")
# LIME yields a region mask directly, so it has no threshold to sweep
MASK_METHODS = ("lime",)


class ProvenanceError(ValueError):
    """Thresholds used on test data do not come from a disjoint training sweep."""


# -- calibration and binarization -------------------------------------------

def calibrate_heatmap(raw, train_max) -> Heatmap:
    """Divide by the training-split maximum and clamp to [0, 1]."""
    if not train_max > 0:
        raise ValueError(f"train_max must be positive, got {train_max}")
    method = raw.method if isinstance(raw, Heatmap) else "raw"
    values = raw.values if isinstance(raw, Heatmap) else raw
    return Heatmap(np.clip(np.asarray(values, dtype=np.float64) / train_max, 0.0, 1.0), method, calibrated=True)


class HeatmapCalibrator(TransformerMixin, BaseEstimator):
    """Learns the global maximum of raw maps on the training split."""

    def fit(self, maps, y=None):
        maps = np.asarray(maps, dtype=np.float64)
        if maps.size == 0:
            raise ValueError("cannot calibrate on an empty set of maps")
        self.train_max_ = float(maps.max())
        if not self.train_max_ > 0:
            raise ValueError("all training heatmaps are zero; calibration is undefined")
        return self

    def transform(self, maps):
        check_is_fitted(self, "train_max_")
        return np.clip(np.asarray(maps, dtype=np.float64) / self.train_max_, 0.0, 1.0)


def binarize_heatmap(hm: Heatmap, t) -> np.ndarray:
    """Pixels strictly above ``t`` become 1."""
    if not isinstance(hm, Heatmap) or not hm.calibrated:
        raise ValueError("binarization needs a calibrated heatmap")
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    return (hm.values > t).astype(np.uint8)


def _check_calibrated(maps):
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ValueError(f"expected maps shaped (N, H, W), got {maps.shape}")
    if maps.min(initial=0.0) < 0 or maps.max(initial=0.0) > 1:
        raise ValueError("maps must be calibrated to [0, 1] before thresholding")
    return maps


def _check_thresholds(thresholds):
    ts = [float(t) for t in thresholds]
    if not ts:
        raise ValueError("threshold grid is empty")
    if any(not 0.0 < t < 1.0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError(f"thresholds must be strictly ascending values in (0, 1), got {ts}")
    return ts


# -- threshold sweep ----------------------------------------------------------

@dataclass
class ThresholdSweep:
    method: str
    thresholds: list
    dice_positive: list
    dice_negative: list
    threshold_positive: float
    threshold_negative: float
    n_positive: int
    n_negative: int
    split: str = "train"
    patients: list = field(default_factory=list)
    train_max: float | None = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def series(self, which="positive"):
        """Two-column ``threshold dice`` text series for plotting."""
        values = self.dice_positive if which == "positive" else self.dice_negative
        return "".join(f"{t:.2f} {v:.6f}\n" for t, v in zip(self.thresholds, values))


def _best(thresholds, curve):
    # argmax keeps the first maximum, i.e. the smaller threshold on ties
    return float(thresholds[int(np.argmax(curve))]) if curve else None


def sweep_thresholds(maps, infection_masks, labels, thresholds=DEFAULT_THRESHOLDS, method="heatmap",
                     patients=None, split="train", train_max=None) -> ThresholdSweep:
    """Average Dice per class at each threshold, on calibrated training-split maps.

    Negative slices are scored against an all-zero mask. ``patients`` records
    which patients the sweep saw, so later evaluation can prove disjointness.
    """
    if split != "train":
        raise ProvenanceError(f"thresholds must be swept on the training split, got {split!r}")
    maps = _check_calibrated(maps)
    labels = check_labels(labels, n=len(maps))
    gt = check_masks(infection_masks, n=len(maps), side=maps.shape[1])
    gt = np.where(labels[:, None, None] == 1, gt, 0)
    ts = _check_thresholds(thresholds)
    if len(maps) == 0:
        raise ValueError("cannot sweep thresholds over an empty case set")
    pos, neg = labels == 1, labels == 0
    curve_pos, curve_neg = [], []
    for t in ts:
        d = dice_scores(maps > t, gt)
        if pos.any():
            curve_pos.append(float(d[pos].mean()))
        if neg.any():
            curve_neg.append(float(d[neg].mean()))
    return ThresholdSweep(method, ts, curve_pos, curve_neg, _best(ts, curve_pos), _best(ts, curve_neg),
                          int(pos.sum()), int(neg.sum()), split,
                          sorted({str(p) for p in patients}) if patients is not None else [], train_max)


def check_provenance(sweep: ThresholdSweep, test_patients):
    if sweep.split != "train":
        raise ProvenanceError(f"{sweep.method} thresholds come from the {sweep.split!r} split, not train")
    if not sweep.patients:
        raise ProvenanceError(f"{sweep.method} sweep does not record its training patients")
    overlap = set(sweep.patients) & {str(p) for p in test_patients}
    if overlap:
        raise ProvenanceError(f"{sweep.method} thresholds were swept on test patients: {sorted(overlap)[:5]}")


# -- test-split evaluation ---------------------------------------------------

@dataclass
class MethodResult:
    method: str
    threshold_positive: float | None
    threshold_negative: float | None
    dice: list  # per test slice, in input order
    labels: list
    dice_positive: float | None
    dice_negative: float | None
    n_positive: int
    n_negative: int


def score_masks(masks, infection_masks, labels):
    """Per-case Dice of predicted masks against the class-aware ground truth."""
    labels = check_labels(labels)
    masks = check_masks(masks, n=len(labels))
    gt = check_masks(infection_masks, n=len(labels), side=masks.shape[1])
    gt = np.where(labels[:, None, None] == 1, gt, 0)
    return dice_scores(masks, gt).astype(np.float64)


def _mean(values):
    return float(np.mean(values)) if len(values) else None


def method_result(method, dice, labels, t_pos=None, t_neg=None) -> MethodResult:
    dice = np.asarray(dice, dtype=np.float64)
    labels = check_labels(labels, n=len(dice))
    if len(dice) == 0:
        raise ValueError("cannot evaluate an empty case set")
    return MethodResult(method, t_pos, t_neg, dice.tolist(), labels.tolist(),
                        _mean(dice[labels == 1]), _mean(dice[labels == 0]),
                        int((labels == 1).sum()), int((labels == 0).sum()))


def threshold_masks(maps, labels, sweep: ThresholdSweep):
    """Binarize each map at its class's chosen threshold."""
    maps = _check_calibrated(maps)
    labels = check_labels(labels, n=len(maps))
    t = np.where(labels == 1, sweep.threshold_positive if sweep.threshold_positive is not None else 0.5,
                 sweep.threshold_negative if sweep.threshold_negative is not None else 0.5)
    return (maps > t[:, None, None]).astype(np.uint8)


@dataclass
class EvalReport:
    methods: dict  # method -> MethodResult
    baseline: MethodResult | None = None
    times: dict = field(default_factory=dict)  # kept out of dumps() so reports stay reproducible

    def to_dict(self):
        out = {"methods": {k: asdict(v) for k, v in sorted(self.methods.items())}}
        if self.baseline is not None:
            out["baseline"] = asdict(self.baseline)
        return out

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def times_dumps(self):
        return json.dumps(self.times, indent=2, sort_keys=True) + "\n"

    def table(self, with_times=True):
        head = "| Method | Threshold (+/-) | Dice positive | Dice negative |"
        rows = [head + (" Time (s/image) |" if with_times else ""), "|---|---|---|---|" + ("---|" if with_times else "")]
        entries = list(self.methods.values()) + ([self.baseline] if self.baseline else [])
        for r in entries:
            th = "-" if r.threshold_positive is None else f"{r.threshold_positive:.1f} / {r.threshold_negative:.1f}"
            row = f"| {r.method} | {th} | {_pct(r.dice_positive)} | {_pct(r.dice_negative)} |"
            if with_times:
                t = self.times.get(r.method)
                row += f" {'-' if t is None else f'{t:.3f}'} |"
            rows.append(row)
        return "\n".join(rows) + "\n"


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f} %"


def random_baseline(infection_masks, labels, threshold_positive, threshold_negative, seed=0) -> MethodResult:
    """Uniform random calibrated maps binarized at the given thresholds."""
    labels = check_labels(labels)
    gt = check_masks(infection_masks, n=len(labels))
    maps = np.random.default_rng(seed).random(gt.shape)
    t = np.where(labels == 1, threshold_positive, threshold_negative)
    masks = (maps > t[:, None, None]).astype(np.uint8)
    return method_result("random", score_masks(masks, gt, labels), labels, threshold_positive, threshold_negative)


# -- running the explainers --------------------------------------------------

def explain_images(method, model, X, target_class=1, ig_steps=64, lime_params=None):
    """Raw maps ``(N, H, W)`` for gradcam / ig, region masks for lime."""
    X = check_images(X)
    if method == "gradcam":
        return grad_cam_batch(model, X, target_class)
    if method == "ig":
        return np.stack([integrated_gradients(model, x, target_class, ig_steps).heatmap.values for x in X])
    if method == "lime":
        params = dict(lime_params or {})
        return np.stack([lime_explain(model, x, target_class, **params).mask for x in X])
    raise ValueError(f"unknown attribution method {method!r}; choose from {', '.join(METHODS)}")


def measure_time(fn, images, warmup=True):
    """Mean wall-clock seconds per image of ``fn(image)``, after one warm-up call."""
    images = list(images)
    if len(images) < 5:
        raise ValueError(f"timing needs at least 5 images, got {len(images)}")
    if warmup:
        fn(images[0])
    durations = []
    for img in images:
        start = time.perf_counter()
        fn(img)
        durations.append(time.perf_counter() - start)
    return float(np.mean(durations))


@dataclass
class ProtocolResult:
    sweeps: dict
    report: EvalReport
    calibration: dict


def run_protocol(model, train, test, methods=METHODS, thresholds=DEFAULT_THRESHOLDS, ig_steps=64,
                 lime_params=None, baseline_seed=0, time_images=5, sweeps=None):
    """Sweep thresholds on ``train`` and score ``test``.

    ``train`` and ``test`` are dicts with ``images``, ``infection``, ``labels``
    and ``patients`` (as produced by ``load_dataset``, lung-masked images).
    Sweeps passed in ``sweeps`` are reused instead of recomputed, after their
    provenance is checked against the test patients; ``train`` may then be None.
    """
    sweeps = dict(sweeps or {})
    results, times, calibration = {}, {}, {}
    for method in methods:
        if method in MASK_METHODS:
            masks = explain_images(method, model, test["images"], ig_steps=ig_steps, lime_params=lime_params)
            results[method] = method_result(method, score_masks(masks, test["infection"], test["labels"]),
                                            test["labels"])
        else:
            if method not in sweeps:
                if train is None:
                    raise ProvenanceError(f"no training split or stored sweep available for {method}")
                raw = explain_images(method, model, train["images"], ig_steps=ig_steps)
                cal = HeatmapCalibrator().fit(raw)
                sweeps[method] = sweep_thresholds(cal.transform(raw), train["infection"], train["labels"],
                                                  thresholds, method, patients=train["patients"],
                                                  train_max=cal.train_max_)
            sweep = sweeps[method]
            check_provenance(sweep, test["patients"])
            if sweep.train_max is None:
                raise ProvenanceError(f"{method} sweep does not record its calibration maximum")
            calibration[method] = sweep.train_max
            raw = explain_images(method, model, test["images"], ig_steps=ig_steps)
            test_maps = np.clip(raw / sweep.train_max, 0.0, 1.0)
            masks = threshold_masks(test_maps, test["labels"], sweep)
            results[method] = method_result(method, score_masks(masks, test["infection"], test["labels"]),
                                            test["labels"], sweep.threshold_positive, sweep.threshold_negative)
        if time_images:
            few = check_images(test["images"])[:time_images]
            times[method] = measure_time(
                lambda x, m=method: explain_images(m, model, x[None], ig_steps=ig_steps, lime_params=lime_params),
                few)
    baseline = None
    if "gradcam" in sweeps:
        s = sweeps["gradcam"]
        baseline = random_baseline(test["infection"], test["labels"], s.threshold_positive,
                                   s.threshold_negative if s.threshold_negative is not None else 0.5,
                                   seed=baseline_seed)
    return ProtocolResult({m: sweeps[m] for m in methods if m in sweeps}, EvalReport(results, baseline, times),
                          calibration)

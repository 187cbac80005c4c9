"""Command-line pipeline: phantom data, training, prediction, explanation, evaluation."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import grad_cam, integrated_gradients, lime_explain, write_heatmap
from .classification import ConfusionCounts, SliceClassifier, compute_metrics, cross_validate_patients
from .data import DatasetManifest, IngestionError, PhantomConfig, SplitError, gen_phantom, load_dataset
from .data import load_slice, patient_level_split, save_gray
from .evaluation import (DEFAULT_THRESHOLDS, METHODS, ProvenanceError, ThresholdSweep, binarize_heatmap,
                         calibrate_heatmap, run_protocol)
from .nn.checkpoint import CheckpointError
from .report import infection_degree, render_text, save_overlay
from .segmentation import LungSegmenter, apply_lung_mask

log = logging.getLogger("lungxai")

DATA_ROOT_ENV = "LUNGXAI_DATA_ROOT"

DEFAULTS = {
    "data": {"root": "", "resolution": "64", "test_fraction": "0.2", "split_seed": "0",
             "lung_masks": "predicted"},
    "phantom": {"n_patients_positive": "25", "n_patients_negative": "50", "slices_per_positive": "20",
                "slices_per_negative": "5", "side": "64", "seed": "7"},
    "segmentation": {"epochs": "30", "batch_size": "32", "learning_rate": "0.0005", "depth": "3",
                     "base_channels": "8", "seed": "0"},
    "classification": {"epochs": "20", "batch_size": "32", "learning_rate": "0.001", "augment_copies": "1",
                       "seed": "0", "cv_folds": "5", "cv_seed": "0"},
    "explain": {"methods": ",".join(METHODS), "thresholds": ",".join(str(t) for t in DEFAULT_THRESHOLDS),
                "target_class": "1", "ig_steps": "64", "lime_grid": "8", "lime_perturbations": "1000",
                "lime_top_k": "2", "lime_kernel_width": "0.25", "lime_ridge": "0.001", "lime_seed": "0",
                "baseline_seed": "0", "time_images": "5"},
}

SEG_CKPT = "seg.ckpt"
CLF_CKPT = "clf.ckpt"
PRODUCED = "produced_files.json"


class CLIError(Exception):
    pass


# -- configuration -------------------------------------------------------------

def load_config(path=None):
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).is_file():
            raise CLIError(f"config file not found: {path}")
        cfg.read(path)
    for section, keys in cfg.items():
        if section in DEFAULTS:
            unknown = set(keys) - set(DEFAULTS[section])
            if unknown:
                raise CLIError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return cfg


def parse_grid(text):
    """``"0.1,0.2,0.3"`` or ``"start:stop:step"`` (inclusive stop)."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            n = int(round((stop - start) / step)) + 1
            grid = [round(start + i * step, 10) for i in range(max(n, 0))]
        else:
            grid = [float(v) for v in text.split(",") if v.strip()]
    except (ValueError, ZeroDivisionError):
        raise CLIError(f"cannot parse threshold grid {text!r}") from None
    if not grid:
        raise CLIError(f"threshold grid {text!r} is empty")
    return grid


def data_root(cfg, args):
    root = args.data_root or os.environ.get(DATA_ROOT_ENV) or cfg["data"]["root"]
    if not root:
        raise CLIError(f"no dataset root: pass --data-root, set {DATA_ROOT_ENV}, or set [data] root")
    root = Path(root)
    if not (root / "manifest.jsonl").is_file():
        raise CLIError(f"no manifest.jsonl under dataset root {root}")
    return root


def _lime_params(cfg):
    e = cfg["explain"]
    return {"grid": e.getint("lime_grid"), "n_perturbations": e.getint("lime_perturbations"),
            "top_k": e.getint("lime_top_k"), "kernel_width": e.getfloat("lime_kernel_width"),
            "ridge": e.getfloat("lime_ridge"), "seed": e.getint("lime_seed")}


# -- output bookkeeping --------------------------------------------------------

class Outputs:
    """Writes files under the output directory and records them."""

    def __init__(self, root, command):
        self.root = Path(root)
        self.command = command
        self.files = []
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, rel):
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(str(Path(rel).as_posix()))
        return p

    def text(self, rel, content):
        self.path(rel).write_text(content)

    def json(self, rel, obj):
        self.text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def close(self):
        index = self.root / PRODUCED
        produced = json.loads(index.read_text()) if index.is_file() else {}
        produced[self.command] = sorted(set(self.files))
        index.write_text(json.dumps(produced, indent=2, sort_keys=True) + "\n")


def _series(rows, key):
    return "".join(f"{r['epoch']} {r[key]:.6f}\n" for r in rows)


# -- data helpers --------------------------------------------------------------

def _split(cfg, root):
    manifest = DatasetManifest.load(root / "manifest.jsonl")
    d = cfg["data"]
    return patient_level_split(manifest, d.getfloat("test_fraction"), d.getint("split_seed"))


def _segmenter(out_dir, args):
    path = Path(args.seg_checkpoint) if getattr(args, "seg_checkpoint", None) else Path(out_dir) / SEG_CKPT
    if not path.is_file():
        raise CLIError(f"segmentation checkpoint not found: {path} (run train-seg or set [data] lung_masks)")
    return LungSegmenter.load(path)


def _masked(cfg, args, data):
    """Replace images by lung-masked images, using predicted or annotated lungs."""
    source = cfg["data"]["lung_masks"]
    if source == "predicted":
        lung = _segmenter(args.out, args).predict(data["images"])
    elif source == "ground_truth":
        lung = data["lung"]
    else:
        raise CLIError(f"[data] lung_masks must be 'predicted' or 'ground_truth', got {source!r}")
    return dict(data, images=apply_lung_mask(data["images"], lung), lung=lung)


def _classifier(out_dir, args):
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else Path(out_dir) / CLF_CKPT
    if not path.is_file():
        raise CLIError(f"classification checkpoint not found: {path}")
    return SliceClassifier.load(path)


# -- commands ----------------------------------------------------------------

def cmd_phantom_gen(cfg, args, out):
    p = cfg["phantom"]
    seed = args.seed if args.seed is not None else p.getint("seed")
    pc = PhantomConfig(p.getint("n_patients_positive"), p.getint("n_patients_negative"),
                       p.getint("slices_per_positive"), p.getint("slices_per_negative"), p.getint("side"), seed)
    manifest = gen_phantom(pc, out.root)
    for rec in manifest.records:
        for rel in (rec.image_path, rec.lung_mask_path, rec.infection_mask_path):
            out.files.append(rel)
    out.files.append("manifest.jsonl")
    print(f"wrote {len(manifest)} slices from {len(manifest.labels_by_patient())} patients to {out.root}")


def cmd_train_seg(cfg, args, out):
    train, test = _split(cfg, data_root(cfg, args))
    a = load_dataset(train, require=("lung",))
    b = load_dataset(test, require=("lung",))
    s = cfg["segmentation"]
    seg = LungSegmenter(depth=s.getint("depth"), base_channels=s.getint("base_channels"), epochs=s.getint("epochs"),
                        batch_size=s.getint("batch_size"), learning_rate=s.getfloat("learning_rate"),
                        seed=args.seed if args.seed is not None else s.getint("seed"))
    seg.fit(a["images"], a["lung"], validation_data=(b["images"], b["lung"]))
    seg.save(out.path(SEG_CKPT))
    out.text("seg_dice_train.txt", _series(seg.history_, "train_dice"))
    out.text("seg_dice_test.txt", _series(seg.history_, "val_dice"))
    out.text("seg_loss.txt", _series(seg.history_, "loss"))
    dice = seg.score(b["images"], b["lung"])
    out.json("seg_metrics.json", {"test_dice": dice, "n_train": len(a["labels"]), "n_test": len(b["labels"])})
    print(f"held-out lung Dice {dice:.4f}")


def _clf_from_cfg(cfg, seed):
    c = cfg["classification"]
    return SliceClassifier(epochs=c.getint("epochs"), batch_size=c.getint("batch_size"),
                           learning_rate=c.getfloat("learning_rate"), augment_copies=c.getint("augment_copies"),
                           seed=seed)


def cmd_train_clf(cfg, args, out):
    train, test = _split(cfg, data_root(cfg, args))
    a = _masked(cfg, args, load_dataset(train))
    b = _masked(cfg, args, load_dataset(test))
    c = cfg["classification"]
    seed = args.seed if args.seed is not None else c.getint("seed")
    if args.cv:
        report = cross_validate_patients(_clf_from_cfg(cfg, seed), a["images"], a["labels"], a["patients"],
                                         k=c.getint("cv_folds"), seed=c.getint("cv_seed"))
        out.json("cv_report.json", report.as_dict())
        out.text("cv_table.md", report.table() + "\n")
        print(report.table())
    clf = _clf_from_cfg(cfg, seed).fit(a["images"], a["labels"])
    clf.save(out.path(CLF_CKPT))
    out.text("clf_loss.txt", _series(clf.history_, "loss"))
    out.text("clf_accuracy_train.txt", _series(clf.history_, "train_accuracy"))
    counts = ConfusionCounts.from_predictions(b["labels"], clf.predict(b["images"]))
    metrics = compute_metrics(counts)
    out.json("clf_metrics.json", {"counts": vars(counts), "metrics": metrics.as_dict()})
    print(f"test accuracy {metrics.accuracy:.4f}")


def cmd_predict(cfg, args, out):
    clf = _classifier(args.out, args)
    side = clf.network_.input_shape[1]
    if args.images:
        if cfg["data"]["lung_masks"] != "predicted":
            raise CLIError("predicting on loose image files needs [data] lung_masks = predicted")
        names = list(args.images)
        data = {"images": np.stack([load_slice(p, side) for p in names])}
    else:
        _, test = _split(cfg, data_root(cfg, args))
        names = [r.image_path for r in test.records]
        data = load_dataset(test, side=side)
    data = _masked(cfg, args, data)
    proba = clf.predict_proba(data["images"])[:, 1]
    lines = ["image\tp_covid\tprediction\n"]
    lines += [f"{n}\t{p:.6f}\t{'covid' if p >= 0.5 else 'normal'}\n" for n, p in zip(names, proba)]
    out.text("predictions.tsv", "".join(lines))
    print("".join(lines), end="")


def _stored_sweep(out_dir, method):
    path = Path(out_dir) / "sweeps" / f"{method}.json"
    return ThresholdSweep.from_dict(json.loads(path.read_text())) if path.is_file() else None


def cmd_explain(cfg, args, out):
    method = args.method or "gradcam"
    clf = _classifier(args.out, args)
    manifest = DatasetManifest.load(data_root(cfg, args) / "manifest.jsonl")
    if args.image:
        records = [r for r in manifest.records if r.image_path == args.image]
        if not records:
            raise CLIError(f"{args.image} is not listed in the dataset manifest")
    else:
        _, test = _split(cfg, data_root(cfg, args))
        records = [r for r in test.records if r.label == "covid"][:1] or test.records[:1]
    rec = records[0]
    data = _masked(cfg, args, load_dataset(DatasetManifest([rec], manifest.resolution, manifest.root)))
    image, lung = data["images"][0], data["lung"][0]
    e = cfg["explain"]
    target = e.getint("target_class")
    stem = f"explain/{Path(rec.image_path).stem}_{method}"

    if method == "lime":
        expl = lime_explain(clf, image, target, **_lime_params(cfg))
        out.json(stem + "_weights.json", {"weights": expl.weights.tolist(), "intercept": expl.intercept,
                                          "selected": expl.selected})
        highlight = overlay = expl.mask
    else:
        if method == "gradcam":
            raw = grad_cam(clf, image, target)
        else:
            raw = integrated_gradients(clf, image, target, e.getint("ig_steps")).heatmap
        write_heatmap(out.path(stem + ".lxhm"), raw)
        sweep = _stored_sweep(args.out, method)
        if sweep is not None and sweep.train_max:
            cal = calibrate_heatmap(raw, sweep.train_max)
            t = sweep.threshold_positive or 0.5
        else:
            log.warning("no stored %s sweep; calibrating by this image's maximum at t=0.5", method)
            cal = calibrate_heatmap(raw, max(float(raw.values.max()), 1e-12))
            t = 0.5
        highlight = binarize_heatmap(cal, t)
        overlay = cal
    save_gray(out.path(stem + "_mask.png"), highlight)
    save_overlay(out.path(stem + "_overlay.png"), image[0], overlay)
    p = float(clf.predict_proba(image[None])[0, 1])
    sentence = render_text(infection_degree(highlight, lung))
    out.text(stem + ".txt", f"{rec.image_path}\tp_covid={p:.6f}\n{sentence}\n")
    print(sentence)


def cmd_eval_xai(cfg, args, out):
    clf = _classifier(args.out, args)
    train, test = _split(cfg, data_root(cfg, args))
    b = _masked(cfg, args, load_dataset(test, require=("infection",)))
    e = cfg["explain"]
    methods = [args.method] if args.method else [m.strip() for m in e["methods"].split(",") if m.strip()]
    bad = set(methods) - set(METHODS)
    if bad:
        raise CLIError(f"unknown method(s): {', '.join(sorted(bad))}")
    thresholds = parse_grid(args.threshold_grid) if args.threshold_grid else parse_grid(e["thresholds"])
    sweeps = {}
    a = None
    if args.sweeps:
        for m in methods:
            if m == "lime":
                continue
            path = Path(args.sweeps) / f"{m}.json"
            if not path.is_file():
                raise ProvenanceError(f"no train-split sweep artifact for {m} at {path}")
            sweeps[m] = ThresholdSweep.from_dict(json.loads(path.read_text()))
    else:
        a = _masked(cfg, args, load_dataset(train, require=("infection",)))
    res = run_protocol(clf, a, b, methods, thresholds, ig_steps=e.getint("ig_steps"), lime_params=_lime_params(cfg),
                       baseline_seed=e.getint("baseline_seed"), time_images=e.getint("time_images"), sweeps=sweeps)
    for m, sweep in res.sweeps.items():
        out.text(f"sweeps/{m}.json", sweep.dumps())
        out.text(f"sweeps/{m}_positive.txt", sweep.series("positive"))
        out.text(f"sweeps/{m}_negative.txt", sweep.series("negative"))
    out.text("eval_report.json", res.report.dumps())
    out.text("eval_table.md", res.report.table(with_times=False))
    out.text("eval_times.json", res.report.times_dumps())
    print(res.report.table())


def cmd_report(cfg, args, out):
    root = Path(args.out)
    parts = ["# Pipeline report\n"]

    def load(rel):
        p = root / rel
        return json.loads(p.read_text()) if p.is_file() else None

    seg = load("seg_metrics.json")
    if seg:
        parts.append(f"## Lung segmentation\n\nHeld-out Dice: {100 * seg['test_dice']:.2f} %\n")
    cv = root / "cv_table.md"
    if cv.is_file():
        parts.append("## Cross-validation (train split)\n\n" + cv.read_text())
    clf = load("clf_metrics.json")
    if clf:
        m = clf["metrics"]
        cells = ["n/a" if m[k] is None else f"{100 * m[k]:.2f} %" for k in ("precision", "recall", "f1", "accuracy")]
        parts.append("## Classification (test split)\n\n| Model | Precision | Recall | F1-score | Accuracy |\n"
                     "|---|---|---|---|---|\n| CNN | " + " | ".join(cells) + " |\n")
    sweeps = sorted((root / "sweeps").glob("*.json")) if (root / "sweeps").is_dir() else []
    if sweeps:
        rows = ["| Method | Case | Threshold | Average Dice |", "|---|---|---|---|"]
        for p in sweeps:
            s = ThresholdSweep.from_dict(json.loads(p.read_text()))
            for case, t, curve in (("positive", s.threshold_positive, s.dice_positive),
                                   ("negative", s.threshold_negative, s.dice_negative)):
                if t is not None:
                    rows.append(f"| {s.method} | {case} | {t:.1f} | {100 * max(curve):.2f} % |")
        parts.append("## Best thresholds (train split)\n\n" + "\n".join(rows) + "\n")
    table = root / "eval_table.md"
    if table.is_file():
        parts.append("## Explanation assessment (test split)\n\n" + table.read_text())
    if len(parts) == 1:
        raise CLIError(f"no pipeline artifacts found under {root}")
    text = "\n".join(parts)
    out.text("report.md", text)
    times = load("eval_times.json")
    print(text)
    if times:
        print("mean explanation time (s/image): " + ", ".join(f"{k} {v:.3f}" for k, v in sorted(times.items())))


COMMANDS = {
    "phantom-gen": (cmd_phantom_gen, "generate a synthetic phantom dataset"),
    "train-seg": (cmd_train_seg, "train the lung segmenter"),
    "train-clf": (cmd_train_clf, "train the covid/normal classifier"),
    "predict": (cmd_predict, "per-slice covid probabilities"),
    "explain": (cmd_explain, "explain one slice with Grad-CAM, IG or LIME"),
    "eval-xai": (cmd_eval_xai, "threshold sweep on train, explanation Dice on test"),
    "report": (cmd_report, "summarize all artifacts in the output directory"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the seed of the command's stochastic step")
    common.add_argument("--out", default="lungxai-out", help="output directory (default: %(default)s)")
    common.add_argument("--data-root", help=f"dataset root; overrides ${DATA_ROOT_ENV} and the config")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lungxai", description="Explainable covid CT slice pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    parsers = {}
    for name, (_, help_text) in COMMANDS.items():
        parsers[name] = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    for name in ("train-clf", "predict", "explain", "eval-xai"):
        parsers[name].add_argument("--seg-checkpoint", help=f"segmenter checkpoint (default: OUT/{SEG_CKPT})")
    for name in ("predict", "explain", "eval-xai"):
        parsers[name].add_argument("--checkpoint", help=f"classifier checkpoint (default: OUT/{CLF_CKPT})")
    parsers["train-clf"].add_argument("--cv", action="store_true", help="also run patient-level k-fold CV")
    parsers["predict"].add_argument("images", nargs="*", help="PNG slices (default: the test split)")
    parsers["explain"].add_argument("--method", choices=METHODS, default="gradcam")
    parsers["explain"].add_argument("--image", help="manifest-relative image path (default: first test case)")
    parsers["eval-xai"].add_argument("--method", choices=METHODS, help="evaluate a single method")
    parsers["eval-xai"].add_argument("--threshold-grid", help="e.g. 0.1:0.9:0.1 or 0.2,0.4,0.6")
    parsers["eval-xai"].add_argument("--sweeps", help="directory of stored train-split sweeps to reuse")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
        out = Outputs(args.out, args.command)
        func(cfg, args, out)
        out.close()
    except (CLIError, IngestionError, SplitError, CheckpointError, ProvenanceError, ValueError, OSError) as exc:
        print(f"lungxai {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

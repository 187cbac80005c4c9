from __future__ import annotations

import numpy as np

from .manifest import LABELS, DatasetManifest


class SplitError(ValueError):
    pass


def _patients_by_label(patient_labels: dict):
    # named labels keep their canonical order; any other values (e.g. 0/1) sort
    present = set(patient_labels.values())
    order = [lab for lab in LABELS if lab in present]
    order += sorted(present.difference(order), key=repr)
    return {label: sorted(str(p) for p, lab in patient_labels.items() if lab == label) for label in order}


def split_patients(patient_labels: dict, test_fraction: float, seed: int):
    """Stratified patient-level split of ``{patient_id: label}``.

    Returns ``(train_ids, test_ids)`` as sorted lists. Each label contributes
    ``round(test_fraction * n_label)`` patients (at least one) to the test set.
    """
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label, ids in _patients_by_label(patient_labels).items():
        if len(ids) < 2:
            raise SplitError(f"need at least 2 patients labelled {label!r} to split, found {len(ids)}")
        n_test = min(max(1, int(round(test_fraction * len(ids)))), len(ids) - 1)
        order = rng.permutation(len(ids))
        test += [ids[i] for i in order[:n_test]]
        train += [ids[i] for i in order[n_test:]]
    return sorted(train), sorted(test)


def patient_level_split(manifest: DatasetManifest, test_fraction=0.2, seed=0):
    """Split a manifest into (train, test) manifests with disjoint patients."""
    train_ids, test_ids = split_patients(manifest.labels_by_patient(), test_fraction, seed)
    return manifest.subset(train_ids), manifest.subset(test_ids)


def patient_folds(patient_labels: dict, k: int, seed: int):
    """Assign each patient to one of ``k`` folds, stratified by label.

    Returns a list of ``k`` sorted patient-id lists that partition the input.
    """
    if k < 2:
        raise SplitError(f"k must be at least 2, got {k}")
    if len(patient_labels) < k:
        raise SplitError(f"need at least {k} patients for {k}-fold splitting, found {len(patient_labels)}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for ids in _patients_by_label(patient_labels).values():
        order = rng.permutation(len(ids))
        for j, i in enumerate(order):
            folds[(j + offset) % k].append(ids[i])
        offset += len(ids)
    return [sorted(f) for f in folds]

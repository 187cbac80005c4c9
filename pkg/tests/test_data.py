import filecmp
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from lungxai.data import (
    DatasetManifest,
    IngestionError,
    PhantomConfig,
    SliceRecord,
    SplitError,
    augment,
    augment_dataset,
    gen_phantom,
    load_dataset,
    load_mask,
    load_slice,
    patient_folds,
    patient_level_split,
    split_patients,
)

GOLDEN = Path(__file__).parent / "golden"


def _png(path, arr, mode="L"):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path)
    return path


def test_load_slice_scaling(tmp_path):
    p = _png(tmp_path / "a.png", [[0, 128], [255, 255]])
    x = load_slice(p, 2)
    assert x.shape == (1, 2, 2)
    assert x[0, 0, 0] == 0.0
    assert x[0, 1, 0] == 1.0
    assert x[0, 0, 1] == pytest.approx(128 / 255, abs=1e-6)


def test_load_slice_resize_constant(tmp_path):
    p = _png(tmp_path / "c.png", np.full((40, 40), 77))
    x = load_slice(p, 64)
    assert x.shape == (1, 64, 64)
    np.testing.assert_allclose(x, 77 / 255, atol=1e-6)


def test_load_mask_binary_after_resize(tmp_path):
    m = np.zeros((50, 50), dtype=np.uint8)
    m[10:30, 5:25] = 255
    out = load_mask(_png(tmp_path / "m.png", m), 64)
    assert set(np.unique(out)) <= {0, 1}
    assert out.sum() > 0


def test_load_rejects_wrong_format(tmp_path):
    rgb = tmp_path / "rgb.png"
    Image.new("RGB", (4, 4)).save(rgb)
    with pytest.raises(IngestionError, match="rgb.png"):
        load_slice(rgb, 4)
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(IngestionError, match="junk.png"):
        load_slice(junk, 4)


def test_manifest_round_trip_and_duplicates(tmp_path):
    recs = [SliceRecord("p1", "a.png", "covid", "l.png", "i.png"), SliceRecord("p2", "b.png", "normal")]
    m = DatasetManifest(recs, 32)
    m.save(tmp_path / "manifest.jsonl")
    back = DatasetManifest.load(tmp_path / "manifest.jsonl")
    assert back.records == recs and back.resolution == 32
    with pytest.raises(IngestionError):
        DatasetManifest([recs[0], recs[0]])
    with pytest.raises(IngestionError):
        SliceRecord("", "x.png", "covid")
    with pytest.raises(IngestionError):
        SliceRecord("p", "x.png", "flu")


# -- augmentation -------------------------------------------------------------

def test_hflip_involution_and_mask_count():
    rng = np.random.default_rng(0)
    img = rng.random((1, 16, 16))
    mask = (rng.random((16, 16)) > 0.7).astype(np.uint8)
    a, am = augment(img, mask, "hflip")
    b, bm = augment(a, am, "hflip")
    np.testing.assert_array_equal(b, img)
    np.testing.assert_array_equal(bm, mask)
    assert am.sum() == mask.sum()


def test_rotate_zero_is_identity():
    rng = np.random.default_rng(1)
    img = rng.random((1, 16, 16))
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    out, om = augment(img, mask, "rotate", angle=0.0)
    np.testing.assert_array_equal(out, img)
    np.testing.assert_array_equal(om, mask)


def test_rotate_range_and_fill():
    img = np.ones((1, 16, 16))
    out, _ = augment(img, None, "rotate", angle=15.0)
    assert out[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        augment(img, None, "rotate", angle=30.0)
    a, _ = augment(img, None, "rotate", seed=3)
    b, _ = augment(img, None, "rotate", seed=3)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-15, 15))
def test_augment_commutes_with_binarization(seed, angle):
    rng = np.random.default_rng(seed)
    soft = rng.random((20, 20))
    img = rng.random((1, 20, 20))
    for op in ("hflip", "rotate"):
        _, rot_then_bin = augment(img, soft, op, angle)
        _, bin_then_rot = augment(img, (soft > 0.5).astype(float), op, angle)
        np.testing.assert_array_equal(rot_then_bin > 0.5, bin_then_rot > 0.5)


def test_augment_dataset_shapes():
    rng = np.random.default_rng(0)
    imgs = rng.random((3, 1, 8, 8)).astype(np.float32)
    masks = (rng.random((3, 8, 8)) > 0.5).astype(np.uint8)
    out_img, out_mask, index = augment_dataset(imgs, masks, copies=2, seed=1)
    assert out_img.shape == (9, 1, 8, 8) and out_mask.shape == (9, 8, 8)
    np.testing.assert_array_equal(index, [0, 1, 2] * 3)
    assert set(np.unique(out_mask)) <= {0, 1}


# -- splitting ------------------------------------------------------------------

def _labels(n_pos, n_neg):
    d = {f"c{i}": "covid" for i in range(n_pos)}
    d.update({f"n{i}": "normal" for i in range(n_neg)})
    return d


def test_split_ten_patients():
    train, test = split_patients(_labels(5, 5), 0.2, seed=0)
    assert len(test) == 2
    assert not set(train) & set(test)
    assert split_patients(_labels(5, 5), 0.2, seed=0) == (train, test)


def test_split_rejects_bad_input():
    with pytest.raises(SplitError):
        split_patients(_labels(1, 5), 0.2, 0)
    with pytest.raises(SplitError):
        split_patients(_labels(5, 5), 1.0, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 15), st.integers(2, 15), st.floats(0.05, 0.95), st.integers(0, 2**31))
def test_split_disjoint_and_stratified(n_pos, n_neg, frac, seed):
    labels = _labels(n_pos, n_neg)
    train, test = split_patients(labels, frac, seed)
    assert not set(train) & set(test)
    assert set(train) | set(test) == set(labels)
    for lab in ("covid", "normal"):
        assert any(labels[p] == lab for p in train) and any(labels[p] == lab for p in test)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(2, 6), st.integers(0, 2**31))
def test_folds_partition_patients(n_pos, n_neg, k, seed):
    labels = _labels(n_pos, n_neg)
    if len(labels) < k:
        with pytest.raises(SplitError):
            patient_folds(labels, k, seed)
        return
    folds = patient_folds(labels, k, seed)
    flat = [p for f in folds for p in f]
    assert sorted(flat) == sorted(labels)
    assert len(flat) == len(set(flat))


# -- phantom --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_phantom(tmp_path_factory):
    root = tmp_path_factory.mktemp("phantom")
    cfg = PhantomConfig(n_patients_positive=4, n_patients_negative=4, slices_per_positive=5,
                        slices_per_negative=3, side=32, seed=7)
    return gen_phantom(cfg, root)


def test_phantom_masks_by_construction(small_phantom):
    data = load_dataset(small_phantom, require=("lung", "infection"))
    neg = data["labels"] == 0
    assert not data["infection"][neg].any()
    assert (data["infection"][~neg].sum(axis=(1, 2)) > 0).all()
    assert not (data["infection"] & (1 - data["lung"])).any()
    assert data["images"].min() >= 0.0 and data["images"].max() <= 1.0
    bg = data["images"][:, 0][data["lung"] == 0]
    assert np.median(bg) < 0.15


def test_phantom_double_run_byte_identical(tmp_path):
    cfg = PhantomConfig(n_patients_positive=4, n_patients_negative=4, seed=7)
    gen_phantom(cfg, tmp_path / "a")
    gen_phantom(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 1 + 3 * (4 * 20 + 4 * 5)
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", [str(f) for f in files], shallow=False)
    assert not mismatch and not errors


def test_phantom_config_validation():
    with pytest.raises(ValueError):
        PhantomConfig(side=16)
    with pytest.raises(ValueError):
        PhantomConfig(n_patients_positive=0)


def test_phantom_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IngestionError):
        gen_phantom(PhantomConfig(n_patients_positive=1, n_patients_negative=1), blocker / "sub")


def test_phantom_split_matches_golden(tmp_path):
    m = gen_phantom(PhantomConfig(seed=7), tmp_path)
    train, test = patient_level_split(m, 0.2, seed=0)
    golden = json.loads((GOLDEN / "phantom_split_seed7_split0.json").read_text())
    assert test.patients() == golden["test"]
    assert train.patients() == golden["train"]

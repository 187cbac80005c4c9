import json

import pytest

from lungxai import cli

TINY = """
[phantom]
n_patients_positive = 3
n_patients_negative = 3
slices_per_positive = 3
slices_per_negative = 2
side = 32

[data]
resolution = 32
test_fraction = 0.34
lung_masks = ground_truth

[segmentation]
epochs = 1

[classification]
epochs = 1

[explain]
methods = gradcam
ig_steps = 8
lime_perturbations = 640
time_images = 5
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.ini"
    config.write_text(TINY)
    data, out = root / "data", root / "out"
    assert cli.main(["phantom-gen", "--config", str(config), "--out", str(data)]) == 0
    common = ["--config", str(config), "--out", str(out), "--data-root", str(data)]
    assert cli.main(["train-clf"] + common) == 0
    return root, common


def test_end_to_end_outputs(run, capsys):
    root, common = run
    out = root / "out"
    assert cli.main(["eval-xai"] + common) == 0
    assert cli.main(["explain", "--method", "lime"] + common) == 0
    assert cli.main(["predict"] + common) == 0
    assert cli.main(["report"] + common) == 0
    for name in ("clf.ckpt", "eval_report.json", "eval_times.json", "sweeps/gradcam.json", "report.md",
                 "predictions.tsv"):
        assert (out / name).is_file(), name
    sweep = json.loads((out / "sweeps/gradcam.json").read_text())
    assert sweep["split"] == "train" and sweep["patients"]
    produced = json.loads((out / "produced_files.json").read_text())
    assert "clf.ckpt" in produced["train-clf"]
    sentence = next((out / "explain").glob("*.txt")).read_text()
    assert sentence.splitlines()[-1].startswith("Total degree of infection in both lungs:")
    assert "seconds" not in (out / "report.md").read_text()


def test_invalid_method_is_a_usage_error(run):
    _, common = run
    with pytest.raises(SystemExit) as exc:
        cli.main(["explain", "--method", "occlusion"] + common)
    assert exc.value.code == 2


def test_missing_checkpoint_fails(run, tmp_path, capsys):
    _, common = run
    code = cli.main(["predict"] + common + ["--checkpoint", str(tmp_path / "none.ckpt")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_missing_data_root_fails(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(cli.DATA_ROOT_ENV, raising=False)
    assert cli.main(["train-seg", "--out", str(tmp_path)]) == 1
    assert "dataset root" in capsys.readouterr().err


def test_sweep_overlapping_test_patients_is_rejected(run, tmp_path, capsys):
    root, common = run
    assert cli.main(["eval-xai"] + common) == 0
    sweep = json.loads((root / "out/sweeps/gradcam.json").read_text())
    # pretend the sweep was computed on every patient, including the test split
    manifest = (root / "data/manifest.jsonl").read_text().splitlines()[1:]
    sweep["patients"] = sorted({json.loads(line)["patient_id"] for line in manifest})
    (tmp_path / "gradcam.json").write_text(json.dumps(sweep))
    assert cli.main(["eval-xai", "--sweeps", str(tmp_path)] + common) == 1
    assert "swept on test patients" in capsys.readouterr().err


def test_stored_sweep_is_reused(run, tmp_path):
    root, common = run
    assert cli.main(["eval-xai"] + common) == 0
    first = (root / "out/eval_report.json").read_bytes()
    assert cli.main(["eval-xai", "--sweeps", str(root / "out/sweeps")] + common) == 0
    assert (root / "out/eval_report.json").read_bytes() == first


def test_unknown_config_key_fails(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[segmentation]\nepoch = 3\n")
    assert cli.main(["phantom-gen", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert "epoch" in capsys.readouterr().err


def test_parse_grid():
    assert cli.parse_grid("0.1:0.5:0.2") == [0.1, 0.3, 0.5]
    assert cli.parse_grid("0.2,0.4") == [0.2, 0.4]
    with pytest.raises(cli.CLIError):
        cli.parse_grid("0.5:0.1:0.1")

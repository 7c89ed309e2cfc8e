import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from reltemp.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from reltemp.ingest import load_metric_matrix, read_labels


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    outdir = None
    for line in out.splitlines():
        if line.startswith("output: "):
            outdir = Path(line[len("output: "):])
    return code, out, err, outdir


SMALL = ["synth_m=5", "synth_n=2000", "synth_seed=3"]


def _sets(pairs):
    return [a for p in pairs for a in ("--set", p)]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def synth_dir(workdir):
    code = main(["synth", *_sets(SMALL + [f"output_dir={workdir / 'synth'}"])])
    assert code == EXIT_OK
    (out,) = (workdir / "synth").iterdir()
    return out


@pytest.fixture(scope="module")
def trained(synth_dir, workdir):
    start = time.perf_counter()
    code = main(["train", "--config", str(synth_dir / "data.cfg"), *_sets([f"output_dir={workdir / 'train'}"])])
    elapsed = time.perf_counter() - start
    assert code == EXIT_OK
    (out,) = (workdir / "train").iterdir()
    return out, elapsed


def test_synth_files_reload(synth_dir, capsys):
    for part in ("train", "test"):
        m = load_metric_matrix(
            synth_dir / f"{part}.csv", labels_path=synth_dir / f"{part}_labels.csv",
            culprits_path=synth_dir / f"{part}_culprits.txt",
        )
        assert m.m == 5 and m.n == 1000
    assert (synth_dir / "config.txt").exists()


def test_synth_prints_ratio_and_is_deterministic(synth_dir, tmp_path, capsys):
    code, out, _, outdir = run(capsys, "synth", *_sets(SMALL + [f"output_dir={tmp_path}"]))
    assert code == EXIT_OK
    ratio = float(out.split("anomaly_ratio=")[1].split()[0])
    labels = np.concatenate([read_labels(outdir / "train_labels.csv"), read_labels(outdir / "test_labels.csv")])
    assert ratio == pytest.approx(labels.mean(), abs=1e-4)
    for name in ("train.csv", "test.csv", "test_culprits.txt"):
        assert (outdir / name).read_bytes() == (synth_dir / name).read_bytes()


def test_synth_invalid_config_exits_2(tmp_path, capsys):
    code, _, err, _ = run(capsys, "synth", *_sets(["synth_m=0", f"output_dir={tmp_path}"]))
    assert code == EXIT_CONFIG and "synth_m" in err


def test_train_outputs_and_runtime(trained):
    out, elapsed = trained
    assert (out / "checkpoint.npz").stat().st_size > 0
    report = json.loads((out / "training_report.json").read_text())
    assert report["n_labeled"] > 0 and report["phase3_losses"]
    assert elapsed < 300


def test_train_rerun_gives_same_loss(synth_dir, trained, tmp_path):
    main(["train", "--config", str(synth_dir / "data.cfg"), *_sets([f"output_dir={tmp_path}"])])
    (again,) = tmp_path.iterdir()
    first = json.loads((trained[0] / "training_report.json").read_text())
    second = json.loads((again / "training_report.json").read_text())
    assert first["phase3_losses"] == second["phase3_losses"]


def test_train_missing_data_exits_3(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    code, _, err, _ = run(capsys, "train", *_sets([f"train_path={missing}", f"output_dir={tmp_path}"]))
    assert code == EXIT_DATA and str(missing) in err


def test_train_without_path_exits_2(tmp_path, capsys):
    code, _, _, _ = run(capsys, "train", *_sets([f"output_dir={tmp_path}"]))
    assert code == EXIT_CONFIG


def test_unknown_key_exits_2(capsys):
    code, _, err, _ = run(capsys, "train", "--set", "windw=5")
    assert code == EXIT_CONFIG and "windw" in err


def test_detect_with_truth(synth_dir, trained, tmp_path, capsys):
    ckpt = trained[0] / "checkpoint.npz"
    code, out, _, outdir = run(
        capsys, "detect", "--config", str(synth_dir / "data.cfg"),
        *_sets([f"checkpoint={ckpt}", f"output_dir={tmp_path}"]),
    )
    assert code == EXIT_OK
    ev = json.loads((outdir / "eval.json").read_text())
    assert {"precision", "recall", "f1", "threshold"} <= set(ev)
    assert (outdir / "scores.png").stat().st_size > 0
    with open(outdir / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1000 - 8 + 1
    assert all(0.0 <= float(r["score"]) <= 1.0 for r in rows)


def test_detect_without_truth(synth_dir, trained, tmp_path, capsys):
    ckpt = trained[0] / "checkpoint.npz"
    code, _, _, outdir = run(
        capsys, "detect",
        *_sets([f"checkpoint={ckpt}", f"test_path={synth_dir / 'test.csv'}", f"output_dir={tmp_path}"]),
    )
    assert code == EXIT_OK
    assert not (outdir / "eval.json").exists()
    assert (outdir / "scores.csv").exists() and (outdir / "scores.png").exists()


def test_detect_bad_checkpoint_exits_4(synth_dir, tmp_path, capsys):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"garbage")
    code, _, _, _ = run(
        capsys, "detect", *_sets([f"checkpoint={bad}", f"test_path={synth_dir / 'test.csv'}", f"output_dir={tmp_path}"])
    )
    assert code == EXIT_CHECKPOINT


def test_localize_reports_hit_rates(synth_dir, trained, tmp_path, capsys):
    ckpt = trained[0] / "checkpoint.npz"
    code, out, _, outdir = run(
        capsys, "localize", "--config", str(synth_dir / "data.cfg"),
        *_sets([f"checkpoint={ckpt}", "top_k=9", f"output_dir={tmp_path}"]),
    )
    assert code == EXIT_OK
    payload = json.loads((outdir / "localization.json").read_text())
    assert "hit@1" in payload and payload["hit@9"] == 1.0
    assert "hit@1=" in out


def test_localize_unknown_method_exits_2(synth_dir, trained, capsys):
    code, _, _, _ = run(capsys, "localize", "--config", str(synth_dir / "data.cfg"), "--set", "method=magic")
    assert code == EXIT_CONFIG


def test_sweep_beta_table(synth_dir, tmp_path, capsys):
    code, _, _, outdir = run(
        capsys, "sweep-beta", "--config", str(synth_dir / "data.cfg"),
        *_sets(["betas=1.0,0.8,0.6,0.9,0.7", "epochs=5", f"output_dir={tmp_path}"]),
    )
    assert code == EXIT_OK
    with open(outdir / "beta_sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    betas = [float(r["beta"]) for r in rows]
    assert betas == [0.6, 0.7, 0.8, 0.9, 1.0]
    assert int(rows[-1]["pseudo_positive"]) == 0
    assert (outdir / "beta_sweep.png").stat().st_size > 0

"""Command-line front end: synth, train, detect, localize, sweep-beta.

Exit codes: 0 success, 2 config error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import CheckpointError, ConfigError, ValidationError
from .ingest import (
    MetricMatrix,
    generate_synthetic,
    load_metric_matrix,
    segments_from_labels,
    write_culprits,
    write_labels,
    write_metric_csv,
)

log = logging.getLogger("reltemp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "RELTEMP_OUTPUT_ROOT"


class DataError(Exception):
    pass


def run_dir(cfg: RunConfig, command: str) -> Path:
    root = Path(cfg.output_dir or os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    out = root / f"{command}-{stamp}"
    out.mkdir(parents=True, exist_ok=False)
    (out / "config.txt").write_text(cfg.as_text())
    return out


def _require(cfg: RunConfig, key: str) -> str:
    val = getattr(cfg, key)
    if not val:
        raise ConfigError(f"{key} is required for this command")
    return val


def _load(path: str | None, cfg: RunConfig, labels: str | None = None, culprits: str | None = None) -> MetricMatrix:
    for p in (path, labels, culprits):
        if p is not None and not Path(p).exists():
            raise DataError(f"data file not found: {p}")
    try:
        return load_metric_matrix(path, cfg.data_format, labels, culprits)
    except (ValidationError, OSError) as exc:
        raise DataError(str(exc)) from exc


def _load_detector(cfg: RunConfig):
    from .model import load_checkpoint

    return load_checkpoint(_require(cfg, "checkpoint"))


# --------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    synth = cfg.synth_config()
    try:
        data = generate_synthetic(synth)
    except ValidationError as exc:
        raise ConfigError(f"invalid synthetic config: {exc}") from exc
    out = run_dir(cfg, "synth")
    cut = int(data.n * cfg.synth_split)
    parts = {"train": data.slice(0, cut), "test": data.slice(cut, data.n)}
    for name, part in parts.items():
        write_metric_csv(part, out / f"{name}.csv")
        write_labels(part.labels, out / f"{name}_labels.csv")
        write_culprits(part.culprits, out / f"{name}_culprits.txt")
    data_keys = ("train_path", "train_labels_path", "test_path", "test_labels_path", "test_culprits_path", "output_dir")
    kept = [ln for ln in cfg.as_text().splitlines() if ln.split("=")[0].strip() not in data_keys]
    kept += [
        "train_path = train.csv",
        "train_labels_path = train_labels.csv",
        "test_path = test.csv",
        "test_labels_path = test_labels.csv",
        "test_culprits_path = test_culprits.txt",
    ]
    (out / "data.cfg").write_text("\n".join(kept) + "\n")
    ratio = float(data.labels.mean())
    print(f"N={data.n} M={data.m} anomaly_ratio={ratio:.4f} segments={len(data.culprits)}")
    print(f"output: {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    from .model import save_checkpoint
    from .pipeline import train_detector

    train = _load(_require(cfg, "train_path"), cfg, cfg.train_labels_path)
    if train.n < cfg.window:
        raise DataError(f"training series length {train.n} shorter than window {cfg.window}")
    out = run_dir(cfg, "train")
    try:
        det, report = train_detector(train, cfg.train_setup())
    except ValidationError as exc:
        raise DataError(str(exc)) from exc
    save_checkpoint(det, out / "checkpoint.npz")
    report.write(out / "training_report.json")
    final = report.phase3_losses[-1] if report.phase3_losses else float("nan")
    print(f"final_loss={final!r} pseudo_positive={report.pseudo_positive}/{report.n_unlabeled}")
    print(f"output: {out}")
    return EXIT_OK


def plot_scores(series, truth, path: Path, title: str = "anomaly score") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(12, 3.5))
    ax.plot(series.timestamps, series.scores, lw=0.7, label="score")
    if series.threshold is not None:
        ax.axhline(series.threshold, color="red", ls="--", lw=1, label="threshold")
    if truth is not None:
        from .kernels import segments

        starts, ends = segments(truth)
        for a, b in zip(starts, ends):
            ax.axvspan(series.timestamps[a], series.timestamps[b], color="orange", alpha=0.3, lw=0)
    ax.set_xlabel("timestamp")
    ax.set_ylabel("score")
    ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def cmd_detect(cfg: RunConfig) -> int:
    from .detect import evaluate, score_series, write_eval_json
    from .pipeline import normalize_test

    det = _load_detector(cfg)
    test = _load(_require(cfg, "test_path"), cfg, cfg.test_labels_path)
    if test.m != det.model.cfg.n_metrics:
        raise DataError(f"test data has {test.m} metrics, checkpoint expects {det.model.cfg.n_metrics}")
    w = det.meta.get("window", det.model.cfg.window)
    out = run_dir(cfg, "detect")
    try:
        series = score_series(det, normalize_test(det, test), w)
    except ValidationError as exc:
        raise DataError(str(exc)) from exc
    truth = None
    if test.labels is not None:
        truth = test.labels[series.timestamps]
        result = evaluate(series, test.labels, cfg.n_candidates)
        write_eval_json(result, series.threshold, out / "eval.json")
        print(f"precision={result.precision:.4f} recall={result.recall:.4f} f1={result.f1:.4f} theta={series.threshold:.4f}")
    series.to_csv(out / "scores.csv")
    plot_scores(series, truth, out / "scores.png")
    print(f"output: {out}")
    return EXIT_OK


def cmd_localize(cfg: RunConfig) -> int:
    from .localize import hit_at_k, write_reports
    from .pipeline import localize_segments

    det = _load_detector(cfg)
    test = _load(_require(cfg, "test_path"), cfg, cfg.test_labels_path, cfg.test_culprits_path)
    if test.culprits:
        segs = [(a, b, c) for a, b, c in test.culprits]
    elif test.labels is not None:
        segs = [(a, b, None) for a, b in segments_from_labels(test.labels)]
    else:
        raise ConfigError("localize needs test_culprits_path or test_labels_path")
    out = run_dir(cfg, "localize")
    try:
        reports = localize_segments(det, test, cfg.method, segs)
    except ValidationError as exc:
        raise DataError(str(exc)) from exc
    summary = {"method": cfg.method, "k": cfg.top_k, "n_segments": len(reports)}
    scored = [r for r in reports if r.culprits]
    if scored:
        for k in sorted({1, cfg.top_k}):
            summary[f"hit@{k}"] = hit_at_k([r.rankings for r in scored], [r.culprits for r in scored], k)
        print(" ".join(f"{k}={v:.4f}" for k, v in summary.items() if k.startswith("hit@")))
    write_reports(reports, out / "localization.json", names=det.metric_names or None, **summary)
    print(f"output: {out}")
    return EXIT_OK


def cmd_sweep_beta(cfg: RunConfig) -> int:
    import dataclasses

    from .detect import evaluate, score_series
    from .pipeline import finalize, normalize_test, train_phase_one
    from .pulearn import fit_phase_three

    train = _load(_require(cfg, "train_path"), cfg, cfg.train_labels_path)
    test = _load(_require(cfg, "test_path"), cfg, _require(cfg, "test_labels_path"))
    out = run_dir(cfg, "sweep-beta")
    setup = cfg.train_setup()
    try:
        phase1, (norm, stats, batch) = train_phase_one(train, setup)
    except ValidationError as exc:
        raise DataError(str(exc)) from exc
    rows = []
    for beta in sorted(cfg.betas):
        pu = dataclasses.replace(setup.pu, beta=beta)
        det, report = fit_phase_three(batch, phase1, pu)
        det = finalize(det, norm, stats, batch, setup)
        series = score_series(det, normalize_test(det, test), cfg.window)
        res = evaluate(series, test.labels, cfg.n_candidates)
        rows.append((beta, res.precision, res.recall, res.f1, report.pseudo_positive))
        print(f"beta={beta:.2f} precision={res.precision:.4f} recall={res.recall:.4f} f1={res.f1:.4f} pseudo_positive={report.pseudo_positive}")
    with open(out / "beta_sweep.csv", "w") as fh:
        fh.write("beta,precision,recall,f1,pseudo_positive\n")
        for r in rows:
            fh.write(f"{r[0]!r},{r[1]!r},{r[2]!r},{r[3]!r},{r[4]}\n")
    plot_sweep(rows, out / "beta_sweep.png")
    print(f"output: {out}")
    return EXIT_OK


def plot_sweep(rows, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r[0] for r in rows], [r[3] for r in rows], marker="o")
    ax.set_xlabel("beta")
    ax.set_ylabel("F1 (point-adjusted)")
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "localize": cmd_localize,
    "sweep-beta": cmd_sweep_beta,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reltemp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())

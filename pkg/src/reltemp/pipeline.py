"""End-to-end helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .detect import EvalResult, ScoreSeries, evaluate, score_series
from .ingest import DEFAULT_TRAIN_STRIDE, DEFAULT_WINDOW, MetricMatrix, make_windows, minmax_normalize
from .localize import LocalizationReport, hit_at_k, mean_attention, rank_metrics
from .model import Detector, ModelConfig
from .pulearn import PhaseOne, PuConfig, TrainingReport, fit_phase_one, fit_phase_three


@dataclass
class TrainSetup:
    window: int = DEFAULT_WINDOW
    stride: int = DEFAULT_TRAIN_STRIDE
    pu: PuConfig = None
    model_overrides: dict = None

    def __post_init__(self) -> None:
        self.pu = self.pu or PuConfig()
        self.model_overrides = self.model_overrides or {}

    def model_config(self, n_metrics: int) -> ModelConfig:
        return ModelConfig(n_metrics=n_metrics, window=self.window, **self.model_overrides)


def prepare_training(train: MetricMatrix, setup: TrainSetup):
    norm, stats = minmax_normalize(train)
    batch = make_windows(norm, setup.window, setup.stride)
    return norm, stats, batch


def finalize(det: Detector, norm_train: MetricMatrix, stats, batch, setup: TrainSetup) -> Detector:
    det.norm_stats = stats
    det.attention_normal = mean_attention(det.model, batch)
    det.train_mean = norm_train.values.mean(axis=0)
    det.train_std = norm_train.values.std(axis=0)
    det.metric_names = list(norm_train.metric_names)
    det.meta.setdefault("window", setup.window)
    det.meta.setdefault("stride", setup.stride)
    return det


def train_detector(
    train: MetricMatrix, setup: TrainSetup, force_negative: bool = False, dtype=torch.float32
) -> tuple[Detector, TrainingReport]:
    norm, stats, batch = prepare_training(train, setup)
    phase1 = fit_phase_one(batch, setup.pu, setup.model_config(train.m), dtype)
    det, report = fit_phase_three(batch, phase1, setup.pu, force_negative)
    return finalize(det, norm, stats, batch, setup), report


def train_phase_one(train: MetricMatrix, setup: TrainSetup, dtype=torch.float32) -> tuple[PhaseOne, tuple]:
    norm, stats, batch = prepare_training(train, setup)
    return fit_phase_one(batch, setup.pu, setup.model_config(train.m), dtype), (norm, stats, batch)


def normalize_test(det: Detector, test: MetricMatrix) -> MetricMatrix:
    return minmax_normalize(test, det.norm_stats)[0]


def detect_series(det: Detector, test: MetricMatrix) -> tuple[ScoreSeries, EvalResult | None]:
    norm = normalize_test(det, test)
    series = score_series(det, norm, det.meta.get("window", det.model.cfg.window))
    result = evaluate(series, test.labels) if test.labels is not None else None
    return series, result


def localize_segments(
    det: Detector,
    test: MetricMatrix,
    method: str,
    segments: list[tuple[int, int, frozenset | None]] | None = None,
) -> list[LocalizationReport]:
    """Rank metrics for each segment (defaults to the culprit segments of ``test``)."""
    norm = normalize_test(det, test)
    w = det.meta.get("window", det.model.cfg.window)
    windows = make_windows(norm, w, 1)
    if segments is None:
        segments = list(test.culprits)
    reports = []
    for start, end, culprits in segments:
        if end < w - 1:
            continue
        reports.append(
            rank_metrics(
                method,
                (max(start, 0), end),
                model=det.model,
                attention_normal=det.attention_normal,
                test_windows=windows,
                test_values=norm.values,
                train_mean=det.train_mean,
                train_std=det.train_std,
                culprits=culprits,
            )
        )
    return reports


def hit_rates(reports: list[LocalizationReport], ks=(1, 3)) -> dict[int, float]:
    rankings = [r.rankings for r in reports]
    culprits = [r.culprits for r in reports]
    return {k: hit_at_k(rankings, culprits, k) for k in ks}


def split_series(m: MetricMatrix, fraction: float = 0.5) -> tuple[MetricMatrix, MetricMatrix]:
    cut = int(m.n * fraction)
    return m.slice(0, cut), m.slice(cut, m.n)


def naive_sigma_scores(train: MetricMatrix, test: MetricMatrix, k: float = 3.0) -> np.ndarray:
    """Per-timestamp max over metrics of |z| / k; the 3-sigma rule fires when > 1."""
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (np.abs((test.values - mean) / std) / k).max(axis=1)

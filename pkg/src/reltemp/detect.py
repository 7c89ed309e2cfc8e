"""Scoring a test series, segment point-adjust, precision/recall/F1 and
threshold grid search."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ValidationError
from .ingest import MetricMatrix, make_windows
from .model import Detector

N_CANDIDATES = 100


@dataclass
class EvalResult:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "EvalResult":
        tp, fp, fn = int(tp), int(fp), int(fn)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, fn, precision, recall, f1)


@dataclass
class ScoreSeries:
    timestamps: np.ndarray
    scores: np.ndarray
    threshold: float | None = None
    predictions: np.ndarray | None = None
    adjusted_predictions: np.ndarray | None = None

    def apply_threshold(self, theta: float, truth: np.ndarray | None = None) -> "ScoreSeries":
        self.threshold = float(theta)
        self.predictions = (self.scores > theta).astype(np.uint8)
        if truth is not None:
            self.adjusted_predictions = point_adjust(self.predictions, truth)
        else:
            self.adjusted_predictions = self.predictions.copy()
        return self

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("timestamp,score,pred,adjusted_pred\n")
            pred = self.predictions if self.predictions is not None else np.zeros(len(self.scores), np.uint8)
            adj = self.adjusted_predictions if self.adjusted_predictions is not None else pred
            for t, s, p, a in zip(self.timestamps, self.scores, pred, adj):
                fh.write(f"{int(t)},{float(s)!r},{int(p)},{int(a)}\n")


def score_series(det: Detector, test: MetricMatrix, w: int) -> ScoreSeries:
    """One score per timestamp t in [w-1, N-1] from the window ending at t.

    ``test`` must already be normalized with the training statistics.
    """
    if test.n < w:
        raise ValidationError(f"test series length {test.n} shorter than window {w}")
    batch = make_windows(test, w, stride=1)
    return ScoreSeries(batch.end_index.copy(), det.scores(batch.windows))


def point_adjust(pred, truth) -> np.ndarray:
    """Mark a whole ground-truth segment as detected when any point inside it is."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValidationError(f"prediction length {pred.shape} != truth length {truth.shape}")
    return kernels.point_adjust(pred != 0, truth != 0)


def prf1(pred, truth) -> EvalResult:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValidationError(f"prediction length {pred.shape} != truth length {truth.shape}")
    return EvalResult.from_counts(*kernels.confusion(pred != 0, truth != 0))


def threshold_candidates(scores: np.ndarray, n_candidates: int = N_CANDIDATES) -> np.ndarray:
    lo, hi = float(np.min(scores)), float(np.max(scores))
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, n_candidates)


def grid_search_threshold(scores, truth, n_candidates: int = N_CANDIDATES) -> tuple[float, EvalResult]:
    """Best point-adjusted F1 over thresholds evenly spaced on [min, max].

    Ties go to the larger threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ValidationError(f"scores length {scores.shape} != truth length {truth.shape}")
    if scores.size == 0:
        raise ValidationError("no scores to threshold")
    cands = threshold_candidates(scores, n_candidates)
    tp, fp, fn = kernels.threshold_counts(scores, truth != 0, cands)
    best_k, best_f1 = 0, -1.0
    for k in range(len(cands)):
        f1 = EvalResult.from_counts(tp[k], fp[k], fn[k]).f1
        if f1 >= best_f1:
            best_k, best_f1 = k, f1
    return float(cands[best_k]), EvalResult.from_counts(tp[best_k], fp[best_k], fn[best_k])


def scored_truth(labels: np.ndarray, series: ScoreSeries) -> np.ndarray:
    """Ground truth restricted to the scored timestamps."""
    return np.asarray(labels)[series.timestamps]


def evaluate(series: ScoreSeries, labels: np.ndarray, n_candidates: int = N_CANDIDATES) -> EvalResult:
    truth = scored_truth(labels, series)
    theta, result = grid_search_threshold(series.scores, truth, n_candidates)
    series.apply_threshold(theta, truth)
    return result


def write_eval_json(result: EvalResult, theta: float, path: str | Path, **extra) -> None:
    payload = asdict(result) | {"threshold": theta} | extra
    Path(path).write_text(json.dumps(payload, indent=2))

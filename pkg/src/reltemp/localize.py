"""Culprit-metric ranking by attention change, two baseline rankings, and Hit@k."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ValidationError
from .ingest import WindowBatch
from .model import RTModel, attention_matrices

METHODS = ("anomaly_score", "correlation_score", "correlation_change")
DEFAULT_TOP = 3


@dataclass
class LocalizationReport:
    segment: tuple[int, int]
    delta: np.ndarray
    rankings: np.ndarray
    method: str
    culprits: frozenset | None = field(default=None)

    def top(self, r: int = DEFAULT_TOP) -> list[int]:
        return [int(i) for i in self.rankings[:r]]

    def to_json(self, names: Sequence[str] | None = None, r: int = DEFAULT_TOP) -> dict:
        out = {
            "segment": [int(self.segment[0]), int(self.segment[1])],
            "method": self.method,
            "delta": [float(v) for v in self.delta],
            "ranking": [int(i) for i in self.rankings],
        }
        if names is not None:
            out["ranked_metrics"] = [names[i] for i in self.rankings]
        if self.culprits is not None:
            out["culprits"] = sorted(int(i) for i in self.culprits)
            out["culprit_overlap_top"] = sorted(set(self.top(r)) & set(self.culprits))
        return out


def mean_attention(model: RTModel, windows: WindowBatch | np.ndarray) -> np.ndarray:
    """Elementwise mean of the continuous attention over ``windows``."""
    arr = windows.windows if isinstance(windows, WindowBatch) else windows
    if len(arr) == 0:
        raise ValidationError("mean_attention needs at least one window")
    total = None
    for start in range(0, len(arr), 512):
        chunk = attention_matrices(model, arr[start : start + 512]).sum(0)
        total = chunk if total is None else total + chunk
    return total / len(arr)


def correlation_change(a_normal, a_anomal) -> np.ndarray:
    """Per-metric sum over j != i of |A_anomal[i, j] - A_normal[i, j]|."""
    a_normal = np.asarray(a_normal, dtype=np.float64)
    a_anomal = np.asarray(a_anomal, dtype=np.float64)
    if a_normal.shape != a_anomal.shape or a_normal.ndim != 2 or a_normal.shape[0] != a_normal.shape[1]:
        raise ValidationError(f"attention shapes differ or are not square: {a_normal.shape} vs {a_anomal.shape}")
    return kernels.correlation_change(a_normal, a_anomal)


def correlation_score(a_anomal) -> np.ndarray:
    a = np.asarray(a_anomal, dtype=np.float64)
    return a.sum(axis=1) - np.diagonal(a)


def zscore_deviation(segment_values: np.ndarray, train_mean: np.ndarray, train_std: np.ndarray) -> np.ndarray:
    """Largest |z| of each metric inside the segment relative to training mean/std."""
    std = np.where(train_std > 0, train_std, 1.0)
    return np.abs((np.asarray(segment_values) - train_mean) / std).max(axis=0)


def rank_descending(delta: np.ndarray) -> np.ndarray:
    """Indices by descending delta, lower index first on ties."""
    return np.lexsort((np.arange(len(delta)), -np.asarray(delta)))


def segment_windows(windows: WindowBatch, start: int, end: int) -> WindowBatch:
    mask = (windows.end_index >= start) & (windows.end_index <= end)
    return windows.subset(np.flatnonzero(mask))


def rank_metrics(
    method: str,
    segment: tuple[int, int],
    *,
    model: RTModel | None = None,
    attention_normal: np.ndarray | None = None,
    test_windows: WindowBatch | None = None,
    test_values: np.ndarray | None = None,
    train_mean: np.ndarray | None = None,
    train_std: np.ndarray | None = None,
    culprits: frozenset | None = None,
) -> LocalizationReport:
    """Rank metrics for one anomaly segment ``[start, end]`` (inclusive, test time)."""
    if method not in METHODS:
        raise ValidationError(f"unknown localization method {method!r}; expected one of {METHODS}")
    start, end = segment
    if method == "anomaly_score":
        if test_values is None or train_mean is None or train_std is None:
            raise ValidationError("anomaly_score ranking needs test values and training mean/std")
        seg = np.asarray(test_values)[start : end + 1]
        if len(seg) == 0:
            raise ValidationError(f"segment {segment} is empty")
        delta = zscore_deviation(seg, train_mean, train_std)
    else:
        if model is None or test_windows is None:
            raise ValidationError(f"{method} ranking needs the model and test windows")
        seg_windows = segment_windows(test_windows, start, end)
        if len(seg_windows) == 0:
            raise ValidationError(f"segment {segment} has no complete window")
        a_anomal = mean_attention(model, seg_windows)
        if method == "correlation_score":
            delta = correlation_score(a_anomal)
        else:
            if attention_normal is None:
                raise ValidationError("correlation_change needs the normal-period attention")
            delta = correlation_change(attention_normal, a_anomal)
    return LocalizationReport((start, end), delta, rank_descending(delta), method, culprits)


def hit_at_k(rankings: Sequence[Sequence[int]], culprits: Sequence[frozenset | set], k: int) -> float:
    """Fraction of segments whose top-k ranking contains a culprit metric."""
    if len(rankings) == 0:
        raise ValidationError("hit_at_k needs at least one segment")
    if len(rankings) != len(culprits):
        raise ValidationError("rankings and culprit sets are not aligned")
    hits = sum(bool(set(int(i) for i in r[:k]) & set(c)) for r, c in zip(rankings, culprits))
    return hits / len(rankings)


def write_reports(reports: Sequence[LocalizationReport], path: str | Path, names=None, **summary) -> None:
    payload = {"segments": [r.to_json(names) for r in reports], **summary}
    Path(path).write_text(json.dumps(payload, indent=2))

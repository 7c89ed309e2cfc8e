"""Loading, normalization, windowing and synthesis of multivariate metric data."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ParseError, ValidationError

CLIP_RANGE = (-1.0, 2.0)
DEFAULT_WINDOW = 8
# faults keep this many points clear of the series start and the train/test cut;
# independent of the model window so changing the window does not move the data
SYNTH_GUARD = 100
DEFAULT_TRAIN_STRIDE = 2

Culprit = tuple[int, int, frozenset]


@dataclass
class MetricMatrix:
    """N observations of M metrics at a fixed interval."""

    values: np.ndarray
    metric_names: list[str]
    labels: np.ndarray | None = None
    culprits: list[Culprit] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {self.values.shape}")
        n, m = self.values.shape
        if n == 0 or m == 0:
            raise ValidationError("metric matrix is empty")
        if len(self.metric_names) != m:
            raise ValidationError(f"{len(self.metric_names)} metric names for {m} metrics")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("values contain missing or non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (n,):
                raise ValidationError(f"labels length {self.labels.shape[0]} != N={n}")
            if not np.isin(self.labels, (0, 1)).all():
                raise ValidationError("labels must be 0/1")
        for start, end, idx in self.culprits:
            if not 0 <= start <= end < n:
                raise ValidationError(f"culprit segment ({start}, {end}) outside [0, {n})")
            if any(not 0 <= i < m for i in idx):
                raise ValidationError(f"culprit metric index out of range in segment ({start}, {end})")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(self.n)

    def slice(self, start: int, stop: int) -> "MetricMatrix":
        """Rows [start, stop); culprit segments are clipped and re-based."""
        labels = None if self.labels is None else self.labels[start:stop]
        culprits = []
        for a, b, idx in self.culprits:
            a2, b2 = max(a, start), min(b, stop - 1)
            if a2 <= b2:
                culprits.append((a2 - start, b2 - start, idx))
        return MetricMatrix(self.values[start:stop], list(self.metric_names), labels, culprits)


@dataclass
class WindowBatch:
    """Sliding windows in metric-major layout: ``windows[s]`` has shape (M, w)."""

    windows: np.ndarray
    y: np.ndarray
    end_index: np.ndarray
    # 1 where any point of the window is labeled anomalous; None without point labels
    touched: np.ndarray | None = None

    def __len__(self) -> int:
        return self.windows.shape[0]

    def clean_mask(self) -> np.ndarray:
        """Windows that contain no anomalous point (all windows when unlabeled)."""
        flags = self.y if self.touched is None else self.touched
        return np.asarray(flags) == 0

    @property
    def w(self) -> int:
        return self.windows.shape[2]

    def subset(self, idx) -> "WindowBatch":
        idx = np.asarray(idx)
        touched = None if self.touched is None else self.touched[idx]
        return WindowBatch(self.windows[idx], self.y[idx], self.end_index[idx], touched)

    def with_labels(self, y) -> "WindowBatch":
        return WindowBatch(self.windows, np.asarray(y, dtype=np.int8), self.end_index)


# --------------------------------------------------------------------------
# file formats


def _parse_rows(lines: Sequence[str], path: Path, first_line: int) -> np.ndarray:
    rows = []
    width = None
    for k, line in enumerate(lines):
        lineno = first_line + k
        fields = line.strip().split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise FormatError(f"{path}: expected {width} fields, got {len(fields)}", line=lineno)
        row = []
        for f in fields:
            f = f.strip()
            if f == "" or f.lower() in ("nan", "na", "null"):
                row.append(np.nan)
                continue
            try:
                row.append(float(f))
            except ValueError:
                raise ParseError(f"{path}: non-numeric field {f!r}", line=lineno) from None
        rows.append(row)
    return np.array(rows, dtype=np.float64)


def fill_missing(values: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs per column; leading NaNs become 0."""
    values = np.array(values, dtype=np.float64, copy=True)
    for j in range(values.shape[1]):
        col = values[:, j]
        mask = np.isnan(col)
        if not mask.any():
            continue
        idx = np.where(~mask, np.arange(len(col)), 0)
        np.maximum.accumulate(idx, out=idx)
        filled = col[idx]
        filled[np.isnan(filled)] = 0.0
        values[:, j] = filled
    return values


def _nonblank(path: Path) -> list[str]:
    with open(path) as fh:
        return [ln for ln in fh.read().splitlines() if ln.strip()]


def read_labels(path: str | Path) -> np.ndarray:
    """One 0/1 per line; a non-numeric first line is treated as a header."""
    path = Path(path)
    lines = _nonblank(path)
    if lines and not re.fullmatch(r"\s*[-+0-9.eE]+\s*", lines[0]):
        lines = lines[1:]
    out = []
    for k, line in enumerate(lines, start=1):
        try:
            v = float(line.strip())
        except ValueError:
            raise ParseError(f"{path}: non-numeric label {line!r}", line=k) from None
        if v not in (0.0, 1.0):
            raise ValidationError(f"{path}: label {v} at line {k} is not 0/1")
        out.append(int(v))
    return np.array(out, dtype=np.int8)


_INTERP_RE = re.compile(r"^\s*(\d+)\s*-\s*(\d+)\s*:\s*([\d\s,]+)$")


def parse_interpretation_line(line: str) -> Culprit:
    """``"a-b:i1,i2"`` with 1-based metric indices -> ``(a, b, {i1-1, i2-1})``."""
    m = _INTERP_RE.match(line)
    if not m:
        raise FormatError(f"bad interpretation line {line!r}")
    idx = frozenset(int(x) - 1 for x in m.group(3).split(",") if x.strip())
    if any(i < 0 for i in idx):
        raise FormatError(f"metric index 0 in 1-based interpretation line {line!r}")
    return int(m.group(1)), int(m.group(2)), idx


def read_culprits(path: str | Path) -> list[Culprit]:
    out = []
    for k, line in enumerate(_nonblank(Path(path)), start=1):
        try:
            out.append(parse_interpretation_line(line))
        except FormatError as exc:
            raise FormatError(str(exc), line=k) from None
    return out


def format_culprits(culprits: Sequence[Culprit]) -> str:
    return "".join(f"{a}-{b}:{','.join(str(i + 1) for i in sorted(idx))}\n" for a, b, idx in culprits)


def load_metric_matrix(
    path: str | Path,
    format: str = "csv",
    labels_path: str | Path | None = None,
    culprits_path: str | Path | None = None,
) -> MetricMatrix:
    """Read an SMD text file (no header) or a csv with a header of metric names."""
    path = Path(path)
    if format not in ("smd", "csv"):
        raise ValidationError(f"unknown format {format!r}")
    lines = _nonblank(path)
    if format == "csv":
        if not lines:
            raise ValidationError(f"{path}: empty file")
        names = next(csv.reader([lines[0]]))
        names = [n.strip() for n in names]
        body, first = lines[1:], 2
    else:
        body, first = lines, 1
        names = None
    if not body:
        raise ValidationError(f"{path}: no observations")
    values = _parse_rows(body, path, first)
    if names is None:
        names = [f"m{j}" for j in range(values.shape[1])]
    elif len(names) != values.shape[1]:
        raise FormatError(f"{path}: header has {len(names)} names, rows have {values.shape[1]} fields", line=1)
    values = fill_missing(values)
    labels = read_labels(labels_path) if labels_path is not None else None
    if labels is not None and len(labels) != values.shape[0]:
        raise ValidationError(f"{labels_path}: {len(labels)} labels for {values.shape[0]} observations")
    culprits = read_culprits(culprits_path) if culprits_path is not None else []
    return MetricMatrix(values, names, labels, culprits)


def write_metric_csv(m: MetricMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(m.metric_names)
        for row in m.values:
            writer.writerow([repr(float(v)) for v in row])


def write_labels(labels: np.ndarray, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("label\n")
        fh.write("".join(f"{int(v)}\n" for v in labels))


def write_culprits(culprits: Sequence[Culprit], path: str | Path) -> None:
    Path(path).write_text(format_culprits(culprits))


# --------------------------------------------------------------------------
# normalization and windowing


def minmax_normalize(
    m: MetricMatrix, stats: tuple[np.ndarray, np.ndarray] | None = None
) -> tuple[MetricMatrix, tuple[np.ndarray, np.ndarray]]:
    """Scale each metric to [0, 1] with training min/max.

    Without ``stats`` the min/max are computed from ``m`` and returned for reuse.
    With ``stats`` (test data) the result is clipped to ``CLIP_RANGE``.
    """
    if stats is None:
        lo = m.values.min(axis=0)
        hi = m.values.max(axis=0)
        clip = False
    else:
        lo, hi = (np.asarray(s, dtype=np.float64) for s in stats)
        if lo.shape != (m.m,) or hi.shape != (m.m,):
            raise ValidationError(f"normalization stats must have length M={m.m}")
        clip = True
    span = hi - lo
    span = np.where(span > 0, span, 1.0)
    out = (m.values - lo) / span
    if clip:
        out = np.clip(out, *CLIP_RANGE)
    return MetricMatrix(out, list(m.metric_names), m.labels, list(m.culprits)), (lo, hi)


def make_windows(m: MetricMatrix, w: int = DEFAULT_WINDOW, stride: int = 1) -> WindowBatch:
    """All windows of length ``w`` whose end indices are ``w-1, w-1+stride, ...``.

    ``windows`` is a read-only strided view into ``m.values``.
    """
    if w <= 0 or stride <= 0:
        raise ValidationError("window length and stride must be positive")
    if w > m.n:
        raise ValidationError(f"window length {w} exceeds series length {m.n}")
    view = np.lib.stride_tricks.sliding_window_view(m.values, w, axis=0)
    windows = view[::stride]
    end_index = np.arange(w - 1, m.n, stride)
    if m.labels is None:
        return WindowBatch(windows, np.zeros(len(end_index), dtype=np.int8), end_index)
    y = m.labels[end_index].astype(np.int8)
    touched = sliding_window_max(m.labels, w)[::stride]
    return WindowBatch(windows, y, end_index, touched)


def sliding_window_max(labels: np.ndarray, w: int) -> np.ndarray:
    """``out[s] = max(labels[s : s + w])`` for binary labels."""
    c = np.concatenate(([0], np.cumsum(np.asarray(labels, dtype=np.int64))))
    return (c[w:] - c[:-w] > 0).astype(np.int8)


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class Fault:
    start: int
    end: int
    kind: str
    targets: tuple[int, ...]


@dataclass
class SynthConfig:
    M: int = 8
    N: int = 20000
    seed: int = 0
    # (period, amplitude) per metric; ignored for metrics driven by a coupling
    base_pattern: list[tuple[float, float]] = field(default_factory=list)
    # (i, j, lag, gain): metric j follows gain * metric i delayed by lag
    coupling: list[tuple[int, int, int, float]] = field(default_factory=list)
    noise_std: float = 0.05
    faults: list[Fault] = field(default_factory=list)
    spike_sigma: float = 10.0

    def validate(self) -> None:
        if self.M <= 0 or self.N <= 0:
            raise ValidationError("M and N must be positive")
        if len(self.base_pattern) != self.M:
            raise ValidationError(f"base_pattern needs {self.M} (period, amplitude) entries")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        if self.spike_sigma < 5:
            raise ValidationError("spike_sigma must be >= 5")
        parents: dict[int, int] = {}
        for i, j, lag, gain in self.coupling:
            if not (0 <= i < self.M and 0 <= j < self.M) or i == j:
                raise ValidationError(f"bad coupling ({i}, {j})")
            if lag < 0:
                raise ValidationError("coupling lag must be non-negative")
            if j in parents:
                raise ValidationError(f"metric {j} has more than one coupling parent")
            parents[j] = i
        _coupling_order(self.M, parents)
        spans = sorted((f.start, f.end) for f in self.faults)
        for f in self.faults:
            if not 0 <= f.start <= f.end < self.N:
                raise ValidationError(f"fault [{f.start}, {f.end}] outside [0, {self.N})")
            if f.kind not in ("spike", "correlation_break"):
                raise ValidationError(f"unknown fault kind {f.kind!r}")
            if not f.targets or any(not 0 <= t < self.M for t in f.targets):
                raise ValidationError(f"bad fault targets {f.targets}")
        for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
            if a1 <= b0:
                raise ValidationError(f"fault segments [{a0}, {b0}] and [{a1}, {b1}] overlap")


def _coupling_order(m: int, parents: dict[int, int]) -> list[int]:
    order: list[int] = []
    state = [0] * m  # 0 new, 1 visiting, 2 done

    def visit(j: int) -> None:
        if state[j] == 2:
            return
        if state[j] == 1:
            raise ValidationError("coupling graph contains a cycle")
        state[j] = 1
        if j in parents:
            visit(parents[j])
        state[j] = 2
        order.append(j)

    for j in range(m):
        visit(j)
    return order


def default_synth_config(
    M: int = 8,
    N: int = 20000,
    seed: int = 0,
    anomaly_ratio: float = 0.05,
    segment_length: int = 20,
    guard: int = SYNTH_GUARD,
    split: float = 0.5,
) -> SynthConfig:
    """About a quarter of the metrics are sine roots sharing one period; every other metric follows a root.

    Faults alternate spike / correlation_break, are spread evenly over both
    halves of the series, and stay ``guard`` points clear of the series start
    and of the train/test split so every fault is fully scored.
    """
    rng = np.random.default_rng(seed)
    n_roots = max(1, round(M / 4))
    # one shared seasonal period (a "day"), per-metric amplitude; phases are drawn at generation
    period = round(float(rng.uniform(80.0, 120.0)), 3)
    pattern = [(period, round(float(rng.uniform(0.6, 1.4)), 3)) for _ in range(M)]
    coupling = []
    for j in range(n_roots, M):
        i = (j - n_roots) % n_roots
        coupling.append((i, j, int(rng.integers(1, 6)), round(float(rng.uniform(0.7, 1.3)), 3)))
    followers = [j for _, j, _, _ in coupling]

    n_faults = max(2, int(round(anomaly_ratio * N / segment_length)))
    cut = int(N * split)
    regions = [(guard, cut - guard), (cut + guard, N - guard)]
    per_region = [n_faults // 2, n_faults - n_faults // 2]
    faults: list[Fault] = []
    k = 0
    for (lo, hi), count in zip(regions, per_region):
        if count == 0 or hi - lo < count * segment_length:
            continue
        slot = (hi - lo) / count
        for s in range(count):
            slack = max(0, int(slot) - segment_length - 1)
            start = lo + int(s * slot) + int(rng.integers(0, slack + 1))
            if k % 2 == 0 or not followers:
                kind, target = "spike", int(rng.integers(0, M))
            else:
                kind, target = "correlation_break", int(followers[int(rng.integers(0, len(followers)))])
            faults.append(Fault(start, start + segment_length - 1, kind, (target,)))
            k += 1
    return SynthConfig(M=M, N=N, seed=seed, base_pattern=pattern, coupling=coupling, faults=faults)


def _independent_like(reference: np.ndarray, parent: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth series with the mean/std of ``reference`` and ~zero correlation with ``parent``."""
    n = len(reference)
    t = np.arange(n)
    p = parent - parent.mean()
    pn = float(p @ p)
    target_std = float(reference.std())
    if target_std == 0.0:
        target_std = 1.0
    for _ in range(64):
        period = rng.uniform(max(4.0, n / 3.0), max(8.0, 2.0 * n))
        r = np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
        r = r + 0.3 * np.cumsum(rng.normal(size=n)) / np.sqrt(n)
        r = r - r.mean()
        if pn > 0:
            r = r - (r @ p) / pn * p
        if r.std() > 1e-3:
            break
    return reference.mean() + r / r.std() * target_std


def generate_synthetic(cfg: SynthConfig) -> MetricMatrix:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    parents = {j: (i, lag, gain) for i, j, lag, gain in cfg.coupling}
    order = _coupling_order(cfg.M, {j: p[0] for j, p in parents.items()})
    pad = sum(lag for _, _, lag, _ in cfg.coupling)
    total = cfg.N + pad
    t = np.arange(total) - pad
    phases = rng.uniform(0, 2 * np.pi, size=cfg.M)
    noise = rng.normal(0.0, cfg.noise_std, size=(total, cfg.M))
    full = np.zeros((total, cfg.M))
    for j in order:
        if j in parents:
            i, lag, gain = parents[j]
            shifted = np.empty(total)
            shifted[lag:] = full[: total - lag, i]
            shifted[:lag] = full[0, i]
            full[:, j] = gain * shifted + noise[:, j]
        else:
            period, amp = cfg.base_pattern[j]
            full[:, j] = amp * np.sin(2 * np.pi * t / period + phases[j]) + noise[:, j]
    values = full[pad:].copy()
    clean = values.copy()

    labels = np.zeros(cfg.N, dtype=np.int8)
    culprits: list[Culprit] = []
    for f in cfg.faults:
        seg = slice(f.start, f.end + 1)
        for j in f.targets:
            if f.kind == "spike":
                sign = 1.0 if rng.random() < 0.5 else -1.0
                values[seg, j] += sign * cfg.spike_sigma * max(cfg.noise_std, 1e-3)
            else:
                if j in parents:
                    i, lag, _ = parents[j]
                    idx = np.arange(f.start, f.end + 1) - lag
                    parent_seg = np.where(idx >= 0, clean[np.clip(idx, 0, None), i], clean[0, i])
                else:
                    parent_seg = np.zeros(f.end - f.start + 1)
                values[seg, j] = _independent_like(clean[seg, j], parent_seg, rng)
        labels[seg] = 1
        culprits.append((f.start, f.end, frozenset(f.targets)))
    names = [f"metric_{j}" for j in range(cfg.M)]
    return MetricMatrix(values, names, labels, culprits)


def segments_from_labels(labels) -> list[tuple[int, int]]:
    """Inclusive (start, end) bounds of each maximal run of anomalous points."""
    lab = np.asarray(labels, dtype=np.int8)
    d = np.diff(np.concatenate(([0], lab, [0])))
    return list(zip(np.flatnonzero(d == 1).tolist(), (np.flatnonzero(d == -1) - 1).tolist()))

"""The full relational-temporal model, window scoring, and checkpoint archive."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, StateError
from .ingest import DEFAULT_WINDOW
from .lcvae import LCVAE, ScoreNormalizer
from .relgraph import RelationalEncoder
from .temporal import TemporalEncoder, fuse

CHECKPOINT_VERSION = 1
SCORE_BATCH = 512


@dataclass
class ModelConfig:
    n_metrics: int
    window: int = DEFAULT_WINDOW
    attn_hidden: int = 256
    gcn_features: int = 128
    gcn_layers: int = 2
    pool_ratio: float = 0.5
    threshold: float | None = None
    gru_hidden: int = 128
    conv_channels: int = 128
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    embed_dim: int = 128
    latent_dim: int = 10
    vae_hidden: int = 64
    embed_norm: bool = True
    attn_init: str = "kernel"
    attn_temperature: float = 0.4

    def __post_init__(self) -> None:
        self.dilations = tuple(int(d) for d in self.dilations)


class RTModel(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.relational = RelationalEncoder(
            cfg.n_metrics,
            cfg.window,
            cfg.attn_hidden,
            cfg.gcn_features,
            cfg.gcn_layers,
            cfg.pool_ratio,
            cfg.threshold,
            attn_init=cfg.attn_init,
            attn_temperature=cfg.attn_temperature,
        )
        self.temporal = TemporalEncoder(
            cfg.n_metrics, cfg.gru_hidden, cfg.conv_channels, cfg.kernel_size, cfg.dilations
        )
        self.fusion = nn.Linear(self.relational.out_features + self.temporal.out_features, cfg.embed_dim)
        # affine-free: the embedding cannot shrink toward a constant to game its own reconstruction
        self.embed_norm = nn.BatchNorm1d(cfg.embed_dim, affine=False) if cfg.embed_norm else None
        self.vae = LCVAE(cfg.embed_dim, cfg.latent_dim, cfg.vae_hidden)

    def embed(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Windows (B, M, W) -> (embedding (B, E), attention (B, M, M))."""
        r, a = self.relational(x)
        t = self.temporal(x)
        e = fuse(r, t, self.fusion)
        if self.embed_norm is not None:
            e = self.embed_norm(e)
        return e, a

    def raw_score(self, x: torch.Tensor) -> torch.Tensor:
        """Normal-conditioned reconstruction error with the posterior mean (no sampling)."""
        e, _ = self.embed(x)
        y = torch.zeros(e.shape[0], dtype=torch.long)
        return torch.linalg.vector_norm(e - self.vae.reconstruct(e, y), dim=-1)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype


def _batches(windows: np.ndarray, size: int) -> Iterator[np.ndarray]:
    for start in range(0, len(windows), size):
        yield windows[start : start + size]


def to_tensor(windows: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(windows)).to(dtype)


@torch.no_grad()
def raw_scores(model: RTModel, windows: np.ndarray, batch_size: int = SCORE_BATCH) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = [model.raw_score(to_tensor(b, model.dtype)).double().numpy() for b in _batches(windows, batch_size)]
    model.train(was_training)
    return np.concatenate(out) if out else np.empty(0)


@torch.no_grad()
def attention_matrices(model: RTModel, windows: np.ndarray, batch_size: int = SCORE_BATCH) -> np.ndarray:
    out = [
        model.relational.attention(to_tensor(b, model.dtype)).double().numpy() for b in _batches(windows, batch_size)
    ]
    return np.concatenate(out) if out else np.empty((0, model.cfg.n_metrics, model.cfg.n_metrics))


@dataclass
class Detector:
    """A trained model plus everything needed to score new data."""

    model: RTModel
    normalizer: ScoreNormalizer
    norm_stats: tuple[np.ndarray, np.ndarray] | None = None
    attention_normal: np.ndarray | None = None
    metric_names: list[str] = field(default_factory=list)
    # metric mean/std over the normalized training series (localization baseline)
    train_mean: np.ndarray | None = None
    train_std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def scores(self, windows: np.ndarray) -> np.ndarray:
        if not self.normalizer.fitted:
            raise StateError("detector has no fitted score normalizer")
        return self.normalizer.transform(raw_scores(self.model, windows))


def save_checkpoint(det: Detector, path: str | Path) -> None:
    """Write a ``.npz`` archive: ``param/<name>`` arrays plus ``meta`` JSON."""
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in det.model.state_dict().items()}
    for key in ("attention_normal", "train_mean", "train_std"):
        val = getattr(det, key)
        if val is not None:
            arrays[key] = np.asarray(val)
    if det.norm_stats is not None:
        arrays["norm_min"], arrays["norm_max"] = (np.asarray(s) for s in det.norm_stats)
    meta = {
        "version": CHECKPOINT_VERSION,
        "model": asdict(det.model.cfg),
        "dtype": str(det.model.dtype).replace("torch.", ""),
        "normalizer": {"lo": det.normalizer.lo, "hi": det.normalizer.hi},
        "metric_names": list(det.metric_names),
        "extra": det.meta,
    }
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Detector:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
    except Exception as exc:  # corrupt zip, missing key, bad json
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')!r}, expected {CHECKPOINT_VERSION}")
    cfg = ModelConfig(**meta["model"])
    model = RTModel(cfg).to(getattr(torch, meta.get("dtype", "float32")))
    state = {k[len("param/") :]: torch.from_numpy(data[k]) for k in data.files if k.startswith("param/")}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint parameters do not match model: {exc}") from exc
    model.eval()
    norm_stats = (data["norm_min"], data["norm_max"]) if "norm_min" in data.files else None
    get = lambda k: data[k] if k in data.files else None  # noqa: E731
    return Detector(
        model=model,
        normalizer=ScoreNormalizer(meta["normalizer"]["lo"], meta["normalizer"]["hi"]),
        norm_stats=norm_stats,
        attention_normal=get("attention_normal"),
        metric_names=meta.get("metric_names", []),
        train_mean=get("train_mean"),
        train_std=get("train_std"),
        meta=meta.get("extra", {}),
    )

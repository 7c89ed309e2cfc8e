"""Positive-unlabeled training: fit on labeled negatives, pseudo-label the
unlabeled pool by anomaly score, then continue training on everything."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import StateError, ValidationError
from .ingest import WindowBatch
from .lcvae import ANOMALY_CLIP, RECON_WEIGHT, ScoreNormalizer, lcvae_loss
from .model import Detector, ModelConfig, RTModel, raw_scores, to_tensor

log = logging.getLogger(__name__)


EMBEDDING_GRAD = ("none", "full", "anomalous")


@dataclass
class PuConfig:
    beta: float = 0.9
    labeled_negative_fraction: float = 0.1
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    lam: float = RECON_WEIGHT
    anomaly_clip: float = ANOMALY_CLIP
    max_grad_norm: float = 10.0
    embedding_grad: str = "none"
    # None: as many optimizer updates as phase 3 makes over the full training set
    phase1_epochs: int | None = None

    def validate(self) -> None:
        if not 0 < self.beta <= 1:
            raise ValidationError(f"beta must be in (0, 1], got {self.beta}")
        if not 0 < self.labeled_negative_fraction <= 1:
            raise ValidationError("labeled_negative_fraction must be in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValidationError("epochs, batch_size and lr must be positive")
        if self.phase1_epochs is not None and self.phase1_epochs < 0:
            raise ValidationError("phase1_epochs must be >= 0")
        if self.embedding_grad not in EMBEDDING_GRAD:
            raise ValidationError(f"embedding_grad must be one of {EMBEDDING_GRAD}, got {self.embedding_grad!r}")

    def phase1_epoch_count(self, n_labeled: int, n_total: int) -> int:
        if self.phase1_epochs is not None:
            return self.phase1_epochs
        steps = lambda n: -(-n // self.batch_size)  # noqa: E731
        return -(-self.epochs * steps(n_total) // max(steps(n_labeled), 1))


@dataclass
class TrainingReport:
    seed: int
    beta: float
    n_windows: int = 0
    n_labeled: int = 0
    n_unlabeled: int = 0
    pseudo_positive: int = 0
    phase1_losses: list[float] = field(default_factory=list)
    phase3_losses: list[float] = field(default_factory=list)

    @property
    def pseudo_positive_rate(self) -> float:
        return self.pseudo_positive / self.n_unlabeled if self.n_unlabeled else 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["pseudo_positive_rate"] = self.pseudo_positive_rate
        return d

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def split_labeled(train: WindowBatch, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of (labeled negatives, unlabeled pool), both sorted.

    Negatives are drawn from windows with no anomalous point anywhere in
    them (a window labeled 0 at its end can still hold the tail of a fault).
    Without ground truth every window is a candidate.
    """
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    n = len(train)
    if n == 0:
        raise ValidationError("no training windows")
    candidates = np.flatnonzero(train.clean_mask())
    k = int(round(fraction * n))
    k = min(max(k, 1), len(candidates))
    if k == 0:
        raise ValidationError("no negative windows available for labeling")
    rng = np.random.default_rng(seed)
    labeled = np.sort(rng.choice(candidates, size=k, replace=False))
    unlabeled = np.setdiff1d(np.arange(n), labeled)
    if fraction < 1 and len(unlabeled) == 0:
        raise ValidationError("unlabeled pool is empty")
    return labeled, unlabeled


def pseudo_label(scores: np.ndarray, beta: float) -> np.ndarray:
    """1 where the normalized anomaly score exceeds ``beta``."""
    return (np.asarray(scores) > beta).astype(np.int8)


def score_windows(model: RTModel, normalizer: ScoreNormalizer, windows: np.ndarray) -> np.ndarray:
    if not normalizer.fitted:
        raise StateError("model has no fitted score normalizer")
    if len(windows) == 0:
        return np.empty(0)
    return normalizer.transform(raw_scores(model, windows))


def train_epochs(
    model: RTModel,
    windows: np.ndarray,
    y: np.ndarray,
    cfg: PuConfig,
    gen: torch.Generator,
    epochs: int | None = None,
) -> list[float]:
    """Adam over shuffled mini-batches; returns the mean objective per epoch."""
    epochs = cfg.epochs if epochs is None else epochs
    if len(windows) == 0 or epochs == 0:
        return []
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    model.train()
    n = len(windows)
    dtype = model.dtype
    latent = model.cfg.latent_dim
    losses = []
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen).numpy()
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            x = to_tensor(windows[idx], dtype)
            yb = torch.from_numpy(np.asarray(y[idx], dtype=np.int64))
            eps = torch.randn((1, len(idx), latent), generator=gen, dtype=dtype)
            e, _ = model.embed(x)
            if cfg.embedding_grad == "none":
                e = e.detach()
            elif cfg.embedding_grad == "anomalous":
                e = torch.where(yb.unsqueeze(-1) > 0, e, e.detach())
            loss = lcvae_loss(e, yb, model.vae, eps, cfg.lam, cfg.anomaly_clip).mean_objective()
            opt.zero_grad()
            loss.backward()
            if cfg.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.max_grad_norm)
            opt.step()
            total += float(loss.detach()) * len(idx)
        losses.append(total / n)
    model.eval()
    return losses


@dataclass
class PhaseOne:
    """State after training on labeled negatives; reusable across beta values."""

    model: RTModel
    normalizer: ScoreNormalizer
    labeled: np.ndarray
    unlabeled: np.ndarray
    unlabeled_scores: np.ndarray
    gen_state: torch.Tensor
    losses: list[float]


def fit_phase_one(train: WindowBatch, cfg: PuConfig, model_cfg: ModelConfig, dtype=torch.float32) -> PhaseOne:
    cfg.validate()
    torch.manual_seed(cfg.seed)
    model = RTModel(model_cfg).to(dtype)
    gen = torch.Generator().manual_seed(cfg.seed)
    labeled, unlabeled = split_labeled(train, cfg.labeled_negative_fraction, cfg.seed)
    lab_windows = train.windows[labeled]
    epochs = cfg.phase1_epoch_count(len(labeled), len(train))
    losses = train_epochs(model, lab_windows, np.zeros(len(labeled), dtype=np.int8), cfg, gen, epochs)
    normalizer = ScoreNormalizer().fit(raw_scores(model, lab_windows))
    scores = score_windows(model, normalizer, train.windows[unlabeled])
    log.info("phase 1: %d labeled negatives, final loss %.4f", len(labeled), losses[-1] if losses else float("nan"))
    return PhaseOne(model, normalizer, labeled, unlabeled, scores, gen.get_state(), losses)


def fit_phase_three(
    train: WindowBatch,
    phase1: PhaseOne,
    cfg: PuConfig,
    force_negative: bool = False,
) -> tuple[Detector, TrainingReport]:
    """Pseudo-label the unlabeled pool and continue training from phase-1 weights.

    ``force_negative`` treats every unlabeled window as normal (no-PU variant).
    """
    cfg.validate()
    model = copy.deepcopy(phase1.model)
    gen = torch.Generator()
    gen.set_state(phase1.gen_state.clone())
    pseudo = pseudo_label(phase1.unlabeled_scores, cfg.beta)
    if force_negative:
        pseudo = np.zeros_like(pseudo)
    order = np.concatenate([phase1.labeled, phase1.unlabeled])
    y = np.concatenate([np.zeros(len(phase1.labeled), dtype=np.int8), pseudo])
    sort = np.argsort(order, kind="stable")
    order, y = order[sort], y[sort]
    windows = train.windows[order]
    losses = train_epochs(model, windows, y, cfg, gen)
    # min/max over the whole training set; the pseudo-positive tail keeps the upper bound
    # above ordinary normal variation so test scores are rarely clipped
    normalizer = ScoreNormalizer().fit(raw_scores(model, windows))
    report = TrainingReport(
        seed=cfg.seed,
        beta=cfg.beta,
        n_windows=len(train),
        n_labeled=len(phase1.labeled),
        n_unlabeled=len(phase1.unlabeled),
        pseudo_positive=int(pseudo.sum()),
        phase1_losses=list(phase1.losses),
        phase3_losses=losses,
    )
    log.info("phase 3: %d pseudo-positive of %d unlabeled (beta=%.2f)", report.pseudo_positive, len(pseudo), cfg.beta)
    return Detector(model=model, normalizer=normalizer), report


def pu_fit(
    train: WindowBatch,
    cfg: PuConfig,
    model_cfg: ModelConfig,
    force_negative: bool = False,
    dtype=torch.float32,
) -> tuple[Detector, TrainingReport]:
    phase1 = fit_phase_one(train, cfg, model_cfg, dtype)
    return fit_phase_three(train, phase1, cfg, force_negative)

"""Label-conditional VAE over the fused embedding, its signed training
objective, and score normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import StateError, ValidationError

LATENT_DIM = 10
RECON_WEIGHT = 0.5
ANOMALY_CLIP = 5.0
LOGVAR_RANGE = (-10.0, 10.0)
_LOG_2PI = math.log(2 * math.pi)


def one_hot(y: torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
    return torch.nn.functional.one_hot(y.long(), 2).to(dtype)


class LCVAE(nn.Module):
    def __init__(self, embed_dim: int, latent_dim: int = LATENT_DIM, hidden: int = 64) -> None:
        super().__init__()
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.encoder = nn.Sequential(nn.Linear(embed_dim + 2, hidden), nn.ReLU(), nn.Linear(hidden, 2 * latent_dim))
        self.decoder = nn.Sequential(nn.Linear(latent_dim + 2, hidden), nn.ReLU(), nn.Linear(hidden, 2 * embed_dim))

    def encode(self, e: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Posterior mean and standard deviation of z given (e, y)."""
        out = self.encoder(torch.cat([e, one_hot(y, e.dtype)], dim=-1))
        mu, logvar = out.chunk(2, dim=-1)
        return mu, torch.exp(0.5 * logvar.clamp(*LOGVAR_RANGE))

    def decode(self, z: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Reconstruction mean and standard deviation of e given (z, y)."""
        out = self.decoder(torch.cat([z, one_hot(y, z.dtype)], dim=-1))
        mu, logvar = out.chunk(2, dim=-1)
        return mu, torch.exp(0.5 * logvar.clamp(*LOGVAR_RANGE))

    def reconstruct(self, e: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        mu, _ = self.encode(e, y)
        return self.decode(mu, y)[0]


def reparameterize(mu: torch.Tensor, sigma: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    return mu + sigma * eps


def gaussian_kl(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis."""
    var = sigma * sigma
    return 0.5 * (mu * mu + var - 1.0 - torch.log(var)).sum(-1)


def gaussian_log_lik(x: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    var = sigma * sigma
    return -0.5 * (_LOG_2PI + torch.log(var) + (x - mu) ** 2 / var).sum(-1)


@dataclass
class LossBreakdown:
    """Per-window loss terms (tensors of shape (B,))."""

    kl: torch.Tensor
    log_lik: torch.Tensor
    recon: torch.Tensor
    signed_total: torch.Tensor
    objective: torch.Tensor
    lam: float = RECON_WEIGHT

    def mean_objective(self) -> torch.Tensor:
        return self.objective.mean()


def lcvae_loss(
    e: torch.Tensor,
    y: torch.Tensor,
    vae: LCVAE,
    eps: torch.Tensor,
    lam: float = RECON_WEIGHT,
    clip: float | None = ANOMALY_CLIP,
) -> LossBreakdown:
    """Signed objective for a batch of embeddings.

    ``eps`` has shape (S, B, latent) with S >= 1 draws per window.
    ``signed_total = sgn(0.5 - y) * (-kl + log_lik - lam * recon)``; the
    quantity to minimize is ``objective = -signed_total``, floored at
    ``-clip`` for anomalous windows so pushing them away stays bounded.
    """
    if eps.dim() != 3 or eps.shape[0] < 1:
        raise ValidationError("lcvae_loss needs at least one epsilon draw per window")
    mu, sigma = vae.encode(e, y)
    kl = gaussian_kl(mu, sigma)
    z = reparameterize(mu.unsqueeze(0), sigma.unsqueeze(0), eps)
    y_rep = y.unsqueeze(0).expand(eps.shape[0], -1)
    dec_mu, dec_sigma = vae.decode(z, y_rep)
    log_lik = gaussian_log_lik(e.unsqueeze(0), dec_mu, dec_sigma).mean(0)
    e_hat = vae.decode(mu, y)[0]
    recon = torch.linalg.vector_norm(e - e_hat, dim=-1)
    sign = torch.where(y > 0, -1.0, 1.0).to(e.dtype)
    signed_total = sign * (-kl + log_lik - lam * recon)
    objective = -signed_total
    if clip is not None:
        objective = torch.where(y > 0, objective.clamp(min=-clip), objective)
    return LossBreakdown(kl, log_lik, recon, signed_total, objective, lam)


class ScoreNormalizer:
    """Maps raw reconstruction errors to [0, 1] with min/max of a reference set."""

    def __init__(self, lo: float | None = None, hi: float | None = None) -> None:
        self.lo = lo
        self.hi = hi

    @property
    def fitted(self) -> bool:
        return self.lo is not None and self.hi is not None

    def fit(self, raw) -> "ScoreNormalizer":
        raw = np.asarray(raw, dtype=np.float64)
        if raw.size == 0:
            raise ValidationError("cannot fit score normalizer on zero scores")
        self.lo, self.hi = float(raw.min()), float(raw.max())
        return self

    def transform(self, raw) -> np.ndarray:
        if not self.fitted:
            raise StateError("score normalizer is not fitted")
        span = self.hi - self.lo
        if span <= 0:
            span = 1.0
        return np.clip((np.asarray(raw, dtype=np.float64) - self.lo) / span, 0.0, 1.0)

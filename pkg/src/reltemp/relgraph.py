"""Relational embedding: graph attention over metrics, sparsified adjacency,
graph convolution with self-attention pooling, and mean/max readout.

All functions accept arbitrary leading batch dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ValidationError

LEAKY_SLOPE = 0.2


def attention_scores(x: torch.Tensor, w_pair: torch.Tensor, p: torch.Tensor, slope: float = LEAKY_SLOPE) -> torch.Tensor:
    """Row-stochastic M x M attention for windows ``x`` of shape (..., M, W).

    ``w_pair`` is (2W, d); the pair feature ``x_i (+) x_j`` is split into its
    two halves so the (M, M, 2W) concatenation is never materialized.
    """
    if not torch.isfinite(x).all():
        raise ValidationError("attention input contains non-finite values")
    width = x.shape[-1]
    if w_pair.shape[0] != 2 * width:
        raise ValidationError(f"w_pair has {w_pair.shape[0]} rows, expected {2 * width}")
    left = x @ w_pair[:width]
    right = x @ w_pair[width:]
    pair = F.leaky_relu(left.unsqueeze(-2) + right.unsqueeze(-3), slope)
    return torch.softmax(pair @ p, dim=-1)


def binarize_adjacency(a: torch.Tensor, t: float) -> torch.Tensor:
    """0/1 matrix with ones where ``a >= t``; no self-loops are added."""
    return (a >= t).to(a.dtype)


def normalized_adjacency(adj: torch.Tensor) -> torch.Tensor:
    a_tilde = adj + torch.eye(adj.shape[-1], dtype=adj.dtype, device=adj.device)
    d_inv_sqrt = a_tilde.sum(-1).rsqrt()
    return d_inv_sqrt.unsqueeze(-1) * a_tilde * d_inv_sqrt.unsqueeze(-2)


def gcn_layer(h: torch.Tensor, adj: torch.Tensor, theta: torch.Tensor, activation: bool = True) -> torch.Tensor:
    """ReLU(D^-1/2 (A+I) D^-1/2 h theta), D the row degree of A+I."""
    out = normalized_adjacency(adj) @ (h @ theta)
    return torch.relu(out) if activation else out


def pool_size(n: int, k: float) -> int:
    return int(math.floor(k * n + 1e-9))


def sag_pool(h: torch.Tensor, adj: torch.Tensor, k: float, scorer: torch.Tensor):
    """Keep the ``floor(k n)`` nodes with the highest self-attention score.

    Scores come from a one-output graph convolution. Ties go to the lower node
    index; kept indices are returned in ascending order. Kept features are
    gated by tanh(score). Returns ``(h_kept, adj_kept, kept_index)``.
    """
    if not 0 < k <= 1:
        raise ValidationError(f"pooling ratio must be in (0, 1], got {k}")
    n = h.shape[-2]
    keep = pool_size(n, k)
    if keep < 1:
        raise ValidationError(f"pooling ratio {k} keeps no nodes out of {n}")
    z = gcn_layer(h, adj, scorer, activation=False).squeeze(-1)
    order = torch.sort(-z.detach(), dim=-1, stable=True).indices[..., :keep]
    idx = torch.sort(order, dim=-1).values
    z_kept = torch.gather(z, -1, idx)
    h_kept = torch.gather(h, -2, idx.unsqueeze(-1).expand(*idx.shape, h.shape[-1]))
    h_kept = h_kept * torch.tanh(z_kept).unsqueeze(-1)
    rows = torch.gather(adj, -2, idx.unsqueeze(-1).expand(*idx.shape, n))
    adj_kept = torch.gather(rows, -1, idx.unsqueeze(-2).expand(*idx.shape, keep))
    return h_kept, adj_kept, idx


def readout(h: torch.Tensor) -> torch.Tensor:
    """Concatenate the per-feature mean and max over nodes: (..., n, F) -> (..., 2F)."""
    if h.shape[-2] == 0:
        raise ValidationError("readout over zero nodes")
    return torch.cat([h.mean(-2), h.amax(-2)], dim=-1)


@dataclass
class AttentionMatrix:
    a: np.ndarray
    binary: np.ndarray
    threshold_t: float

    @classmethod
    def from_scores(cls, a, t: float) -> "AttentionMatrix":
        a = np.asarray(a, dtype=np.float64)
        return cls(a, (a >= t).astype(np.int8), float(t))

    def to_csv(self, path, names=None) -> None:
        write_attention_csv(self.a, path, names)


def write_attention_csv(a: np.ndarray, path, names=None) -> None:
    a = np.asarray(a, dtype=np.float64)
    with open(path, "w") as fh:
        if names is not None:
            fh.write(",".join(names) + "\n")
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


ATTN_INITS = ("kernel", "xavier")


class RelationalEncoder(nn.Module):
    """Graph attention -> binarize -> [gcn -> sag_pool] x L -> summed readouts."""

    def __init__(
        self,
        n_metrics: int,
        window: int,
        attn_hidden: int = 256,
        features: int = 128,
        layers: int = 2,
        pool_ratio: float = 0.5,
        threshold: float | None = None,
        straight_through: bool = True,
        attn_init: str = "kernel",
        attn_temperature: float = 0.4,
    ) -> None:
        super().__init__()
        if attn_init not in ATTN_INITS:
            raise ConfigError(f"attn_init must be one of {ATTN_INITS}, got {attn_init!r}")
        if attn_init == "kernel" and (attn_hidden % 2 or attn_temperature <= 0):
            raise ConfigError("kernel attention init needs an even attn_hidden and a positive temperature")
        if layers < 1:
            raise ConfigError("need at least one graph layer")
        if not 0 < pool_ratio <= 1:
            raise ConfigError(f"pool_ratio must be in (0, 1], got {pool_ratio}")
        n = n_metrics
        for layer in range(layers):
            n = pool_size(n, pool_ratio)
            if n < 1:
                raise ConfigError(
                    f"pool_ratio {pool_ratio} leaves no nodes at layer {layer + 1} for M={n_metrics}"
                )
        self.n_metrics = n_metrics
        self.window = window
        self.pool_ratio = pool_ratio
        self.threshold = 1.0 / n_metrics if threshold is None else float(threshold)
        self.straight_through = straight_through
        self.attn_init = attn_init
        self.attn_temperature = attn_temperature
        self.out_features = 2 * features

        self.w_pair = nn.Parameter(torch.empty(2 * window, attn_hidden))
        self.p = nn.Parameter(torch.empty(attn_hidden))
        dims = [window] + [features] * layers
        self.thetas = nn.ParameterList(nn.Parameter(torch.empty(dims[i], dims[i + 1])) for i in range(layers))
        self.scorers = nn.ParameterList(nn.Parameter(torch.empty(features, 1)) for _ in range(layers))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        if self.attn_init == "kernel":
            self._kernel_init()
        else:
            nn.init.xavier_uniform_(self.w_pair)
            bound = 1.0 / math.sqrt(self.p.shape[0])
            nn.init.uniform_(self.p, -bound, bound)
        for theta in self.thetas:
            nn.init.xavier_uniform_(theta)
        for s in self.scorers:
            nn.init.xavier_uniform_(s)

    @torch.no_grad()
    def _kernel_init(self) -> None:
        # Hidden units come in mirrored pairs: unit k projects x_i - x_j through filter f_k and
        # unit k + d/2 through -f_k. With every p entry equal to -c, each pair contributes
        # -c * (LeakyReLU(u) + LeakyReLU(-u)) = -0.8 c |u|, so the logit is a negative L1
        # distance between filtered windows and similar metrics attend to each other.
        # Half the filters are zero-mean and ignore level offsets between metrics.
        w, half = self.window, self.p.shape[0] // 2
        filt = torch.randn(w, half, dtype=self.w_pair.dtype) / math.sqrt(w)
        centered = half // 2
        filt[:, :centered] -= filt[:, :centered].mean(dim=0)
        self.w_pair.copy_(torch.cat([torch.cat([filt, -filt], 1), torch.cat([-filt, filt], 1)], 0))
        self.p.fill_(-self.attn_temperature)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        return attention_scores(x, self.w_pair, self.p)

    def adjacency(self, a: torch.Tensor) -> torch.Tensor:
        mask = binarize_adjacency(a.detach(), self.threshold)
        if self.straight_through and a.requires_grad:
            masked = a * mask
            return mask + (masked - masked.detach())
        return mask

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns ``(relational embedding (..., 2F), continuous attention (..., M, M))``."""
        a = self.attention(x)
        adj = self.adjacency(a)
        h = x
        total = None
        for theta, scorer in zip(self.thetas, self.scorers):
            h = gcn_layer(h, adj, theta)
            h, adj, _ = sag_pool(h, adj, self.pool_ratio, scorer)
            r = readout(h)
            total = r if total is None else total + r
        return total, a


def relational_embed(x: torch.Tensor, encoder: RelationalEncoder) -> torch.Tensor:
    return encoder(x)[0]

"""Temporal embedding (GRU + dilated causal convolution) and fusion with the
relational embedding."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError


class DcConvBlock(nn.Module):
    """Dilated causal conv -> batch norm -> ReLU, output length equal to input length."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, dilation: int = 1, norm: bool = True):
        super().__init__()
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size, dilation=dilation)
        self.norm = nn.BatchNorm1d(out_channels, momentum=0.1) if norm else None

    @property
    def left_pad(self) -> int:
        return (self.kernel_size - 1) * self.dilation

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.conv(F.pad(x, (self.left_pad, 0)))
        if self.norm is not None:
            out = self.norm(out)
        return torch.relu(out)


def receptive_field(kernel_size: int, dilations: Sequence[int]) -> int:
    return 1 + (kernel_size - 1) * sum(dilations)


def gru_forward(window: torch.Tensor, gru: nn.GRU) -> torch.Tensor:
    """All hidden states, (..., M, W) -> (..., H, W), starting from h0 = 0."""
    squeeze = window.dim() == 2
    x = window.unsqueeze(0) if squeeze else window
    states, _ = gru(x.transpose(-1, -2))
    states = states.transpose(-1, -2)
    return states.squeeze(0) if squeeze else states


def dc_conv_stack(window: torch.Tensor, blocks: Sequence[DcConvBlock]) -> torch.Tensor:
    squeeze = window.dim() == 2
    h = window.unsqueeze(0) if squeeze else window
    for block in blocks:
        h = block(h)
    return h.squeeze(0) if squeeze else h


class TemporalEncoder(nn.Module):
    def __init__(
        self,
        n_metrics: int,
        hidden: int = 128,
        channels: int = 128,
        kernel_size: int = 3,
        dilations: Sequence[int] = (1, 2, 4),
        norm: bool = True,
    ) -> None:
        super().__init__()
        self.gru = nn.GRU(n_metrics, hidden, batch_first=True)
        widths = [n_metrics] + [channels] * len(dilations)
        self.blocks = nn.ModuleList(
            DcConvBlock(widths[i], widths[i + 1], kernel_size, d, norm) for i, d in enumerate(dilations)
        )
        self.kernel_size = kernel_size
        self.dilations = tuple(dilations)
        self.out_features = hidden + (channels if len(dilations) else n_metrics)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.kernel_size, self.dilations)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return temporal_embed(x, self.gru, self.blocks)


def temporal_embed(window: torch.Tensor, gru: nn.GRU, blocks: Sequence[DcConvBlock]) -> torch.Tensor:
    """Time-averaged GRU states concatenated with time-averaged conv features."""
    g = gru_forward(window, gru).mean(-1)
    c = dc_conv_stack(window, blocks).mean(-1)
    return torch.cat([g, c], dim=-1)


def fuse(relational: torch.Tensor, temporal: torch.Tensor, fusion: nn.Linear) -> torch.Tensor:
    width = relational.shape[-1] + temporal.shape[-1]
    if width != fusion.in_features:
        raise ConfigError(f"fusion layer expects {fusion.in_features} inputs, got {width}")
    return fusion(torch.cat([relational, temporal], dim=-1))

"""Flat ``key = value`` run configuration with typed validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .ingest import DEFAULT_TRAIN_STRIDE, DEFAULT_WINDOW, SYNTH_GUARD, SynthConfig, default_synth_config
from .localize import METHODS
from .pipeline import TrainSetup
from .pulearn import EMBEDDING_GRAD, PuConfig
from .relgraph import ATTN_INITS


@dataclass
class RunConfig:
    # model
    window: int = DEFAULT_WINDOW
    stride: int = DEFAULT_TRAIN_STRIDE
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
    embed_norm: bool = True
    attn_init: str = "kernel"
    attn_temperature: float = 0.4
    # training
    lam: float = 0.5
    beta: float = 0.9
    labeled_fraction: float = 0.1
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 50
    phase1_epochs: int | None = None
    embedding_grad: str = "none"
    seed: int = 0
    # data
    data_format: str = "csv"
    train_path: str | None = None
    train_labels_path: str | None = None
    test_path: str | None = None
    test_labels_path: str | None = None
    test_culprits_path: str | None = None
    checkpoint: str | None = None
    output_dir: str | None = None
    # detection / localization / sweeps
    n_candidates: int = 100
    method: str = "correlation_change"
    top_k: int = 3
    betas: tuple[float, ...] = (0.6, 0.7, 0.8, 0.9, 1.0)
    # synthesis
    synth_m: int = 8
    synth_n: int = 20000
    synth_seed: int = 0
    synth_anomaly_ratio: float = 0.05
    synth_segment_length: int = 20
    synth_noise_std: float = 0.05
    synth_split: float = 0.5

    def validate(self) -> "RunConfig":
        positive = ["window", "stride", "attn_hidden", "gcn_features", "gcn_layers", "gru_hidden",
                    "conv_channels", "kernel_size", "embed_dim", "latent_dim", "batch_size",
                    "n_candidates", "top_k", "synth_m", "synth_n", "synth_segment_length"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.pool_ratio <= 1:
            raise ConfigError(f"pool_ratio must be in (0, 1], got {self.pool_ratio}")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if any(not 0 < b <= 1 for b in self.betas) or not self.betas:
            raise ConfigError(f"betas must be non-empty and in (0, 1], got {self.betas}")
        if not 0 < self.labeled_fraction <= 1:
            raise ConfigError("labeled_fraction must be in (0, 1]")
        if self.lr <= 0 or self.lam < 0:
            raise ConfigError("lr must be positive and lam non-negative")
        if self.data_format not in ("csv", "smd"):
            raise ConfigError(f"data_format must be csv or smd, got {self.data_format!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if any(d <= 0 for d in self.dilations):
            raise ConfigError("dilations must be positive")
        if self.attn_init not in ATTN_INITS:
            raise ConfigError(f"attn_init must be one of {ATTN_INITS}, got {self.attn_init!r}")
        if self.attn_temperature <= 0:
            raise ConfigError("attn_temperature must be positive")
        if self.embedding_grad not in EMBEDDING_GRAD:
            raise ConfigError(f"embedding_grad must be one of {EMBEDDING_GRAD}, got {self.embedding_grad!r}")
        if self.phase1_epochs is not None and self.phase1_epochs < 0:
            raise ConfigError("phase1_epochs must be >= 0")
        if not 0 < self.synth_anomaly_ratio < 1 or not 0 < self.synth_split < 1:
            raise ConfigError("synth_anomaly_ratio and synth_split must be in (0, 1)")
        return self

    def train_setup(self, beta: float | None = None) -> TrainSetup:
        pu = PuConfig(
            beta=self.beta if beta is None else beta,
            labeled_negative_fraction=self.labeled_fraction,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
            lam=self.lam,
            embedding_grad=self.embedding_grad,
            phase1_epochs=self.phase1_epochs,
        )
        overrides = dict(
            attn_hidden=self.attn_hidden,
            gcn_features=self.gcn_features,
            gcn_layers=self.gcn_layers,
            pool_ratio=self.pool_ratio,
            threshold=self.threshold,
            gru_hidden=self.gru_hidden,
            conv_channels=self.conv_channels,
            kernel_size=self.kernel_size,
            dilations=self.dilations,
            embed_dim=self.embed_dim,
            latent_dim=self.latent_dim,
            embed_norm=self.embed_norm,
            attn_init=self.attn_init,
            attn_temperature=self.attn_temperature,
        )
        return TrainSetup(window=self.window, stride=self.stride, pu=pu, model_overrides=overrides)

    def synth_config(self) -> SynthConfig:
        cfg = default_synth_config(
            M=self.synth_m,
            N=self.synth_n,
            seed=self.synth_seed,
            anomaly_ratio=self.synth_anomaly_ratio,
            segment_length=self.synth_segment_length,
            guard=max(SYNTH_GUARD, self.window),
            split=self.synth_split,
        )
        return dataclasses.replace(cfg, noise_std=self.synth_noise_std)

    def as_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _convert(name: str, raw: str, default: Any, annotation: str) -> Any:
    raw = raw.strip()
    try:
        if raw.lower() in ("none", "null", "") and "None" in annotation:
            return None
        if raw == "":
            raise ValueError("value required")
        if annotation.startswith("tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if annotation.startswith("tuple[float"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if annotation.startswith("bool"):
            if raw.lower() in ("true", "yes", "on", "1"):
                return True
            if raw.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError("expected true or false")
        if annotation.startswith("int"):
            return int(raw)
        if annotation.startswith("float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r} ({exc})") from None


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        f = known[key]
        updates[key] = _convert(key, raw, f.default, str(f.type))
    return dataclasses.replace(cfg, **updates)


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
        base = p.parent
        pairs = parse_config_text(text)
        # relative data paths are resolved against the config file location
        for key in list(pairs):
            if key.endswith("_path") or key in ("checkpoint", "output_dir"):
                val = pairs[key]
                if val and val.lower() not in ("none", "null") and not Path(val).is_absolute():
                    pairs[key] = str(base / val)
        cfg = apply_overrides(cfg, pairs)
    if overrides:
        cfg = apply_overrides(cfg, parse_set(overrides))
    return cfg.validate()

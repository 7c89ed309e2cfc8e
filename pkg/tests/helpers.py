"""Small untrained detectors for unit tests."""

import numpy as np
import torch

from reltemp.ingest import make_windows
from reltemp.lcvae import ScoreNormalizer
from reltemp.model import Detector, ModelConfig, RTModel, raw_scores

TINY = dict(attn_hidden=4, gcn_features=4, gru_hidden=4, conv_channels=4, embed_dim=6, latent_dim=2, vae_hidden=4)


def tiny_detector(matrix, window=8, seed=0, **overrides) -> Detector:
    torch.manual_seed(seed)
    cfg = ModelConfig(n_metrics=matrix.m, window=window, **(TINY | overrides))
    model = RTModel(cfg).eval()
    windows = make_windows(matrix, window, 1).windows
    norm = ScoreNormalizer().fit(raw_scores(model, windows))
    return Detector(model=model, normalizer=norm, metric_names=list(matrix.metric_names), meta={"window": window})

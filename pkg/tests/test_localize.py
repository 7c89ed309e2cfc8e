import json

import numpy as np
import pytest
import torch

from reltemp.errors import ValidationError
from reltemp.ingest import Fault, SynthConfig, generate_synthetic, make_windows
from reltemp.lcvae import ScoreNormalizer
from reltemp.localize import (
    LocalizationReport,
    correlation_change,
    correlation_score,
    hit_at_k,
    mean_attention,
    rank_descending,
    rank_metrics,
    write_reports,
    zscore_deviation,
)
from reltemp.model import Detector, RTModel, attention_matrices
from reltemp.pipeline import TrainSetup, finalize, localize_segments, prepare_training, split_series

from . import oracles
from .conftest import small_matrix
from .helpers import tiny_detector


def test_mean_attention_single_window_and_rows():
    m = small_matrix(n=30, m=4)
    det = tiny_detector(m)
    batch = make_windows(m, 8, 1)
    one = mean_attention(det.model, batch.subset([3]))
    assert np.allclose(one, attention_matrices(det.model, batch.windows[3:4])[0])
    avg = mean_attention(det.model, batch)
    assert np.allclose(avg.sum(axis=1), 1.0)
    with pytest.raises(ValidationError):
        mean_attention(det.model, batch.windows[:0])


def test_mean_of_two_hand_matrices():
    a = np.array([[[0.5, 0.5], [0.9, 0.1]], [[0.7, 0.3], [0.5, 0.5]]])
    assert np.allclose(a.mean(0), [[0.6, 0.4], [0.7, 0.3]])


def test_correlation_change_examples(rng):
    a = rng.random((3, 3))
    assert correlation_change(a, a).tolist() == [0.0, 0.0, 0.0]
    delta = correlation_change([[0.5, 0.5], [0.5, 0.5]], [[0.1, 0.9], [0.5, 0.5]])
    assert delta.tolist() == pytest.approx([0.4, 0.0])
    for _ in range(100):
        a_n, a_a = rng.random((4, 4)), rng.random((4, 4))
        got = correlation_change(a_n, a_a)
        assert np.abs(got - oracles.correlation_change(a_n.tolist(), a_a.tolist())).max() < 1e-12
        assert np.array_equal(got, correlation_change(a_a, a_n))


def test_correlation_change_permutation_equivariant(rng):
    a_n, a_a = rng.random((5, 5)), rng.random((5, 5))
    perm = rng.permutation(5)
    assert np.allclose(correlation_change(a_n[perm][:, perm], a_a[perm][:, perm]), correlation_change(a_n, a_a)[perm])


def test_correlation_change_shape_errors():
    with pytest.raises(ValidationError):
        correlation_change(np.eye(2), np.eye(3))
    with pytest.raises(ValidationError):
        correlation_change(np.ones((2, 3)), np.ones((2, 3)))


def test_rank_ties_go_to_lower_index():
    assert rank_descending(np.zeros(4)).tolist() == [0, 1, 2, 3]
    assert rank_descending(np.array([0.1, 0.5, 0.5, 0.2])).tolist() == [1, 2, 3, 0]


def test_correlation_score_degenerate_case():
    a = np.array([[0.0, 0.6, 0.4], [0.5, 0.0, 0.5], [0.3, 0.7, 0.0]])
    score = correlation_score(a)
    assert score.tolist() == pytest.approx([1.0, 1.0, 1.0])
    assert rank_descending(np.round(score, 12)).tolist() == [0, 1, 2]


def test_zscore_deviation():
    seg = np.array([[1.0, 0.0], [3.0, -4.0]])
    out = zscore_deviation(seg, np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert out.tolist() == [2.0, 4.0]


def test_hit_at_k_examples():
    assert hit_at_k([[2, 0, 1]], [{0}], 1) == 0.0
    assert hit_at_k([[2, 0, 1]], [{0}], 2) == 1.0
    assert hit_at_k([[0, 1, 2], [2, 1, 0]], [{2}, {0}], 3) == 1.0
    assert hit_at_k([[1, 0]], [{0}], 5) == 1.0
    with pytest.raises(ValidationError):
        hit_at_k([], [], 1)
    with pytest.raises(ValidationError):
        hit_at_k([[0]], [], 1)


def test_hit_at_k_monotone_in_k(rng):
    rankings = [rng.permutation(6) for _ in range(20)]
    culprits = [{int(rng.integers(6))} for _ in range(20)]
    rates = [hit_at_k(rankings, culprits, k) for k in range(1, 7)]
    assert rates == sorted(rates) and rates[-1] == 1.0


def test_rank_metrics_validation():
    m = small_matrix(n=30, m=4)
    det = tiny_detector(m)
    batch = make_windows(m, 8, 1)
    with pytest.raises(ValidationError):
        rank_metrics("pagerank", (10, 12))
    with pytest.raises(ValidationError):
        rank_metrics("anomaly_score", (10, 12))
    with pytest.raises(ValidationError):
        rank_metrics("correlation_change", (10, 12), model=det.model, test_windows=batch)
    with pytest.raises(ValidationError):
        rank_metrics("correlation_score", (0, 3), model=det.model, test_windows=batch)


def test_equal_attention_ranks_identity():
    m = small_matrix(n=30, m=4)
    det = tiny_detector(m)
    batch = make_windows(m, 8, 1)
    seg = batch.subset(np.flatnonzero((batch.end_index >= 10) & (batch.end_index <= 14)))
    a_n = mean_attention(det.model, seg)
    r = rank_metrics("correlation_change", (10, 14), model=det.model, attention_normal=a_n, test_windows=batch)
    assert np.allclose(r.delta, 0.0)
    assert r.rankings.tolist() == [0, 1, 2, 3]


def _planted(seed, target):
    cfg = SynthConfig(
        M=4, N=3000, seed=seed, base_pattern=[(100.0, 1.0)] * 4,
        coupling=[(0, 1, 2, 1.0), (0, 2, 4, 0.8), (0, 3, 1, 1.2)],
        faults=[Fault(2400, 2479, "correlation_break", (target,))],
    )
    return generate_synthetic(cfg)


@pytest.mark.parametrize("seed,target", [(0, 1), (1, 2), (2, 3)])
def test_planted_correlation_break_ranked_first(seed, target):
    torch.manual_seed(seed)
    train, test = split_series(_planted(seed, target))
    setup = TrainSetup()
    norm, stats, batch = prepare_training(train, setup)
    model = RTModel(setup.model_config(4)).eval()
    det = finalize(Detector(model, ScoreNormalizer(0.0, 1.0)), norm, stats, batch, setup)
    (report,) = localize_segments(det, test, "correlation_change")
    assert report.culprits == frozenset({target})
    assert int(report.rankings[0]) == target


def test_report_json(tmp_path):
    r = LocalizationReport((3, 7), np.array([0.1, 0.4, 0.2]), np.array([1, 2, 0]), "correlation_change", frozenset({2}))
    assert r.top(2) == [1, 2]
    write_reports([r], tmp_path / "loc.json", names=["a", "b", "c"], method="correlation_change")
    payload = json.loads((tmp_path / "loc.json").read_text())
    seg = payload["segments"][0]
    assert seg["ranked_metrics"] == ["b", "c", "a"]
    assert seg["culprit_overlap_top"] == [2]
    assert payload["method"] == "correlation_change"

import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reltemp.errors import ConfigError, ValidationError
from reltemp.relgraph import (
    AttentionMatrix,
    RelationalEncoder,
    attention_scores,
    binarize_adjacency,
    gcn_layer,
    pool_size,
    readout,
    relational_embed,
    sag_pool,
)

from . import oracles

D = torch.float64


def t(a):
    return torch.tensor(a, dtype=D)


# --- attention --------------------------------------------------------------


def test_attention_matches_loop_oracle(rng):
    worst = 0.0
    for _ in range(120):
        m = int(rng.integers(1, 5))
        w = int(rng.integers(1, 9))
        d = int(rng.integers(1, 6))
        x = rng.normal(size=(m, w))
        w_pair = rng.normal(size=(2 * w, d))
        p = rng.normal(size=d)
        got = attention_scores(t(x), t(w_pair), t(p)).numpy()
        want = np.array(oracles.attention(x.tolist(), w_pair.tolist(), p.tolist()))
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst < 1e-10


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (4, 6), elements=st.floats(-1e3, 1e3)),
    st.integers(0, 2**31 - 1),
)
def test_attention_rows_sum_to_one(x, seed):
    g = np.random.default_rng(seed)
    a = attention_scores(t(x), t(g.normal(size=(12, 5))), t(g.normal(size=5)))
    assert torch.allclose(a.sum(-1), torch.ones(4, dtype=D), atol=1e-6)
    assert (a >= 0).all()


def test_single_metric_attends_to_itself():
    a = attention_scores(t([[0.3, -1.0, 2.0]]), torch.randn(6, 4, dtype=D), torch.randn(4, dtype=D))
    assert a.tolist() == [[1.0]]


def test_identical_metrics_split_attention_evenly():
    row = [0.5, 1.5, -0.2, 0.0]
    a = attention_scores(t([row, row]), torch.randn(8, 3, dtype=D), torch.randn(3, dtype=D))
    assert torch.allclose(a, torch.full((2, 2), 0.5, dtype=D), atol=1e-12)


def test_attention_rejects_non_finite():
    x = t([[1.0, float("nan")], [0.0, 1.0]])
    with pytest.raises(ValidationError):
        attention_scores(x, torch.randn(4, 2, dtype=D), torch.randn(2, dtype=D))


def test_attention_rejects_wrong_pair_width():
    with pytest.raises(ValidationError):
        attention_scores(torch.zeros(2, 3, dtype=D), torch.zeros(5, 2, dtype=D), torch.zeros(2, dtype=D))


def test_attention_batched_equals_per_window(rng):
    x = rng.normal(size=(5, 3, 4))
    w_pair, p = t(rng.normal(size=(8, 6))), t(rng.normal(size=6))
    batched = attention_scores(t(x), w_pair, p)
    for b in range(5):
        assert torch.allclose(batched[b], attention_scores(t(x[b]), w_pair, p), atol=1e-14)


# --- binarize ---------------------------------------------------------------


def test_binarize_threshold_inclusive():
    a = t([[0.6, 0.4], [0.5, 0.5]])
    assert binarize_adjacency(a, 0.5).tolist() == [[1.0, 0.0], [1.0, 1.0]]


def test_binarize_extremes():
    a = t([[0.2, 0.8], [0.9, 0.1]])
    assert binarize_adjacency(a, 0.0).tolist() == [[1.0, 1.0], [1.0, 1.0]]
    assert binarize_adjacency(a, 1.01).sum() == 0


def test_attention_matrix_export(tmp_path):
    am = AttentionMatrix.from_scores([[0.7, 0.3], [0.5, 0.5]], 0.5)
    assert am.binary.tolist() == [[1, 0], [1, 1]]
    am.to_csv(tmp_path / "a.csv", names=["x", "y"])
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "x,y"
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back, am.a)


# --- gcn --------------------------------------------------------------------


def test_gcn_empty_graph_is_dense_layer():
    h = t([[1.0, 2.0], [-3.0, 0.5], [0.0, 1.0]])
    theta = t([[1.0, -1.0], [0.5, 2.0]])
    out = gcn_layer(h, torch.zeros(3, 3, dtype=D), theta)
    assert torch.allclose(out, torch.relu(h @ theta))


def test_gcn_two_connected_nodes_average():
    h = t([[1.0], [3.0]])
    out = gcn_layer(h, t([[0, 1], [1, 0]]), t([[1.0]]))
    assert out.flatten().tolist() == pytest.approx([2.0, 2.0])


def test_gcn_matches_oracle_on_every_small_graph(rng):
    worst = 0.0
    for m in range(1, 5):
        cells = m * m
        for bits in itertools.product((0.0, 1.0), repeat=cells):
            adj = np.array(bits).reshape(m, m)
            h = rng.normal(size=(m, 3))
            theta = rng.normal(size=(3, 2))
            relu = bool(rng.integers(2))
            got = gcn_layer(t(h), t(adj), t(theta), activation=relu).numpy()
            want = np.array(oracles.gcn(h.tolist(), adj.tolist(), theta.tolist(), relu))
            worst = max(worst, float(np.abs(got - want).max()))
    assert worst < 1e-10


# --- pooling and readout ----------------------------------------------------


def _pool_on_scores(z, k):
    """Pool with the scores themselves as a one-column feature and no edges."""
    h = t(z).unsqueeze(-1)
    return sag_pool(h, torch.zeros(len(z), len(z), dtype=D), k, t([[1.0]]))


def test_pool_ties_go_to_lower_index():
    _, _, idx = _pool_on_scores([0.1, 0.9, 0.9, 0.2], 0.5)
    assert idx.tolist() == [1, 2]
    _, _, idx = _pool_on_scores([0.5, 0.5, 0.5, 0.5], 0.5)
    assert idx.tolist() == [0, 1]


def test_pool_keeps_all_at_ratio_one():
    h_kept, adj_kept, idx = _pool_on_scores([0.3, -0.2, 0.1], 1.0)
    assert idx.tolist() == [0, 1, 2]
    assert adj_kept.shape == (3, 3)


def test_pool_gates_with_tanh_and_takes_induced_subgraph():
    h = t([[0.2], [1.0], [-1.0], [0.7]])
    adj = t([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 0], [1, 0, 1, 0]])
    scorer = t([[1.0]])
    z = gcn_layer(h, adj, scorer, activation=False).flatten()
    h_kept, adj_kept, idx = sag_pool(h, adj, 0.5, scorer)
    top = sorted(np.argsort(-z.numpy(), kind="stable")[:2].tolist())
    assert idx.tolist() == top
    assert torch.allclose(h_kept.flatten(), h.flatten()[top] * torch.tanh(z[top]))
    assert adj_kept.tolist() == adj[top][:, top].tolist()


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 12), st.floats(0.01, 1.0))
def test_pool_keeps_floor_k_m(m, k):
    keep = math.floor(k * m + 1e-9)
    h = torch.randn(m, 2, dtype=D)
    adj = (torch.rand(m, m) > 0.5).to(D)
    if keep < 1:
        with pytest.raises(ValidationError):
            sag_pool(h, adj, k, torch.randn(2, 1, dtype=D))
        return
    h_kept, adj_kept, idx = sag_pool(h, adj, k, torch.randn(2, 1, dtype=D))
    assert len(idx) == keep == pool_size(m, k)
    assert h_kept.shape == (keep, 2) and adj_kept.shape == (keep, keep)
    assert idx.tolist() == sorted(set(idx.tolist()))


def test_pool_rejects_bad_ratio():
    with pytest.raises(ValidationError):
        sag_pool(torch.ones(3, 1, dtype=D), torch.zeros(3, 3, dtype=D), 0.0, t([[1.0]]))


def test_readout_examples():
    assert readout(t([[1.0, 2.0]])).tolist() == [1.0, 2.0, 1.0, 2.0]
    assert readout(t([[0.0, 0.0], [2.0, 4.0]])).tolist() == [1.0, 2.0, 2.0, 4.0]


def test_readout_permutation_invariant(rng):
    h = t(rng.normal(size=(5, 3)))
    perm = torch.from_numpy(rng.permutation(5))
    assert torch.allclose(readout(h), readout(h[perm]))


def test_readout_zero_nodes():
    with pytest.raises(ValidationError):
        readout(torch.zeros(0, 3, dtype=D))


# --- encoder ----------------------------------------------------------------


def _encoder(m=4, w=8, **kw):
    kw = {"attn_hidden": 6, "features": 4, **kw}
    return RelationalEncoder(m, w, **kw).to(D)


def test_encoder_output_width_independent_of_m():
    for m in (1, 2, 5, 9):
        enc = _encoder(m=m, layers=1, pool_ratio=1.0)
        assert relational_embed(torch.randn(m, 8, dtype=D), enc).shape == (8,)


def test_single_layer_is_readout_of_pooled_gcn():
    enc = _encoder(layers=1)
    x = torch.randn(4, 8, dtype=D)
    a = enc.attention(x)
    adj = binarize_adjacency(a, 0.25)
    h = gcn_layer(x, adj, enc.thetas[0])
    h, _, _ = sag_pool(h, adj, 0.5, enc.scorers[0])
    assert torch.allclose(relational_embed(x, enc), readout(h))


def test_encoder_threshold_defaults_to_one_over_m():
    assert _encoder(m=5, pool_ratio=1.0).threshold == pytest.approx(0.2)


def test_permuting_metrics_permutes_attention_and_keeps_embedding(rng):
    enc = _encoder(m=4, layers=2, attn_init="xavier")
    checked = 0
    for _ in range(20):
        x = t(rng.normal(size=(4, 8)))
        perm = torch.from_numpy(rng.permutation(4))
        out, a = enc(x)
        out_p, a_p = enc(x[perm])
        assert torch.allclose(a_p, a[perm][:, perm], atol=1e-12)
        # pooling scores must not tie or sit on the binarization threshold
        if (a - enc.threshold).abs().min() < 1e-9:
            continue
        assert torch.allclose(out, out_p, atol=1e-10)
        checked += 1
    assert checked >= 15


def test_encoder_rejects_pool_ratio_that_empties_graph():
    with pytest.raises(ConfigError):
        RelationalEncoder(3, 8, layers=2, pool_ratio=0.4)
    with pytest.raises(ConfigError):
        RelationalEncoder(3, 8, attn_hidden=5)
    with pytest.raises(ConfigError):
        RelationalEncoder(3, 8, attn_init="orthogonal")


def test_kernel_init_logits_are_negative_l1_distance():
    enc = RelationalEncoder(3, 6, attn_hidden=10, features=4, pool_ratio=1.0, attn_temperature=0.4).to(D)
    x = torch.randn(3, 6, dtype=D)
    filt = enc.w_pair[:6, :5]
    c = 0.4
    logits = torch.empty(3, 3, dtype=D)
    for i in range(3):
        for j in range(3):
            logits[i, j] = -0.8 * c * ((x[i] - x[j]) @ filt).abs().sum()
    assert torch.allclose(enc.attention(x), torch.softmax(logits, -1), atol=1e-12)


def test_kernel_init_prefers_similar_metric():
    enc = RelationalEncoder(3, 8, attn_hidden=64, features=4, pool_ratio=1.0).to(D)
    base = torch.sin(torch.arange(8, dtype=D))
    x = torch.stack([base, base + 0.01 * torch.randn(8, dtype=D), torch.randn(8, dtype=D) * 3])
    a = enc.attention(x)
    assert a[0, 1] > a[0, 2]
    assert a[1, 0] > a[1, 2]


def _flat_params(enc):
    return [p for p in enc.parameters()]


def test_gradient_check_against_finite_differences():
    torch.manual_seed(3)
    enc = RelationalEncoder(3, 8, attn_hidden=4, features=4, layers=1, pool_ratio=1.0,
                            straight_through=False, attn_init="xavier").to(D)
    x = torch.randn(3, 8, dtype=D)
    weights = torch.randn(8, dtype=D)

    def loss():
        return (relational_embed(x, enc) * weights).sum()

    enc.zero_grad()
    loss().backward()
    step = 1e-5
    for param in _flat_params(enc):
        grad = param.grad if param.grad is not None else torch.zeros_like(param)
        analytic = grad.detach().clone().flatten()
        numeric = torch.zeros_like(analytic)
        flat = param.data.view(-1)
        for i in range(flat.numel()):
            old = float(flat[i])
            with torch.no_grad():
                flat[i] = old + step
                up = float(loss())
                flat[i] = old - step
                down = float(loss())
                flat[i] = old
            numeric[i] = (up - down) / (2 * step)
        scale = max(float(analytic.norm()), float(numeric.norm()), 1e-12)
        assert float((analytic - numeric).norm()) / scale < 1e-4 or scale < 1e-9


def test_straight_through_passes_gradient_to_attention():
    enc = _encoder(m=4, attn_init="xavier")
    x = torch.randn(4, 8, dtype=D)
    enc.straight_through = False
    off, _ = enc(x)
    enc.zero_grad()
    off.sum().backward()
    assert enc.w_pair.grad is None
    enc.straight_through = True
    on, _ = enc(x)
    assert torch.equal(on, off)
    enc.zero_grad()
    on.sum().backward()
    assert float(enc.w_pair.grad.abs().sum()) > 0.0

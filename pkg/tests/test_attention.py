"""Attention path tests: numpy oracles for single- and multi-head windows,
window fusion against a materialize-everything reference, locality of
influence, and the attention-mass dilution probe."""

import math

import numpy as np
import pytest
from helpers import assert_grads_close, fd_grad

from winseg.attention import (
    AttentionParams,
    HeadParams,
    dilution_probe,
    global_attention,
    mmta,
    window_attention,
)
from winseg.kernel import Matrix, ShapeError, Tape, matmul, sum_all
from winseg.windowing import WindowConfig, build_layout


def softmax_np(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def attention_oracle(x, params: AttentionParams) -> np.ndarray:
    """Straight numpy transcription: per head softmax(QK^T/sqrt(dk))V,
    heads concatenated, then the output projection."""
    ctxs = []
    for h in params.heads:
        q = x @ h.wq.data
        k = x @ h.wk.data
        v = x @ h.wv.data
        a = softmax_np(q @ k.T / math.sqrt(params.d_k))
        ctxs.append(a @ v)
    return np.concatenate(ctxs, axis=1) @ params.w_out.data


def fused_oracle(x, layout, params) -> np.ndarray:
    """Materialize every window, run the oracle on each, average overlaps."""
    acc = np.zeros((layout.T, params.d_model))
    for lo, hi in layout.spans:
        acc[lo:hi] += attention_oracle(x[lo:hi], params)
    return acc / layout.counts[:, None]


def make_params(d_model, heads, seed=0):
    return AttentionParams.init(d_model, heads, np.random.default_rng(seed))


def test_single_head_window_matches_oracle():
    rng = np.random.default_rng(1)
    params = make_params(6, 1)
    x = rng.standard_normal((9, 6))
    out = window_attention(Matrix(x), params)
    np.testing.assert_allclose(out.data, attention_oracle(x, params), atol=1e-12)


def test_multi_head_window_matches_oracle():
    rng = np.random.default_rng(2)
    params = make_params(8, 4)
    x = rng.standard_normal((7, 8))
    out = window_attention(Matrix(x), params)
    np.testing.assert_allclose(out.data, attention_oracle(x, params), atol=1e-12)


def test_head_order_is_irrelevant_up_to_projection_blocks():
    # permuting heads together with the matching d_k row blocks of w_out
    # must leave the output unchanged
    rng = np.random.default_rng(3)
    params = make_params(8, 2, seed=4)
    x = rng.standard_normal((6, 8))
    base = window_attention(Matrix(x), params)
    d_k = params.d_k
    swapped = AttentionParams(
        heads=[params.heads[1], params.heads[0]],
        w_out=Matrix(np.vstack([params.w_out.data[d_k:], params.w_out.data[:d_k]])),
    )
    out = window_attention(Matrix(x), swapped)
    np.testing.assert_allclose(out.data, base.data, atol=1e-12)


def test_window_attention_rejects_wrong_width():
    params = make_params(6, 2)
    with pytest.raises(ShapeError):
        window_attention(Matrix(np.zeros((4, 5))), params)


def test_mmta_matches_materialized_fusion():
    rng = np.random.default_rng(5)
    params = make_params(8, 2, seed=6)
    layout = build_layout(16, WindowConfig.from_stride(6, 3))
    x = rng.standard_normal((16, 8))
    out = mmta(Matrix(x), layout, params)
    np.testing.assert_allclose(out.data, fused_oracle(x, layout, params), atol=1e-10)


def test_mmta_equals_global_when_window_covers_sequence():
    rng = np.random.default_rng(7)
    params = make_params(6, 3, seed=8)
    x = Matrix(rng.standard_normal((11, 6)))
    layout = build_layout(11, WindowConfig.from_stride(32, 16))
    assert layout.spans == [(0, 11)]
    a = mmta(x, layout, params)
    b = global_attention(x, params)
    np.testing.assert_array_equal(a.data, b.data)


def test_collected_weight_rows_sum_to_one():
    rng = np.random.default_rng(9)
    params = make_params(8, 2, seed=10)
    layout = build_layout(20, WindowConfig.from_stride(8, 4))
    sink: list[Matrix] = []
    mmta(Matrix(rng.standard_normal((20, 8))), layout, params, collect_weights=sink)
    assert len(sink) == layout.n_windows * 2  # one per window per head
    for w in sink:
        np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)


def test_eval_mode_draws_no_randomness():
    rng = np.random.default_rng(11)
    params = make_params(4, 1)
    x = Matrix(rng.standard_normal((8, 4)))
    layout = build_layout(8, WindowConfig.from_stride(4, 2))
    probe = np.random.default_rng(123)
    before = probe.bit_generator.state
    mmta(x, layout, params, dropout_rate=0.0, rng=probe)
    assert probe.bit_generator.state == before


def test_dropout_zeroes_some_weights_in_train_mode():
    rng = np.random.default_rng(12)
    params = make_params(4, 1)
    x = Matrix(rng.standard_normal((10, 4)))
    layout = build_layout(10, WindowConfig.from_stride(5, 5))
    a = mmta(x, layout, params)
    b = mmta(x, layout, params, dropout_rate=0.5, rng=np.random.default_rng(0))
    assert np.abs(a.data - b.data).max() > 1e-6


def test_single_layer_influence_stays_inside_shared_windows():
    # perturbing frame j can only move outputs at frames sharing a window
    # with j; in particular nothing further than w - 1 frames away
    rng = np.random.default_rng(13)
    params = make_params(6, 2, seed=14)
    w, s, T = 4, 2, 14
    layout = build_layout(T, WindowConfig.from_stride(w, s))
    x = rng.standard_normal((T, 6))
    base = mmta(Matrix(x), layout, params).data
    for j in [0, 3, 7, T - 1]:
        bumped = x.copy()
        bumped[j] += 0.5
        out = mmta(Matrix(bumped), layout, params).data
        changed = np.where(np.abs(out - base).max(axis=1) > 1e-12)[0]
        windows_of_j = set(layout.membership[j])
        reachable = {
            t
            for t in range(T)
            if windows_of_j.intersection(layout.membership[t])
        }
        assert set(changed.tolist()) <= reachable
        assert all(abs(t - j) <= w - 1 for t in changed)


def test_mmta_backward_fd():
    rng = np.random.default_rng(15)
    params = make_params(4, 2, seed=16)
    layout = build_layout(9, WindowConfig.from_stride(4, 2))
    h = Matrix(rng.standard_normal((9, 4)))
    proj = Matrix(rng.standard_normal((4, 2)))

    def run(tape=None):
        return sum_all(matmul(mmta(h, layout, params, tape=tape), proj, tape), tape)

    tape = Tape()
    tensors = [h] + [p for _, p in params.named()]
    tape.register(*tensors)
    tape.backward(run(tape))
    for t in tensors:
        assert_grads_close(t.grad, fd_grad(lambda: run().item(), t))


def test_init_rejects_indivisible_width():
    with pytest.raises(ValueError):
        AttentionParams.init(6, 4, np.random.default_rng(0))


# -- dilution probe ---------------------------------------------------------


def test_probe_uniform_scores_give_exact_neighborhood_share():
    mass = dilution_probe(256, 2, trials=3, rng=np.random.default_rng(0), feature_scale=0.0)
    assert mass == 5.0 / 256.0  # dyadic: exact in floats


def test_probe_gaussian_mass_matches_symmetry_prediction():
    # with i.i.d. q/k every key gets expected weight 1/T, so the band of
    # 2*delta+1 keys holds about (2*delta+1)/T of the mass
    rng = np.random.default_rng(1)
    mass = dilution_probe(128, 2, trials=1500, rng=rng, dim=64)
    expect = 5.0 / 128.0
    assert abs(mass - expect) <= 0.2 * expect


def test_probe_mass_halves_when_length_doubles():
    rng = np.random.default_rng(2)
    m1 = dilution_probe(256, 2, trials=1200, rng=rng, dim=32)
    m2 = dilution_probe(512, 2, trials=1200, rng=rng, dim=32)
    assert 0.4 <= m2 / m1 <= 0.6


def test_probe_needs_room_for_the_band():
    with pytest.raises(ValueError):
        dilution_probe(4, 2, trials=1, rng=np.random.default_rng(0))

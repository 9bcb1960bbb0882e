"""Kernel op tests: every forward against an independent oracle, every
backward against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import assert_grads_close, fd_grad

from winseg import kernel
from winseg.kernel import (
    Matrix,
    ShapeError,
    Tape,
    TapeStateError,
    track_allocations,
)


# -- Matrix / Tape mechanics ------------------------------------------------


def test_matrix_rejects_non_2d():
    with pytest.raises(ShapeError):
        Matrix(np.zeros(3))
    with pytest.raises(ShapeError):
        Matrix(np.zeros((2, 2, 2)))


def test_matrix_defaults_to_float64():
    m = Matrix([[1, 2], [3, 4]])
    assert m.dtype == np.float64
    assert m.shape == (2, 2)
    assert m.grad is None


def test_register_creates_zero_grad_slots():
    m = Matrix(np.ones((2, 3)))
    tape = Tape()
    tape.register(m)
    assert m.grad.shape == (2, 3)
    assert not m.grad.any()


def test_tape_replay_without_fresh_forward_raises():
    m = Matrix(np.ones((2, 2)))
    tape = Tape()
    tape.register(m)
    loss = kernel.sum_all(m, tape)
    tape.backward(loss)
    with pytest.raises(TapeStateError):
        tape.backward(loss)


def test_backward_needs_scalar_loss():
    m = Matrix(np.ones((2, 2)))
    tape = Tape()
    with pytest.raises(ShapeError):
        tape.backward(m)


def test_grads_accumulate_across_tapes():
    m = Matrix(np.arange(6.0).reshape(2, 3))
    for _ in range(2):
        tape = Tape()
        tape.register(m)
        tape.backward(kernel.sum_all(m, tape))
    assert np.array_equal(m.grad, np.full((2, 3), 2.0))


def test_reused_operand_sums_both_contributions():
    m = Matrix(np.array([[1.0, 2.0], [3.0, 4.0]]))
    tape = Tape()
    tape.register(m)
    out = kernel.add(m, m, tape)  # d/dm (sum 2m) = 2
    tape.backward(kernel.sum_all(out, tape))
    assert np.array_equal(m.grad, np.full((2, 2), 2.0))


# -- forward oracles --------------------------------------------------------


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(5)
    a = Matrix(rng.standard_normal((4, 6)))
    b = Matrix(rng.standard_normal((6, 3)))
    out = kernel.matmul(a, b)
    want = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(6):
                want[i, j] += a.data[i, k] * b.data[k, j]
    np.testing.assert_allclose(out.data, want, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        kernel.matmul(Matrix(np.zeros((2, 3))), Matrix(np.zeros((4, 2))))


def test_add_row_broadcast():
    a = Matrix(np.zeros((3, 2)))
    b = Matrix(np.array([[1.0, 2.0]]))
    out = kernel.add(a, b)
    np.testing.assert_array_equal(out.data, np.tile([1.0, 2.0], (3, 1)))


def test_add_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        kernel.add(Matrix(np.zeros((3, 2))), Matrix(np.zeros((2, 2))))


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 6),
    cols=st.integers(1, 6),
    seed=st.integers(0, 10_000),
    shift=st.floats(-50, 50),
)
def test_softmax_rows_normalize_and_shift_invariant(rows, cols, seed, shift):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((rows, cols))
    out = kernel.softmax_rows(Matrix(z))
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)
    shifted = kernel.softmax_rows(Matrix(z + shift))
    np.testing.assert_allclose(out.data, shifted.data, atol=1e-12)


def test_softmax_constant_row_is_uniform():
    out = kernel.softmax_rows(Matrix(np.full((2, 5), 3.7)))
    np.testing.assert_allclose(out.data, 1.0 / 5.0, atol=1e-15)


def test_softmax_survives_huge_scores():
    out = kernel.softmax_rows(Matrix(np.array([[1e4, 0.0, -1e4]])))
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data.sum(), 1.0, atol=1e-12)


def test_layer_norm_moments():
    rng = np.random.default_rng(3)
    x = Matrix(rng.standard_normal((5, 8)) * 4 + 2)
    gain = Matrix(np.ones((1, 8)))
    bias = Matrix(np.zeros((1, 8)))
    out = kernel.layer_norm(x, gain, bias, eps=1e-12)
    np.testing.assert_allclose(out.data.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.data.var(axis=1), 1.0, atol=1e-6)


def test_relu_clamps_negatives():
    out = kernel.relu(Matrix(np.array([[-1.0, 0.0, 2.5]])))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.5]])


def test_transpose_round_trip():
    rng = np.random.default_rng(9)
    m = Matrix(rng.standard_normal((3, 5)))
    np.testing.assert_array_equal(kernel.transpose(kernel.transpose(m)).data, m.data)


def test_take_rows_slices_half_open():
    m = Matrix(np.arange(12.0).reshape(4, 3))
    out = kernel.take_rows(m, 1, 3)
    np.testing.assert_array_equal(out.data, m.data[1:3])
    with pytest.raises(ShapeError):
        kernel.take_rows(m, 2, 5)


def test_concat_cols_layout():
    a = Matrix(np.ones((2, 2)))
    b = Matrix(np.zeros((2, 3)))
    out = kernel.concat_cols([a, b])
    assert out.shape == (2, 5)
    np.testing.assert_array_equal(out.data[:, :2], 1.0)
    np.testing.assert_array_equal(out.data[:, 2:], 0.0)


# -- dropout ----------------------------------------------------------------


def test_dropout_rate_zero_is_identity():
    m = Matrix(np.ones((3, 3)))
    out = kernel.dropout(m, 0.0, np.random.default_rng(0))
    assert out is m


def test_dropout_keep_fraction_and_expectation():
    rng = np.random.default_rng(11)
    m = Matrix(np.full((400, 250), 2.0))  # 1e5 entries
    out = kernel.dropout(m, 0.5, rng)
    kept = np.count_nonzero(out.data) / out.data.size
    assert abs(kept - 0.5) < 0.01
    assert abs(out.data.mean() - 2.0) < 0.04  # 2.0 * 0.02
    surviving = out.data[out.data != 0]
    np.testing.assert_allclose(surviving, 4.0)  # inverted scaling 1/(1-rate)


def test_dropout_rejects_rate_one():
    with pytest.raises(ValueError):
        kernel.dropout(Matrix(np.ones((2, 2))), 1.0, np.random.default_rng(0))


# -- backward vs finite differences ----------------------------------------


def test_matmul_backward_fd():
    rng = np.random.default_rng(1)
    a = Matrix(rng.standard_normal((3, 4)))
    b = Matrix(rng.standard_normal((4, 2)))

    def run(tape=None):
        return kernel.sum_all(kernel.matmul(a, b, tape), tape)

    tape = Tape()
    tape.register(a, b)
    tape.backward(run(tape))
    assert_grads_close(a.grad, fd_grad(lambda: run().item(), a))
    assert_grads_close(b.grad, fd_grad(lambda: run().item(), b))


def test_softmax_backward_fd():
    # readout must weight columns: softmax rows sum to 1, so any readout
    # that is constant per row differentiates to zero
    rng = np.random.default_rng(2)
    m = Matrix(rng.standard_normal((4, 5)))
    proj = Matrix(rng.standard_normal((5, 2)))

    def run(tape=None):
        out = kernel.softmax_rows(m, tape)
        return kernel.sum_all(kernel.matmul(out, proj, tape), tape)

    tape = Tape()
    tape.register(m)
    tape.backward(run(tape))
    assert_grads_close(m.grad, fd_grad(lambda: run().item(), m))


def test_layer_norm_backward_fd():
    rng = np.random.default_rng(4)
    m = Matrix(rng.standard_normal((4, 6)))
    gain = Matrix(rng.standard_normal((1, 6)))
    bias = Matrix(rng.standard_normal((1, 6)))
    proj = Matrix(rng.standard_normal((6, 1)))

    def run(tape=None):
        out = kernel.layer_norm(m, gain, bias, 1e-5, tape)
        return kernel.sum_all(kernel.matmul(out, proj, tape), tape)

    tape = Tape()
    tape.register(m, gain, bias)
    tape.backward(run(tape))
    assert_grads_close(m.grad, fd_grad(lambda: run().item(), m))
    assert_grads_close(gain.grad, fd_grad(lambda: run().item(), gain))
    assert_grads_close(bias.grad, fd_grad(lambda: run().item(), bias))


def test_add_broadcast_backward_is_column_sum():
    rng = np.random.default_rng(6)
    a = Matrix(rng.standard_normal((5, 3)))
    b = Matrix(rng.standard_normal((1, 3)))
    proj = Matrix(rng.standard_normal((3, 1)))

    def run(tape=None):
        return kernel.sum_all(kernel.matmul(kernel.add(a, b, tape), proj, tape), tape)

    tape = Tape()
    tape.register(a, b)
    tape.backward(run(tape))
    np.testing.assert_allclose(b.grad, np.tile(proj.data.T, (5, 1)).sum(axis=0, keepdims=True), atol=1e-12)
    assert_grads_close(b.grad, fd_grad(lambda: run().item(), b))


def test_relu_scale_transpose_chain_backward_fd():
    rng = np.random.default_rng(7)
    m = Matrix(rng.standard_normal((3, 4)) + 0.05)  # nudge off the kink

    def run(tape=None):
        out = kernel.scale(kernel.relu(kernel.transpose(m, tape), tape), 2.5, tape)
        return kernel.sum_all(out, tape)

    tape = Tape()
    tape.register(m)
    tape.backward(run(tape))
    assert_grads_close(m.grad, fd_grad(lambda: run().item(), m))


def test_take_rows_overlapping_slices_accumulate():
    rng = np.random.default_rng(8)
    m = Matrix(rng.standard_normal((6, 2)))

    def run(tape=None):
        a = kernel.take_rows(m, 0, 4, tape)
        b = kernel.take_rows(m, 2, 6, tape)
        return kernel.sum_all(kernel.add(a, b, tape), tape)

    tape = Tape()
    tape.register(m)
    tape.backward(run(tape))
    want = np.array([1.0, 1.0, 2.0, 2.0, 1.0, 1.0])[:, None] * np.ones((1, 2))
    np.testing.assert_array_equal(m.grad, want)


def test_concat_cols_backward_fd():
    rng = np.random.default_rng(10)
    a = Matrix(rng.standard_normal((3, 2)))
    b = Matrix(rng.standard_normal((3, 3)))
    proj = Matrix(rng.standard_normal((5, 1)))

    def run(tape=None):
        return kernel.sum_all(kernel.matmul(kernel.concat_cols([a, b], tape), proj, tape), tape)

    tape = Tape()
    tape.register(a, b)
    tape.backward(run(tape))
    assert_grads_close(a.grad, fd_grad(lambda: run().item(), a))
    assert_grads_close(b.grad, fd_grad(lambda: run().item(), b))


def test_dropout_backward_routes_through_mask():
    rng = np.random.default_rng(12)
    m = Matrix(np.ones((50, 40)))
    tape = Tape()
    tape.register(m)
    out = kernel.dropout(m, 0.3, np.random.default_rng(3), tape)
    tape.backward(kernel.sum_all(out, tape))
    kept = out.data != 0
    np.testing.assert_allclose(m.grad[kept], 1.0 / 0.7)
    np.testing.assert_array_equal(m.grad[~kept], 0.0)


# -- allocation tracking ----------------------------------------------------


def test_allocation_counter_counts_matrix_bytes():
    with track_allocations() as counter:
        Matrix(np.zeros((10, 10)))
        Matrix(np.zeros((5, 4)))
    assert counter.bytes == 10 * 10 * 8 + 5 * 4 * 8
    assert counter.arrays == 2


def test_allocation_counter_nested_blocks_are_disjoint():
    with track_allocations() as outer:
        Matrix(np.zeros((2, 2)))
        with track_allocations() as inner:
            Matrix(np.zeros((3, 3)))
        Matrix(np.zeros((2, 2)))
    assert inner.bytes == 9 * 8
    assert outer.bytes == 2 * (4 * 8)


def test_xavier_uniform_bounds():
    rng = np.random.default_rng(0)
    m = kernel.xavier_uniform(50, 30, rng)
    bound = np.sqrt(6.0 / 80.0)
    assert np.abs(m.data).max() <= bound
    assert np.abs(m.data).max() > 0.8 * bound  # actually fills the range

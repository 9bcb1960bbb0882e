"""Dense 2-D kernels with a reverse-mode gradient tape.

Everything upstream (windowing, attention, the encoder, the loss) is wired
from the primitives in this module.  Each op takes an optional ``tape``;
when one is passed, a backward closure is recorded so that ``Tape.backward``
can later push gradients from a scalar loss back to every recorded input.

Gradients accumulate: a Matrix used twice in the forward pass receives the
sum of both contributions, and calling ``backward`` on a second tape adds
into any grads already present (that is what batch accumulation relies on).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64
SUPPORTED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class TapeStateError(RuntimeError):
    """A tape was driven backward without a matching live forward pass."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the pipeline requires finite ones."""


class AllocationCounter:
    """Tally of matrix buffer allocations, for the memory-scaling benchmark.

    Counts bytes handed to new Matrix instances while installed, not process
    RSS: the point is attributable per-call allocation volume, immune to
    allocator reuse and interpreter noise.
    """

    def __init__(self) -> None:
        self.bytes = 0
        self.arrays = 0

    def add(self, nbytes: int) -> None:
        self.bytes += nbytes
        self.arrays += 1


_active_counter: AllocationCounter | None = None


class track_allocations:
    """Context manager installing a fresh AllocationCounter.

    Nesting replaces the outer counter for the inner block; the outer one
    resumes (without the inner block's bytes) on exit.
    """

    def __init__(self) -> None:
        self.counter = AllocationCounter()
        self._saved: AllocationCounter | None = None

    def __enter__(self) -> AllocationCounter:
        global _active_counter
        self._saved = _active_counter
        _active_counter = self.counter
        return self.counter

    def __exit__(self, *exc: object) -> None:
        global _active_counter
        _active_counter = self._saved


class Matrix:
    """A rows x cols real matrix with an optional gradient slot.

    Wraps a C-contiguous 2-D numpy array (float64 unless asked otherwise).
    ``grad`` starts as None and is filled lazily by backward passes.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix needs a 2-D array, got shape {arr.shape}")
        if arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        if _active_counter is not None:
            _active_counter.add(arr.nbytes)

    @classmethod
    def zeros(cls, rows: int, cols: int, dtype=DEFAULT_DTYPE) -> "Matrix":
        return cls(np.zeros((rows, cols), dtype=dtype))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on shape {self.shape}")
        return float(self.data[0, 0])

    def copy(self) -> "Matrix":
        return Matrix(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, dtype={self.data.dtype.name})"


class Tape:
    """Record of backward closures, executed in reverse on ``backward``.

    Ops append one closure each as they run forward.  ``backward`` seeds the
    loss gradient with 1 and replays the closures last-to-first, after making
    sure every registered parameter has a gradient buffer to accumulate into.
    A tape replays once; reuse without a fresh forward pass is a state error.
    """

    def __init__(self) -> None:
        self._ops: list[Callable[[], None]] = []
        self._params: list[Matrix] = []
        self._spent = False

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._ops.append(backward_fn)

    def register(self, *params: Matrix) -> None:
        """Ensure grad slots exist for params; existing grads are kept."""
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            elif p.grad.shape != p.data.shape:
                raise ShapeError(
                    f"grad slot {p.grad.shape} does not match param {p.shape}"
                )
            self._params.append(p)

    def backward(self, loss: Matrix) -> None:
        if self._spent:
            raise TapeStateError(
                "tape already replayed; run a new forward pass on a fresh tape"
            )
        if loss.shape != (1, 1):
            raise ShapeError(f"backward wants a 1x1 loss, got {loss.shape}")
        self._spent = True
        for p in self._params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._ops):
            fn()

    def __len__(self) -> int:
        return len(self._ops)


def _accum(m: Matrix, g: np.ndarray) -> None:
    if m.grad is None:
        m.grad = g.copy()
    else:
        m.grad += g


# ---------------------------------------------------------------------------
# ops


def matmul(a: Matrix, b: Matrix, tape: Tape | None = None) -> Matrix:
    """out = a @ b.  d(a) = g @ b^T, d(b) = a^T @ g."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Matrix(a.data @ b.data)
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            _accum(a, out.grad @ b.data.T)
            _accum(b, a.data.T @ out.grad)

        tape.record(bwd)
    return out


def transpose(m: Matrix, tape: Tape | None = None) -> Matrix:
    out = Matrix(m.data.T.copy())
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            _accum(m, out.grad.T)

        tape.record(bwd)
    return out


def add(a: Matrix, b: Matrix, tape: Tape | None = None) -> Matrix:
    """Elementwise a + b; b may also be a 1 x cols row broadcast down a.

    In the broadcast case b's gradient is the column-wise sum of the
    incoming gradient (each row reused b once).
    """
    broadcast = b.rows == 1 and b.cols == a.cols and a.rows != 1
    if not broadcast and a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    out = Matrix(a.data + b.data)
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            _accum(a, out.grad)
            if broadcast:
                _accum(b, out.grad.sum(axis=0, keepdims=True))
            else:
                _accum(b, out.grad)

        tape.record(bwd)
    return out


def scale(m: Matrix, c: float, tape: Tape | None = None) -> Matrix:
    out = Matrix(m.data * c)
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            _accum(m, out.grad * c)

        tape.record(bwd)
    return out


def relu(m: Matrix, tape: Tape | None = None) -> Matrix:
    mask = m.data > 0
    out = Matrix(np.where(mask, m.data, 0.0))
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            _accum(m, out.grad * mask)

        tape.record(bwd)
    return out


def softmax_rows(m: Matrix, tape: Tape | None = None) -> Matrix:
    """Row-wise softmax, max-subtracted for overflow safety.

    Backward per row: ds = (g - sum(g * y)) * y, with y the softmax output.
    """
    z = m.data - m.data.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    out = Matrix(z)
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            y = out.data
            dot = (out.grad * y).sum(axis=1, keepdims=True)
            _accum(m, (out.grad - dot) * y)

        tape.record(bwd)
    return out


def layer_norm(
    m: Matrix,
    gain: Matrix,
    bias: Matrix,
    eps: float = 1e-5,
    tape: Tape | None = None,
) -> Matrix:
    """Per-row normalization: y = gain * (x - mean) / sqrt(var + eps) + bias.

    Variance is the biased estimate (divide by the width d).  gain and bias
    are 1 x d rows.
    """
    d = m.cols
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be 1x{d}"
        )
    mu = m.data.mean(axis=1, keepdims=True)
    xc = m.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Matrix(xhat * gain.data + bias.data)
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            g = out.grad
            _accum(gain, (g * xhat).sum(axis=0, keepdims=True))
            _accum(bias, g.sum(axis=0, keepdims=True))
            dxhat = g * gain.data
            # dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum(m, inv * (dxhat - m1 - xhat * m2))

        tape.record(bwd)
    return out


def dropout(
    m: Matrix, rate: float, rng: np.random.Generator, tape: Tape | None = None
) -> Matrix:
    """Inverted dropout: zero entries with prob ``rate``, scale by 1/(1-rate).

    rate 0 returns the input unchanged (no mask drawn, nothing recorded).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return m
    keep = rng.random(m.shape) >= rate
    mult = keep.astype(m.dtype) / (1.0 - rate)
    out = Matrix(m.data * mult)
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            _accum(m, out.grad * mult)

        tape.record(bwd)
    return out


def take_rows(m: Matrix, start: int, stop: int, tape: Tape | None = None) -> Matrix:
    """Copy of the half-open row slice [start, stop).

    Backward scatters the slice gradient back into the matching rows, so
    overlapping slices of one matrix accumulate correctly.
    """
    if not (0 <= start < stop <= m.rows):
        raise ShapeError(f"take_rows: [{start}, {stop}) out of range for {m.rows} rows")
    out = Matrix(m.data[start:stop].copy())
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            m.grad[start:stop] += out.grad

        tape.record(bwd)
    return out


def concat_cols(mats: Sequence[Matrix], tape: Tape | None = None) -> Matrix:
    if not mats:
        raise ShapeError("concat_cols: empty input")
    rows = mats[0].rows
    for m in mats:
        if m.rows != rows:
            raise ShapeError("concat_cols: row counts differ")
    out = Matrix(np.concatenate([m.data for m in mats], axis=1))
    if tape is not None:
        offsets = np.cumsum([0] + [m.cols for m in mats])

        def bwd() -> None:
            if out.grad is None:
                return
            for m, lo, hi in zip(mats, offsets[:-1], offsets[1:]):
                _accum(m, out.grad[:, lo:hi])

        tape.record(bwd)
    return out


def sum_all(m: Matrix, tape: Tape | None = None) -> Matrix:
    out = Matrix(np.array([[m.data.sum()]], dtype=m.dtype))
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            _accum(m, np.full_like(m.data, out.grad[0, 0]))

        tape.record(bwd)
    return out


def xavier_uniform(
    rows: int, cols: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE
) -> Matrix:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = math.sqrt(6.0 / (rows + cols))
    return Matrix(rng.uniform(-a, a, size=(rows, cols)).astype(dtype))

"""Scaled dot-product attention, run either inside each window of a layout
(with overlap-resolution averaging to fuse the windows) or over the full
sequence as the global baseline.

Both paths share one parameter set: h heads of bias-free query/key/value
projections d_model -> d_k with d_k = d_model / h, concatenated and passed
through a single output projection.  Softmax normalization happens inside
each window independently, which is the whole point: scores never compete
across more than one window's worth of frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernel
from .kernel import Matrix, ShapeError, Tape
from .windowing import WindowLayout, aggregate_overlaps


@dataclass
class HeadParams:
    wq: Matrix
    wk: Matrix
    wv: Matrix


@dataclass
class AttentionParams:
    heads: list[HeadParams]
    w_out: Matrix  # d_model x d_model

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def d_model(self) -> int:
        return self.w_out.rows

    @property
    def d_k(self) -> int:
        return self.heads[0].wq.cols

    @classmethod
    def init(
        cls, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float64
    ) -> "AttentionParams":
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        d_k = d_model // n_heads
        heads = [
            HeadParams(
                wq=kernel.xavier_uniform(d_model, d_k, rng, dtype),
                wk=kernel.xavier_uniform(d_model, d_k, rng, dtype),
                wv=kernel.xavier_uniform(d_model, d_k, rng, dtype),
            )
            for _ in range(n_heads)
        ]
        return cls(heads=heads, w_out=kernel.xavier_uniform(d_model, d_model, rng, dtype))

    def named(self, prefix: str = "attn"):
        for j, h in enumerate(self.heads):
            yield f"{prefix}.head{j}.wq", h.wq
            yield f"{prefix}.head{j}.wk", h.wk
            yield f"{prefix}.head{j}.wv", h.wv
        yield f"{prefix}.w_out", self.w_out


def _attend(
    h_in: Matrix,
    params: AttentionParams,
    dropout_rate: float,
    rng: np.random.Generator | None,
    tape: Tape | None,
    collect_weights: list[Matrix] | None,
) -> Matrix:
    """Multi-head attention over the rows of h_in (however many there are)."""
    inv_sqrt_dk = 1.0 / math.sqrt(params.d_k)
    contexts = []
    for head in params.heads:
        q = kernel.matmul(h_in, head.wq, tape)
        k = kernel.matmul(h_in, head.wk, tape)
        v = kernel.matmul(h_in, head.wv, tape)
        scores = kernel.scale(kernel.matmul(q, kernel.transpose(k, tape), tape), inv_sqrt_dk, tape)
        weights = kernel.softmax_rows(scores, tape)
        if collect_weights is not None:
            collect_weights.append(weights)
        if dropout_rate > 0.0:
            if rng is None:
                raise ValueError("dropout requires an rng")
            weights = kernel.dropout(weights, dropout_rate, rng, tape)
        contexts.append(kernel.matmul(weights, v, tape))
    merged = contexts[0] if len(contexts) == 1 else kernel.concat_cols(contexts, tape)
    return kernel.matmul(merged, params.w_out, tape)


def window_attention(
    h_window: Matrix,
    params: AttentionParams,
    *,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    tape: Tape | None = None,
    collect_weights: list[Matrix] | None = None,
) -> Matrix:
    """Attention over one window's frames; softmax rows span only the window.

    Output has the window's row count and d_model columns.  Dropout, when
    active, is applied to the post-softmax weights.
    """
    if h_window.cols != params.d_model:
        raise ShapeError(
            f"window_attention: input width {h_window.cols} != d_model {params.d_model}"
        )
    return _attend(h_window, params, dropout_rate, rng, tape, collect_weights)


def mmta(
    h: Matrix,
    layout: WindowLayout,
    params: AttentionParams,
    *,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    tape: Tape | None = None,
    collect_weights: list[Matrix] | None = None,
) -> Matrix:
    """Windowed attention with membership averaging.

    Runs window_attention on each row span of the layout (same parameters
    everywhere) and fuses the per-window outputs with aggregate_overlaps, so
    a frame in m(t) windows gets the mean of its m(t) attention outputs.
    """
    if h.rows != layout.T:
        raise ShapeError(f"mmta: {h.rows} rows vs layout T={layout.T}")
    outputs = []
    for lo, hi in layout.spans:
        h_win = kernel.take_rows(h, lo, hi, tape)
        outputs.append(
            window_attention(
                h_win,
                params,
                dropout_rate=dropout_rate,
                rng=rng,
                tape=tape,
                collect_weights=collect_weights,
            )
        )
    return aggregate_overlaps(layout, outputs, tape)


def global_attention(
    h: Matrix,
    params: AttentionParams,
    *,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    tape: Tape | None = None,
    collect_weights: list[Matrix] | None = None,
) -> Matrix:
    """Full-sequence attention baseline: every row attends to all T rows.

    Deliberately does not route through the window machinery, so equivalence
    checks against mmta with w >= T exercise two independent code paths.
    """
    if h.cols != params.d_model:
        raise ShapeError(
            f"global_attention: input width {h.cols} != d_model {params.d_model}"
        )
    return _attend(h, params, dropout_rate, rng, tape, collect_weights)


def dilution_probe(
    T: int,
    delta: int,
    trials: int,
    rng: np.random.Generator,
    *,
    dim: int = 32,
    feature_scale: float = 1.0,
) -> float:
    """Mean attention mass a center query places on its 2*delta+1 neighbors
    under full-sequence softmax with i.i.d. random queries and keys.

    feature_scale 0 makes scores identically zero, so every weight is
    exactly 1/T and the returned mass is exactly (2*delta+1)/T.  With
    standard-normal features the expected mass is the same by symmetry, and
    shrinks like 1/T: the neighborhood holds a vanishing share of a global
    softmax row as sequences grow.
    """
    if T <= 2 * delta:
        raise ValueError(f"need T > 2*delta, got T={T} delta={delta}")
    center = T // 2
    total = 0.0
    inv_sqrt = 1.0 / math.sqrt(dim)
    for _ in range(trials):
        q = rng.standard_normal(dim) * feature_scale
        keys = rng.standard_normal((T, dim)) * feature_scale
        scores = keys @ q * inv_sqrt
        scores -= scores.max()
        w = np.exp(scores)
        w /= w.sum()
        total += float(w[center - delta : center + delta + 1].sum())
    return total / trials

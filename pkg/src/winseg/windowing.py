"""Window layout over a frame sequence, membership bookkeeping, and the
overlap-resolution average that fuses per-window outputs back to one row
per frame.

A layout for sequence length T places windows of width w every s = w - o
frames.  The final window shrinks to the sequence end rather than padding,
and a window width covering the whole sequence collapses the layout to the
single window [0, T).  Every frame belongs to at least one window, and
frame t's fused output is the plain average of the outputs of the windows
containing t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import Matrix, ShapeError, Tape, _accum


@dataclass(frozen=True)
class WindowConfig:
    """Window width and overlap between consecutive windows; stride derives."""

    window: int
    overlap: int = 0

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if not 0 <= self.overlap < self.window:
            raise ValueError(
                f"overlap must satisfy 0 <= o < w, got o={self.overlap} w={self.window}"
            )

    @property
    def stride(self) -> int:
        return self.window - self.overlap

    @classmethod
    def from_stride(cls, window: int, stride: int) -> "WindowConfig":
        if stride < 1 or stride > window:
            raise ValueError(f"stride must satisfy 1 <= s <= w, got s={stride} w={window}")
        return cls(window=window, overlap=window - stride)


class WindowLayout:
    """Resolved placement of windows over one sequence.

    spans       list of half-open (start, end) frame ranges, one per window
    membership  for each frame t, the ascending list of window indices covering t
    counts      membership sizes m(t), as a float array for direct division
    """

    def __init__(self, T: int, config: WindowConfig, spans: list[tuple[int, int]]):
        self.T = T
        self.config = config
        self.spans = spans
        membership: list[list[int]] = [[] for _ in range(T)]
        for k, (lo, hi) in enumerate(spans):
            for t in range(lo, hi):
                membership[t].append(k)
        self.membership = membership
        self.counts = np.array([len(m) for m in membership], dtype=np.float64)

    @property
    def n_windows(self) -> int:
        return len(self.spans)

    def __repr__(self) -> str:
        return f"WindowLayout(T={self.T}, w={self.config.window}, o={self.config.overlap}, n={self.n_windows})"


def build_layout(T: int, config: WindowConfig) -> WindowLayout:
    """Place windows over a T-frame sequence.

    A width reaching the whole sequence (w >= T) gives the single window
    [0, T); otherwise starts advance by the stride until every frame is
    covered, the last window clamping to T.  Trailing windows made redundant
    by clamping are kept: they still shape the membership counts.
    """
    if T <= 0:
        raise ValueError(f"sequence length must be positive, got T={T}")
    w, s = config.window, config.stride
    if w >= T:
        spans = [(0, T)]
    else:
        n = -(-T // s)  # ceil
        spans = [(k * s, min(k * s + w, T)) for k in range(n)]
    return WindowLayout(T, config, spans)


def aggregate_overlaps(
    layout: WindowLayout, outputs: list[Matrix], tape: Tape | None = None
) -> Matrix:
    """Average per-window outputs into one row per frame.

    outputs[k] must have layout.spans[k]'s row count; all widths must agree.
    Frame t receives (1 / m(t)) * sum over covering windows, accumulated in
    ascending window order so the reduction is deterministic regardless of
    how the outputs were produced.  Backward routes grad[t] / m(t) to each
    covering window's rows.
    """
    if len(outputs) != layout.n_windows:
        raise ShapeError(
            f"aggregate: {len(outputs)} outputs for {layout.n_windows} windows"
        )
    d = outputs[0].cols
    for k, (out_k, (lo, hi)) in enumerate(zip(outputs, layout.spans)):
        if out_k.shape != (hi - lo, d):
            raise ShapeError(
                f"aggregate: window {k} output {out_k.shape}, expected {(hi - lo, d)}"
            )
    acc = np.zeros((layout.T, d), dtype=outputs[0].dtype)
    for out_k, (lo, hi) in zip(outputs, layout.spans):
        acc[lo:hi] += out_k.data
    acc /= layout.counts[:, None]
    fused = Matrix(acc)
    if tape is not None:
        inv = 1.0 / layout.counts[:, None]

        def bwd() -> None:
            if fused.grad is None:
                return
            g = fused.grad * inv
            for out_k, (lo, hi) in zip(outputs, layout.spans):
                _accum(out_k, g[lo:hi])

        tape.record(bwd)
    return fused

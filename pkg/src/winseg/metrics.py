"""Boundary-sensitive segmentation metrics.

Frame accuracy barely moves when a prediction shatters one action into
many; these metrics do.  A label sequence is collapsed to its transcript
(run-length order of classes), transcripts are compared by Levenshtein
distance over whole segments, and two normalizations are reported: Edit
Score, 100 * (1 - L / max(|G|, |P|)), higher better; and the Action Error
Rate L / |G|, lower better, in direct analogy to word error rate.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence as Seq

import numpy as np

from .kernel import ShapeError


@dataclass(frozen=True)
class Segment:
    label: int
    start: int  # inclusive frame
    end: int  # exclusive frame

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Transcript:
    """Maximal constant-label runs tiling [0, n_frames); adjacent runs differ."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        pos = 0
        prev = None
        for s in self.segments:
            if s.start != pos or s.end <= s.start:
                raise ValueError(f"segments must tile the sequence, bad run {s}")
            if prev is not None and s.label == prev:
                raise ValueError(f"adjacent segments share label {s.label}")
            pos = s.end
            prev = s.label
        object.__setattr__(self, "_classes", tuple(s.label for s in self.segments))

    @property
    def n_frames(self) -> int:
        return self.segments[-1].end if self.segments else 0

    @property
    def classes(self) -> tuple[int, ...]:
        return self._classes  # type: ignore[attr-defined]

    def __len__(self) -> int:
        return len(self.segments)


def extract_transcript(labels) -> Transcript:
    """Run-length encode a per-frame label array."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size == 0:
        return Transcript(())
    change = np.flatnonzero(np.diff(labels)) + 1
    bounds = np.concatenate([[0], change, [labels.size]])
    return Transcript(
        tuple(
            Segment(label=int(labels[lo]), start=int(lo), end=int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
        )
    )


def expand_transcript(tr: Transcript) -> np.ndarray:
    """Inverse of extract_transcript: per-frame labels from runs."""
    out = np.empty(tr.n_frames, dtype=np.int64)
    for s in tr.segments:
        out[s.start : s.end] = s.label
    return out


def levenshtein(a: Seq[int], b: Seq[int]) -> int:
    """Edit distance with unit insert/delete/substitute costs.

    Standard two-row dynamic program; operands are segment-class sequences,
    so lengths are segment counts, not frame counts.
    """
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,  # delete from a
                cur[j - 1] + 1,  # insert into a
                prev[j - 1] + (ca != cb),
            )
        prev = cur
    return prev[-1]


def edit_score(gt: Transcript, pred: Transcript) -> float:
    """100 * (1 - L / max(|G|, |P|)); two empty transcripts score 100."""
    if len(gt) == 0 and len(pred) == 0:
        return 100.0
    dist = levenshtein(gt.classes, pred.classes)
    return 100.0 * (1.0 - dist / max(len(gt), len(pred)))


def aer(gt: Transcript, pred: Transcript) -> float:
    """Action error rate L / |G|; undefined (raises) for an empty reference."""
    if len(gt) == 0:
        raise ValueError("AER undefined: reference transcript is empty")
    return levenshtein(gt.classes, pred.classes) / len(gt)


@dataclass
class ClassStats:
    cls: int
    tp: int
    fp: int
    fn: int
    tn: int
    present: bool  # class occurs in gt or pred

    @property
    def sensitivity(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def specificity(self) -> float | None:
        d = self.tn + self.fp
        return self.tn / d if d else None

    @property
    def f1(self) -> float | None:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else None


def frame_stats(gt, pred, n_classes: int) -> list[ClassStats]:
    """One-vs-rest frame counts per class over aligned label arrays.

    Classes absent from both arrays come back with present=False; macro
    aggregation is expected to skip them, and any ratio with a zero
    denominator is None rather than a fake zero.
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape or gt.ndim != 1:
        raise ShapeError(f"label arrays must be aligned 1-D, got {gt.shape} vs {pred.shape}")
    stats = []
    for c in range(n_classes):
        g = gt == c
        p = pred == c
        tp = int(np.sum(g & p))
        fp = int(np.sum(~g & p))
        fn = int(np.sum(g & ~p))
        tn = int(np.sum(~g & ~p))
        stats.append(
            ClassStats(cls=c, tp=tp, fp=fp, fn=fn, tn=tn, present=bool(g.any() or p.any()))
        )
    return stats


def macro_average(stats: list[ClassStats], metric: str) -> float | None:
    """Mean of a per-class metric over classes that are present and defined."""
    vals = [
        v
        for s in stats
        if s.present and (v := getattr(s, metric)) is not None
    ]
    return float(np.mean(vals)) if vals else None


_GLYPHS = string.digits + string.ascii_uppercase + string.ascii_lowercase


def render_timeline(gt: Transcript, pred: Transcript, width: int = 80) -> str:
    """Two aligned text rows (gt over pred), one glyph per column.

    Columns are equal frame buckets; each bucket shows its majority class
    (lowest class wins ties).  Sequences shorter than the width use one
    column per frame.  The class-to-glyph map cycles 0-9A-Za-z.
    """
    if gt.n_frames != pred.n_frames:
        raise ShapeError(
            f"timelines need aligned sequences, got {gt.n_frames} vs {pred.n_frames} frames"
        )
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    T = gt.n_frames
    if T == 0:
        return "gt   |\npred |"
    cols = min(width, T)
    edges = (np.arange(cols + 1) * T) // cols

    def row(tr: Transcript) -> str:
        labels = expand_transcript(tr)
        out = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            counts = np.bincount(labels[lo:hi])
            out.append(_GLYPHS[int(counts.argmax()) % len(_GLYPHS)])
        return "".join(out)

    return f"gt   |{row(gt)}\npred |{row(pred)}"


def sequence_report(gt_labels, pred_labels) -> dict:
    """Boundary metrics for one sequence (frames, raw distance, ES, AER)."""
    gt = extract_transcript(gt_labels)
    pred = extract_transcript(pred_labels)
    dist = levenshtein(gt.classes, pred.classes)
    return {
        "frames": gt.n_frames,
        "gt_segments": len(gt),
        "pred_segments": len(pred),
        "levenshtein": dist,
        "edit_score": edit_score(gt, pred),
        "aer": dist / len(gt) if len(gt) else None,
    }


def split_report(pairs: list[tuple[np.ndarray, np.ndarray]], n_classes: int) -> dict:
    """Aggregate report over (gt, pred) label-array pairs.

    Carries per-sequence rows, both aggregate conventions for ES and AER
    (plain mean over sequences and frame-weighted mean), and pooled
    per-class frame stats with macro averages over defined values.
    """
    if not pairs:
        raise ValueError("empty evaluation split")
    rows = [sequence_report(g, p) for g, p in pairs]
    frames = np.array([r["frames"] for r in rows], dtype=np.float64)
    es = np.array([r["edit_score"] for r in rows])
    aers = np.array([r["aer"] for r in rows], dtype=np.float64)
    all_gt = np.concatenate([np.asarray(g) for g, _ in pairs])
    all_pred = np.concatenate([np.asarray(p) for _, p in pairs])
    stats = frame_stats(all_gt, all_pred, n_classes)
    per_class = [
        {
            "class": s.cls,
            "present": s.present,
            "tp": s.tp,
            "fp": s.fp,
            "fn": s.fn,
            "tn": s.tn,
            "sensitivity": s.sensitivity,
            "specificity": s.specificity,
            "f1": s.f1,
        }
        for s in stats
    ]
    return {
        "sequences": rows,
        "n_sequences": len(rows),
        "frames_total": int(frames.sum()),
        "edit_score_mean": float(es.mean()),
        "edit_score_frame_weighted": float((es * frames).sum() / frames.sum()),
        "aer_mean": float(aers.mean()),
        "aer_frame_weighted": float((aers * frames).sum() / frames.sum()),
        "frame_accuracy": float(np.mean(all_gt == all_pred)),
        "per_class": per_class,
        "macro": {
            "sensitivity": macro_average(stats, "sensitivity"),
            "specificity": macro_average(stats, "specificity"),
            "f1": macro_average(stats, "f1"),
        },
    }

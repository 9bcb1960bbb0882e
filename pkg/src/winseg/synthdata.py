"""Synthetic frame-labeled sequences with controllable boundary sharpness.

Each sequence is a chain of constant-class segments (no immediate repeats)
whose durations are uniform on [seg_min, seg_max]; frame features are the
segment's class mean plus isotropic Gaussian noise.  ``blur`` linearly
cross-fades the means across each internal boundary while the labels still
switch exactly at the boundary frame, so the label edge is crisp but the
evidence for it is smeared: the knob the windowed/global comparison cares
about.

Class means are random directions made exactly orthonormal (QR) and scaled
by ``separation``, giving every class pair the same distance
separation * sqrt(2) and a closed-form per-frame Bayes error to test
against.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

DATA_MAGIC = b"WSEGDATA"
DATA_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    n_classes: int = 5
    feat_dim: int = 16
    count: int = 10
    len_min: int = 300
    len_max: int = 600
    seg_min: int = 10
    seg_max: int = 40
    separation: float = 3.0
    noise: float = 1.0
    blur: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.feat_dim < self.n_classes:
            raise ConfigError(
                f"feat_dim {self.feat_dim} must be >= n_classes {self.n_classes} "
                "for orthogonal class means"
            )
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if not 1 <= self.seg_min <= self.seg_max:
            raise ConfigError(f"need 1 <= seg_min <= seg_max, got {self.seg_min}, {self.seg_max}")
        if not self.seg_min <= self.len_min <= self.len_max:
            raise ConfigError(
                f"need seg_min <= len_min <= len_max, got {self.seg_min}, "
                f"{self.len_min}, {self.len_max}"
            )
        if self.noise < 0 or self.separation < 0 or self.blur < 0:
            raise ConfigError("noise, separation, and blur must be >= 0")


@dataclass
class SequenceSample:
    features: np.ndarray  # T x feat_dim float64
    labels: np.ndarray  # T int64

    @property
    def n_frames(self) -> int:
        return self.labels.size


@dataclass
class Dataset:
    sequences: list[SequenceSample]
    n_classes: int
    feat_dim: int
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sequences)


def class_means(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """n_classes orthonormal rows in feat_dim dims, scaled by separation."""
    g = rng.standard_normal((cfg.feat_dim, cfg.n_classes))
    q, r = np.linalg.qr(g)
    # fix the sign convention so the draw, not the QR variant, decides it
    q = q * np.sign(np.diag(r))
    return q.T * cfg.separation


def _sample_durations(cfg: GeneratorConfig, rng: np.random.Generator) -> list[int]:
    """Segment durations until the length lands in [len_min, len_max].

    Each draw is uniform on [seg_min, min(seg_max, budget)] where budget is
    what remains under len_max; whenever len_max - len_min >= seg_max the
    cap never binds before the total is already feasible, so durations stay
    exactly i.i.d. uniform.
    """
    durations: list[int] = []
    total = 0
    while total < cfg.len_min:
        cap = min(cfg.seg_max, cfg.len_max - total)
        if cap < cfg.seg_min:
            raise ConfigError(
                f"cannot fit a segment of >= {cfg.seg_min} frames into the "
                f"remaining budget {cfg.len_max - total}; widen len bounds"
            )
        durations.append(int(rng.integers(cfg.seg_min, cap + 1)))
        total += durations[-1]
    return durations


def generate(cfg: GeneratorConfig) -> Dataset:
    """Draw the full dataset deterministically from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    means = class_means(cfg, rng)
    sequences = []
    for _ in range(cfg.count):
        durations = _sample_durations(cfg, rng)
        classes = _sample_classes(len(durations), cfg.n_classes, rng)
        labels = np.repeat(np.array(classes, dtype=np.int64), durations)
        T = labels.size
        mean_track = means[labels]
        if cfg.blur > 0:
            mean_track = _blur_boundaries(mean_track, durations, classes, means, cfg.blur)
        noise = rng.standard_normal((T, cfg.feat_dim)) * cfg.noise
        sequences.append(SequenceSample(features=mean_track + noise, labels=labels))
    return Dataset(
        sequences=sequences,
        n_classes=cfg.n_classes,
        feat_dim=cfg.feat_dim,
        provenance={"generator": asdict(cfg)},
    )


def _sample_classes(k: int, n_classes: int, rng: np.random.Generator) -> list[int]:
    """k class ids, uniform, no immediate repeats (successor drawn from the
    other n_classes - 1 ids)."""
    out = [int(rng.integers(n_classes))]
    for _ in range(k - 1):
        step = int(rng.integers(n_classes - 1))
        nxt = step if step < out[-1] else step + 1
        out.append(nxt)
    return out


def _blur_boundaries(
    mean_track: np.ndarray,
    durations: list[int],
    classes: list[int],
    means: np.ndarray,
    blur: int,
) -> np.ndarray:
    """Cross-fade means across each internal boundary b over [b-B, b+B).

    Frame t in the band gets (1 - lam) * left_mean + lam * right_mean with
    lam = (t - b + B + 0.5) / (2B), so lam crosses 1/2 exactly between
    b-1 and b, where the labels switch.  Bands are clipped at the sequence
    ends; when segments are shorter than B, later boundaries overwrite the
    overlap, keeping each frame on one well-defined ramp.
    """
    out = mean_track.copy()
    T = mean_track.shape[0]
    b = 0
    for seg_idx in range(len(durations) - 1):
        b += durations[seg_idx]
        left = means[classes[seg_idx]]
        right = means[classes[seg_idx + 1]]
        lo = max(0, b - blur)
        hi = min(T, b + blur)
        t = np.arange(lo, hi, dtype=np.float64)
        lam = (t - b + blur + 0.5) / (2.0 * blur)
        out[lo:hi] = (1.0 - lam[:, None]) * left + lam[:, None] * right
    return out


# -- container I/O ----------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    """Binary container: magic, u32 version, u32 n_classes, u32 feat_dim,
    u32 n_sequences, then per sequence u32 T, T*feat_dim little-endian
    float64 features row-major, T uint16 labels."""
    with open(path, "wb") as f:
        f.write(DATA_MAGIC)
        f.write(np.array([DATA_VERSION, ds.n_classes, ds.feat_dim, len(ds.sequences)], dtype="<u4").tobytes())
        for seq in ds.sequences:
            if seq.labels.max(initial=0) >= ds.n_classes or seq.labels.min(initial=0) < 0:
                raise ValueError("labels outside [0, n_classes) cannot be saved")
            f.write(np.array([seq.n_frames], dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(seq.features, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(seq.labels, dtype="<u2").tobytes())
    prov = Path(path).with_suffix(Path(path).suffix + ".json")
    with open(prov, "w") as f:
        json.dump(ds.provenance, f, sort_keys=True, indent=1)
        f.write("\n")


def load_dataset(path) -> Dataset:
    """Read the binary container (or a directory of CSV files, see
    load_dataset_csv); truncation and header faults name what was expected."""
    p = Path(path)
    if p.is_dir():
        return load_dataset_csv(p)
    raw = p.read_bytes()
    need = len(DATA_MAGIC) + 16
    if len(raw) < need:
        raise DataFormatError(f"{path}: {len(raw)} bytes, header alone needs {need}")
    if raw[: len(DATA_MAGIC)] != DATA_MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:8]!r}")
    version, n_classes, feat_dim, n_seq = (
        int(v) for v in np.frombuffer(raw, dtype="<u4", count=4, offset=len(DATA_MAGIC))
    )
    if version != DATA_VERSION:
        raise DataFormatError(f"{path}: unsupported container version {version}")
    if n_classes < 2 or feat_dim < 1:
        raise DataFormatError(f"{path}: implausible header ({n_classes} classes, width {feat_dim})")
    off = need
    sequences = []
    for i in range(n_seq):
        if off + 4 > len(raw):
            raise DataFormatError(f"{path}: truncated before sequence {i} length field")
        T = int(np.frombuffer(raw, dtype="<u4", count=1, offset=off)[0])
        off += 4
        if T == 0:
            raise DataFormatError(f"{path}: sequence {i} is empty")
        fbytes = T * feat_dim * 8
        lbytes = T * 2
        if off + fbytes + lbytes > len(raw):
            raise DataFormatError(
                f"{path}: sequence {i} needs {fbytes + lbytes} bytes, have {len(raw) - off}"
            )
        feats = (
            np.frombuffer(raw, dtype="<f8", count=T * feat_dim, offset=off)
            .reshape(T, feat_dim)
            .astype(np.float64)
        )
        off += fbytes
        labels = np.frombuffer(raw, dtype="<u2", count=T, offset=off).astype(np.int64)
        off += lbytes
        if labels.max() >= n_classes:
            raise DataFormatError(
                f"{path}: sequence {i} has label {labels.max()} >= n_classes {n_classes}"
            )
        sequences.append(SequenceSample(features=feats, labels=labels))
    if off != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - off} trailing bytes")
    prov_path = p.with_suffix(p.suffix + ".json")
    provenance = {}
    if prov_path.exists():
        provenance = json.loads(prov_path.read_text())
    return Dataset(sequences, n_classes, feat_dim, provenance)


def save_sequence_csv(seq: SequenceSample, path) -> None:
    """Text interchange: header frame,label,f0..f{d-1}; floats at full
    round-trip precision."""
    d = seq.features.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "label"] + [f"f{j}" for j in range(d)])
        for t in range(seq.n_frames):
            w.writerow(
                [t, int(seq.labels[t])] + [repr(float(v)) for v in seq.features[t]]
            )


def load_sequence_csv(path) -> SequenceSample:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty CSV") from None
        if header[:2] != ["frame", "label"] or len(header) < 3:
            raise DataFormatError(f"{path}: expected header frame,label,f0,..., got {header[:4]}")
        d = len(header) - 2
        feats, labels = [], []
        for i, row in enumerate(reader):
            if len(row) != d + 2:
                raise DataFormatError(f"{path}: row {i} has {len(row)} fields, expected {d + 2}")
            if int(row[0]) != i:
                raise DataFormatError(f"{path}: row {i} is labeled frame {row[0]}")
            labels.append(int(row[1]))
            feats.append([float(v) for v in row[2:]])
    if not labels:
        raise DataFormatError(f"{path}: no frames")
    return SequenceSample(
        features=np.array(feats, dtype=np.float64), labels=np.array(labels, dtype=np.int64)
    )


def save_dataset_csv(ds: Dataset, dirpath) -> None:
    """One seq_{i:05d}.csv per sequence plus a meta.json sidecar."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for i, seq in enumerate(ds.sequences):
        save_sequence_csv(seq, d / f"seq_{i:05d}.csv")
    meta = {"n_classes": ds.n_classes, "feat_dim": ds.feat_dim, "provenance": ds.provenance}
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_dataset_csv(dirpath) -> Dataset:
    d = Path(dirpath)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise DataFormatError(f"{dirpath}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    files = sorted(d.glob("seq_*.csv"))
    if not files:
        raise DataFormatError(f"{dirpath}: no seq_*.csv files")
    sequences = [load_sequence_csv(f) for f in files]
    feat_dim = int(meta["feat_dim"])
    n_classes = int(meta["n_classes"])
    for i, s in enumerate(sequences):
        if s.features.shape[1] != feat_dim:
            raise DataFormatError(
                f"{files[i]}: width {s.features.shape[1]} != meta feat_dim {feat_dim}"
            )
        if s.labels.max() >= n_classes:
            raise DataFormatError(f"{files[i]}: label {s.labels.max()} >= n_classes {n_classes}")
    return Dataset(sequences, n_classes, feat_dim, meta.get("provenance", {}))

"""Frame-labeling encoder: input projection, a stack of attention blocks,
and a linear class head, plus prediction smoothing and checkpoint I/O.

Block wiring (default): the attention output feeds a feed-forward expansion
through a layer norm, and only the feed-forward path gets a residual skip:

    Ht = attention(H)
    H  = Ht + FFN(LayerNorm(Ht))

so zeroing the FFN's second linear leaves exactly the attention output.
``conventional_residual`` switches to the familiar post-norm block
(LN(H + attn), LN(+ FFN)) for comparison runs; it is off by default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernel
from .attention import AttentionParams, HeadParams, global_attention, mmta
from .errors import ConfigError, DataFormatError
from .kernel import Matrix, ShapeError, Tape
from .windowing import WindowConfig, build_layout

CHECKPOINT_MAGIC = b"WSEGCKPT"
CHECKPOINT_VERSION = 1

_DTYPES = {"float64": np.float64, "float32": np.float32}
_WIRE_DTYPES = {"float64": "<f8", "float32": "<f4"}


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    n_classes: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_hidden: int = 0  # 0 means 2 * d_model
    window: int = 32
    stride: int = 8
    dropout: float = 0.2
    attention: str = "mmta"  # or "global"
    positional: bool = False
    conventional_residual: bool = False
    precision: str = "float64"
    ln_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.d_in < 1:
            raise ConfigError(f"d_in must be >= 1, got {self.d_in}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.n_layers < 1:
            raise ConfigError(f"need at least 1 layer, got {self.n_layers}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} must be a positive multiple of n_heads {self.n_heads}"
            )
        if self.ffn_hidden < 0:
            raise ConfigError(f"ffn_hidden must be >= 0, got {self.ffn_hidden}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.attention not in ("mmta", "global"):
            raise ConfigError(f"attention must be 'mmta' or 'global', got {self.attention!r}")
        if self.precision not in _DTYPES:
            raise ConfigError(f"precision must be one of {sorted(_DTYPES)}, got {self.precision!r}")
        if self.attention == "mmta":
            try:
                WindowConfig.from_stride(self.window, self.stride)
            except ValueError as e:
                raise ConfigError(str(e)) from None
        if self.ln_eps <= 0:
            raise ConfigError(f"ln_eps must be positive, got {self.ln_eps}")

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden if self.ffn_hidden > 0 else 2 * self.d_model

    @property
    def dtype(self):
        return _DTYPES[self.precision]


@dataclass
class LayerNormParams:
    gain: Matrix
    bias: Matrix


@dataclass
class FFNParams:
    w1: Matrix
    b1: Matrix
    w2: Matrix
    b2: Matrix


@dataclass
class BlockParams:
    attn: AttentionParams
    ln: LayerNormParams
    ffn: FFNParams
    ln2: LayerNormParams | None = None  # conventional wiring only


def effective_receptive_field(config: EncoderConfig) -> int:
    """Nominal one-sided reach in frames after all layers: w + (L - 1) * s.

    One layer reads at most a window's width; each further layer extends the
    frontier by one stride of fresh windows.
    """
    return config.window + (config.n_layers - 1) * config.stride


def sinusoidal_encoding(T: int, d: int, dtype=np.float64) -> np.ndarray:
    """Fixed sin/cos position table, T x d."""
    pe = np.zeros((T, d), dtype=np.float64)
    pos = np.arange(T, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)
    ang = pos / np.power(10000.0, idx / d)
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : d // 2])
    return pe.astype(dtype)


class EncoderModel:
    """Parameter container plus the forward pass.

    Passing an rng draws Xavier-uniform weights (layer norms start at
    identity, biases at zero); rng=None leaves every tensor zero, which the
    checkpoint loader then overwrites.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator | None = None):
        self.config = config
        dt = config.dtype
        dm, dh = config.d_model, config.ffn_width

        def lin(rows: int, cols: int) -> Matrix:
            if rng is None:
                return Matrix.zeros(rows, cols, dt)
            return kernel.xavier_uniform(rows, cols, rng, dt)

        def ln_params() -> LayerNormParams:
            return LayerNormParams(
                gain=Matrix(np.ones((1, dm), dtype=dt)),
                bias=Matrix.zeros(1, dm, dt),
            )

        self.embed_w = lin(config.d_in, dm)
        self.embed_b = Matrix.zeros(1, dm, dt)
        self.blocks: list[BlockParams] = []
        d_k = dm // config.n_heads
        for _ in range(config.n_layers):
            if rng is not None:
                attn = AttentionParams.init(dm, config.n_heads, rng, dt)
            else:
                attn = AttentionParams(
                    heads=[
                        HeadParams(
                            wq=Matrix.zeros(dm, d_k, dt),
                            wk=Matrix.zeros(dm, d_k, dt),
                            wv=Matrix.zeros(dm, d_k, dt),
                        )
                        for _ in range(config.n_heads)
                    ],
                    w_out=Matrix.zeros(dm, dm, dt),
                )
            block = BlockParams(
                attn=attn,
                ln=ln_params(),
                ffn=FFNParams(
                    w1=lin(dm, dh),
                    b1=Matrix.zeros(1, dh, dt),
                    w2=lin(dh, dm),
                    b2=Matrix.zeros(1, dm, dt),
                ),
                ln2=ln_params() if config.conventional_residual else None,
            )
            self.blocks.append(block)
        self.head_w = lin(dm, config.n_classes)
        self.head_b = Matrix.zeros(1, config.n_classes, dt)

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self):
        yield "embed.w", self.embed_w
        yield "embed.b", self.embed_b
        for i, blk in enumerate(self.blocks):
            yield from blk.attn.named(f"layer{i}.attn")
            yield f"layer{i}.ln.gain", blk.ln.gain
            yield f"layer{i}.ln.bias", blk.ln.bias
            yield f"layer{i}.ffn.w1", blk.ffn.w1
            yield f"layer{i}.ffn.b1", blk.ffn.b1
            yield f"layer{i}.ffn.w2", blk.ffn.w2
            yield f"layer{i}.ffn.b2", blk.ffn.b2
            if blk.ln2 is not None:
                yield f"layer{i}.ln2.gain", blk.ln2.gain
                yield f"layer{i}.ln2.bias", blk.ln2.bias
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad = None

    @staticmethod
    def decay_exempt(name: str) -> bool:
        """Weight decay skips layer-norm gains and biases."""
        return ".ln." in name or ".ln2." in name

    # -- forward ------------------------------------------------------------

    def forward(
        self,
        x,
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
        tape: Tape | None = None,
        collect_weights: list[Matrix] | None = None,
    ) -> Matrix:
        """Compute T x n_classes logits for a T x d_in feature matrix.

        train=True activates attention-weight dropout (needs rng); eval mode
        never draws randomness.  Pass a tape to make the call differentiable.
        """
        cfg = self.config
        if not isinstance(x, Matrix):
            x = Matrix(np.asarray(x, dtype=cfg.dtype))
        if x.cols != cfg.d_in:
            raise ShapeError(f"input width {x.cols}, model expects {cfg.d_in}")
        T = x.rows
        rate = cfg.dropout if train else 0.0
        h = kernel.add(kernel.matmul(x, self.embed_w, tape), self.embed_b, tape)
        if cfg.positional:
            h = kernel.add(h, Matrix(sinusoidal_encoding(T, cfg.d_model, cfg.dtype)), tape)
        layout = (
            build_layout(T, WindowConfig.from_stride(cfg.window, cfg.stride))
            if cfg.attention == "mmta"
            else None
        )
        for blk in self.blocks:
            if layout is not None:
                attended = mmta(
                    h, layout, blk.attn,
                    dropout_rate=rate, rng=rng, tape=tape,
                    collect_weights=collect_weights,
                )
            else:
                attended = global_attention(
                    h, blk.attn,
                    dropout_rate=rate, rng=rng, tape=tape,
                    collect_weights=collect_weights,
                )
            if blk.ln2 is None:
                normed = kernel.layer_norm(attended, blk.ln.gain, blk.ln.bias, cfg.ln_eps, tape)
                expanded = self._ffn(normed, blk.ffn, tape)
                h = kernel.add(attended, expanded, tape)
            else:
                h = kernel.layer_norm(
                    kernel.add(h, attended, tape), blk.ln.gain, blk.ln.bias, cfg.ln_eps, tape
                )
                h = kernel.layer_norm(
                    kernel.add(h, self._ffn(h, blk.ffn, tape), tape),
                    blk.ln2.gain, blk.ln2.bias, cfg.ln_eps, tape,
                )
        return kernel.add(kernel.matmul(h, self.head_w, tape), self.head_b, tape)

    @staticmethod
    def _ffn(h: Matrix, ffn: FFNParams, tape: Tape | None) -> Matrix:
        inner = kernel.relu(kernel.add(kernel.matmul(h, ffn.w1, tape), ffn.b1, tape), tape)
        return kernel.add(kernel.matmul(inner, ffn.w2, tape), ffn.b2, tape)


def predict(logits, smoothing_window: int = 1) -> np.ndarray:
    """Per-frame argmax after a centered boxcar average of the logits.

    The window must be odd (a frame needs equal context on both sides); 1
    disables smoothing.  Edges average over whatever part of the window is
    in range.  Argmax ties resolve to the lowest class index.
    """
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd and >= 1, got {smoothing_window}")
    z = logits.data if isinstance(logits, Matrix) else np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {z.shape}")
    T = z.shape[0]
    if smoothing_window > 1:
        half = smoothing_window // 2
        cum = np.vstack([np.zeros((1, z.shape[1]), dtype=z.dtype), np.cumsum(z, axis=0)])
        lo = np.maximum(np.arange(T) - half, 0)
        hi = np.minimum(np.arange(T) + half + 1, T)
        z = (cum[hi] - cum[lo]) / (hi - lo)[:, None]
    return z.argmax(axis=1).astype(np.int64)


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(model: EncoderModel, path) -> None:
    """Binary layout: magic, u32 version, u64 header length, JSON header
    (config + tensor manifest), then each tensor's raw little-endian bytes
    in manifest order, row-major."""
    wire = _WIRE_DTYPES[model.config.precision]
    names, tensors = zip(*model.named_parameters())
    header = {
        "config": asdict(model.config),
        "tensors": [
            {"name": n, "rows": t.rows, "cols": t.cols, "dtype": model.config.precision}
            for n, t in zip(names, tensors)
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.array([CHECKPOINT_VERSION], dtype="<u4").tobytes())
        f.write(np.array([len(blob)], dtype="<u8").tobytes())
        f.write(blob)
        for t in tensors:
            f.write(np.ascontiguousarray(t.data, dtype=wire).tobytes())


def load_checkpoint(path) -> EncoderModel:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12:
        raise DataFormatError(f"{path}: too short to be a checkpoint ({len(raw)} bytes)")
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:8]!r}")
    off = len(CHECKPOINT_MAGIC)
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=off)[0])
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    off += 4
    hlen = int(np.frombuffer(raw, dtype="<u8", count=1, offset=off)[0])
    off += 8
    if off + hlen > len(raw):
        raise DataFormatError(f"{path}: header claims {hlen} bytes, file has {len(raw) - off}")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
        config = EncoderConfig(**header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise DataFormatError(f"{path}: corrupt header ({e})") from e
    off += hlen
    model = EncoderModel(config, rng=None)
    params = dict(model.named_parameters())
    if [m["name"] for m in manifest] != list(params):
        raise DataFormatError(f"{path}: tensor manifest does not match model layout")
    for m in manifest:
        t = params[m["name"]]
        if (m["rows"], m["cols"]) != t.shape:
            raise DataFormatError(
                f"{path}: tensor {m['name']} is {m['rows']}x{m['cols']}, expected {t.shape}"
            )
        wire = _WIRE_DTYPES[m["dtype"]]
        nbytes = m["rows"] * m["cols"] * np.dtype(wire).itemsize
        if off + nbytes > len(raw):
            raise DataFormatError(
                f"{path}: truncated at tensor {m['name']}: need {nbytes} bytes, have {len(raw) - off}"
            )
        vals = np.frombuffer(raw, dtype=wire, count=m["rows"] * m["cols"], offset=off)
        t.data[...] = vals.reshape(m["rows"], m["cols"])
        off += nbytes
    if off != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - off} trailing bytes after tensors")
    return model

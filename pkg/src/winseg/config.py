"""Flat key=value run configuration.

One schema table drives everything: defaults, type coercion, the file
parser, the mirrored CLI flags, and the resolved-config echo.  Precedence
is defaults < config file < command-line flags, and every command writes
the fully resolved result next to its outputs so a run can be reproduced
from the echo alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class Key:
    name: str
    type: str  # int | float | bool | str
    default: object
    help: str


SCHEMA: dict[str, Key] = {
    k.name: k
    for k in [
        # data generation
        Key("classes", "int", 5, "number of action classes"),
        Key("feat_dim", "int", 16, "feature width of generated frames"),
        Key("train_count", "int", 50, "sequences in the train split"),
        Key("val_count", "int", 10, "sequences in the validation split"),
        Key("test_count", "int", 10, "sequences in the test split"),
        Key("len_min", "int", 300, "minimum sequence length in frames"),
        Key("len_max", "int", 600, "maximum sequence length in frames"),
        Key("seg_min", "int", 10, "minimum segment duration"),
        Key("seg_max", "int", 40, "maximum segment duration"),
        Key("separation", "float", 3.0, "distance scale between class means"),
        Key("noise", "float", 1.0, "per-frame feature noise sigma"),
        Key("blur", "int", 4, "boundary cross-fade half-width in frames"),
        Key("data_seed", "int", 1234, "generator seed"),
        Key("data_dir", "str", "data", "directory holding the dataset splits"),
        # model
        Key("attention", "str", "mmta", "attention kind: mmta or global"),
        Key("layers", "int", 3, "encoder layer count"),
        Key("heads", "int", 4, "attention heads per layer"),
        Key("d_model", "int", 32, "model width"),
        Key("ffn_hidden", "int", 0, "feed-forward hidden width (0: twice d_model)"),
        Key("window", "int", 32, "attention window width in frames"),
        Key("stride", "int", 8, "window start spacing in frames"),
        Key("dropout", "float", 0.2, "attention-weight dropout rate"),
        Key("positional", "bool", False, "add fixed sinusoidal position features"),
        Key("conventional_residual", "bool", False, "use post-norm transformer block wiring"),
        Key("precision", "str", "float64", "parameter dtype: float64 or float32"),
        Key("ln_eps", "float", 1e-5, "layer-norm variance epsilon"),
        # training
        Key("epochs", "int", 25, "training epochs"),
        Key("batch_size", "int", 2, "sequences per gradient step"),
        Key("lr", "float", 1e-3, "initial learning rate"),
        Key("momentum", "float", 0.9, "SGD momentum"),
        Key("weight_decay", "float", 1e-4, "L2 weight decay (layer norms exempt)"),
        Key("clip_norm", "float", 5.0, "global gradient-norm clip"),
        Key("focal_alpha", "float", 0.25, "focal loss scale"),
        Key("focal_gamma", "float", 2.0, "focal loss focusing exponent"),
        Key("patience", "int", 5, "epochs without improvement before lr cut"),
        Key("lr_factor", "float", 0.01, "lr multiplier on plateau"),
        Key("min_delta", "float", 0.0, "improvement margin for the plateau rule"),
        Key("seed", "int", 0, "seed for init, shuffling, and dropout"),
        Key("out_dir", "str", "runs/run", "directory for checkpoints, logs, reports"),
        # evaluation
        Key("checkpoint", "str", "", "checkpoint to evaluate (best.ckpt of out_dir if empty)"),
        Key("split", "str", "test", "dataset split to evaluate"),
        Key("smooth", "int", 1, "odd boxcar width for logit smoothing"),
        Key("oracle", "bool", False, "score ground truth against itself (pipeline check)"),
        Key("timelines", "int", 0, "sequences to render as text timelines"),
        Key("timeline_width", "int", 80, "timeline width in columns"),
        # benchmark
        Key("bench_lengths", "str", "1024,2048,4096,8192", "comma-separated sequence lengths"),
        Key("bench_window", "int", 200, "window width for the benchmark"),
        Key("bench_stride", "int", 10, "window stride for the benchmark"),
        Key("bench_d_model", "int", 64, "model width for the benchmark"),
        Key("bench_heads", "int", 1, "heads for the benchmark"),
        Key("bench_repeats", "int", 3, "timed repeats per point (best is kept)"),
        # sweep
        Key("sweep_cells", "str", "16:4,32:8,64:16", "window:stride pairs, comma-separated"),
    ]
}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def coerce(name: str, raw: str):
    """Parse a raw string for a schema key; bad values name the key."""
    spec = SCHEMA.get(name)
    if spec is None:
        raise ConfigError(f"unknown configuration key: {name}")
    if spec.type == "str":
        return raw
    try:
        if spec.type == "int":
            return int(raw)
        if spec.type == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"key {name} expects {spec.type}, got {raw!r}") from None
    low = raw.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"key {name} expects a boolean, got {raw!r}")


def parse_config_file(path) -> dict[str, str]:
    """key=value lines; blank lines and # comments ignored."""
    raw: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown configuration key: {key}")
        raw[key] = value.strip()
    return raw


def resolve(config_file=None, overrides: dict[str, str] | None = None) -> dict:
    """Typed config dict: defaults, then file values, then explicit flags."""
    cfg = {name: spec.default for name, spec in SCHEMA.items()}
    if config_file is not None:
        for k, v in parse_config_file(config_file).items():
            cfg[k] = coerce(k, v)
    for k, v in (overrides or {}).items():
        cfg[k] = coerce(k, v)
    return cfg


def format_value(name: str, value) -> str:
    if SCHEMA[name].type == "bool":
        return "true" if value else "false"
    return str(value)


def echo_config(cfg: dict, path) -> None:
    """Write the resolved configuration in schema order, reloadable as-is."""
    lines = ["# resolved configuration"]
    lines += [f"{name}={format_value(name, cfg[name])}" for name in SCHEMA]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_cells(raw: str) -> list[tuple[int, int]]:
    """"w:s,w:s" pairs for the sweep grid."""
    cells = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        w, sep, s = part.partition(":")
        try:
            cells.append((int(w), int(s)) if sep else (int(w), int(w)))
        except ValueError:
            raise ConfigError(f"bad sweep cell {part!r}, expected window:stride") from None
    if not cells:
        raise ConfigError("sweep_cells is empty")
    return cells


def parse_lengths(raw: str) -> list[int]:
    try:
        lengths = [int(p) for p in raw.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bench_lengths expects comma-separated ints, got {raw!r}") from None
    if not lengths or any(v < 1 for v in lengths):
        raise ConfigError(f"bench_lengths must be positive ints, got {raw!r}")
    return lengths

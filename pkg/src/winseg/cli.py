"""Command-line front end.

Five subcommands: gen-data, train, eval, bench, sweep.  Every subcommand
accepts --config FILE plus one flag per configuration key (same names), and
writes the fully resolved configuration beside its outputs.  Exit codes:
0 success, 2 configuration fault, 3 I/O or data-format fault, 4 numeric
fault during training or evaluation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .attention import AttentionParams, global_attention, mmta
from .encoder import EncoderConfig, EncoderModel, load_checkpoint, predict
from .errors import ConfigError, DataFormatError
from .kernel import Matrix, NumericError, track_allocations
from .metrics import extract_transcript, render_timeline, split_report
from .synthdata import Dataset, GeneratorConfig, generate, load_dataset, save_dataset
from .training import TrainConfig, train
from .windowing import WindowConfig, build_layout


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="winseg",
        description="windowed temporal attention for frame labeling: data, training, evaluation, benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("gen-data", "generate the synthetic dataset splits"),
        ("train", "train a model on the generated splits"),
        ("eval", "evaluate a checkpoint with boundary metrics"),
        ("bench", "time windowed vs full-sequence attention across lengths"),
        ("sweep", "train and evaluate across window:stride cells"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", default=None, metavar="FILE", help="key=value config file")
        for key, spec in cfgmod.SCHEMA.items():
            p.add_argument(
                f"--{key}",
                dest=f"key_{key}",
                default=None,
                metavar=spec.type.upper(),
                help=f"{spec.help} (default: {cfgmod.format_value(key, spec.default)})",
            )
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    overrides = {
        key: val
        for key in cfgmod.SCHEMA
        if (val := getattr(args, f"key_{key}")) is not None
    }
    return cfgmod.resolve(args.config, overrides)


def _echo(cfg: dict, directory: Path, command: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    cfgmod.echo_config(cfg, directory / f"config_{command.replace('-', '_')}.cfg")


def _encoder_config(cfg: dict, ds: Dataset) -> EncoderConfig:
    return EncoderConfig(
        d_in=ds.feat_dim,
        n_classes=ds.n_classes,
        d_model=cfg["d_model"],
        n_layers=cfg["layers"],
        n_heads=cfg["heads"],
        ffn_hidden=cfg["ffn_hidden"],
        window=cfg["window"],
        stride=cfg["stride"],
        dropout=cfg["dropout"],
        attention=cfg["attention"],
        positional=cfg["positional"],
        conventional_residual=cfg["conventional_residual"],
        precision=cfg["precision"],
        ln_eps=cfg["ln_eps"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
        clip_norm=cfg["clip_norm"],
        focal_alpha=cfg["focal_alpha"],
        focal_gamma=cfg["focal_gamma"],
        patience=cfg["patience"],
        lr_factor=cfg["lr_factor"],
        min_delta=cfg["min_delta"],
        seed=cfg["seed"],
    )


def _split_path(cfg: dict, split: str) -> Path:
    return Path(cfg["data_dir"]) / f"{split}.wsd"


def _load_split(cfg: dict, split: str) -> Dataset:
    path = _split_path(cfg, split)
    if not path.exists():
        raise DataFormatError(f"{path}: dataset split not found; run gen-data first")
    return load_dataset(path)


def _init_rng(seed: int) -> np.random.Generator:
    # child 2 of the run seed; train() itself consumes children 0 and 1
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])


# -- subcommands ------------------------------------------------------------


def cmd_gen_data(cfg: dict) -> int:
    counts = {"train": cfg["train_count"], "val": cfg["val_count"], "test": cfg["test_count"]}
    for split, n in counts.items():
        if n < 1:
            raise ConfigError(f"{split}_count must be >= 1, got {n}")
    gen_cfg = GeneratorConfig(
        n_classes=cfg["classes"],
        feat_dim=cfg["feat_dim"],
        count=sum(counts.values()),
        len_min=cfg["len_min"],
        len_max=cfg["len_max"],
        seg_min=cfg["seg_min"],
        seg_max=cfg["seg_max"],
        separation=cfg["separation"],
        noise=cfg["noise"],
        blur=cfg["blur"],
        seed=cfg["data_seed"],
    )
    full = generate(gen_cfg)
    data_dir = Path(cfg["data_dir"])
    data_dir.mkdir(parents=True, exist_ok=True)
    offset = 0
    for split, n in counts.items():
        part = Dataset(
            sequences=full.sequences[offset : offset + n],
            n_classes=full.n_classes,
            feat_dim=full.feat_dim,
            provenance={**full.provenance, "split": split, "offset": offset},
        )
        offset += n
        save_dataset(part, data_dir / f"{split}.wsd")
        frames = sum(s.n_frames for s in part.sequences)
        print(f"{split}: {len(part)} sequences, {frames} frames -> {data_dir / (split + '.wsd')}")
    _echo(cfg, data_dir, "gen-data")
    return 0


def cmd_train(cfg: dict) -> int:
    train_ds = _load_split(cfg, "train")
    val_ds = _load_split(cfg, "val")
    model = EncoderModel(_encoder_config(cfg, train_ds), rng=_init_rng(cfg["seed"]))
    out_dir = Path(cfg["out_dir"])
    _echo(cfg, out_dir, "train")

    def sink(rec: dict) -> None:
        print(
            f"epoch {rec['epoch']:3d}  train {rec['train_loss']:.6f}  "
            f"val {rec['val_loss']:.6f}  lr {rec['lr']:.2e}  "
            f"grad {rec['grad_norm_mean']:.3f}  {rec['seconds']:.1f}s"
        )

    state, _ = train(model, train_ds, val_ds, _train_config(cfg), out_dir=out_dir, log_sink=sink)
    print(f"best val loss {state.best_val:.6f} at epoch {state.best_epoch}; checkpoints in {out_dir}")
    return 0


def cmd_eval(cfg: dict) -> int:
    ds = _load_split(cfg, cfg["split"])
    out_dir = Path(cfg["out_dir"])
    pairs = []
    if cfg["oracle"]:
        pairs = [(seq.labels, seq.labels.copy()) for seq in ds.sequences]
        source = "oracle"
    else:
        ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out_dir / "best.ckpt"
        if not ckpt.exists():
            raise DataFormatError(f"{ckpt}: checkpoint not found")
        model = load_checkpoint(ckpt)
        mc = model.config
        if mc.d_in != ds.feat_dim or mc.n_classes != ds.n_classes:
            raise ConfigError(
                f"checkpoint expects d_in={mc.d_in}, n_classes={mc.n_classes}; "
                f"dataset has feat_dim={ds.feat_dim}, n_classes={ds.n_classes}"
            )
        for seq in ds.sequences:
            logits = model.forward(seq.features)
            pairs.append((seq.labels, predict(logits, cfg["smooth"])))
        source = str(ckpt)
    report = split_report(pairs, ds.n_classes)
    report["split"] = cfg["split"]
    report["checkpoint"] = source
    report["smooth"] = cfg["smooth"]
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report, f, sort_keys=True, indent=1)
        f.write("\n")
    if cfg["timelines"] > 0:
        blocks = []
        for i, (g, p) in enumerate(pairs[: cfg["timelines"]]):
            blocks.append(
                f"sequence {i} ({g.size} frames)\n"
                + render_timeline(extract_transcript(g), extract_transcript(p), cfg["timeline_width"])
            )
        (out_dir / "timelines.txt").write_text("\n\n".join(blocks) + "\n")
    _echo(cfg, out_dir, "eval")
    print(
        f"{cfg['split']}: edit score {report['edit_score_mean']:.2f}  "
        f"aer {report['aer_mean']:.3f}  frame acc {report['frame_accuracy']:.3f}  "
        f"({report['n_sequences']} sequences)"
    )
    return 0


def _bench_forward(kind: str, h: Matrix, params: AttentionParams, layout) -> None:
    if kind == "mmta":
        mmta(h, layout, params)
    else:
        global_attention(h, params)


def cmd_bench(cfg: dict) -> int:
    lengths = cfgmod.parse_lengths(cfg["bench_lengths"])
    d_model = cfg["bench_d_model"]
    wc = WindowConfig.from_stride(cfg["bench_window"], cfg["bench_stride"])
    rng = np.random.default_rng(0)
    params = AttentionParams.init(d_model, cfg["bench_heads"], rng)
    rows = []
    for T in lengths:
        h = Matrix(rng.standard_normal((T, d_model)))
        layout = build_layout(T, wc)
        row = {"T": T, "windows": layout.n_windows}
        for kind in ("mmta", "global"):
            _bench_forward(kind, h, params, layout)  # warmup
            best = float("inf")
            for _ in range(cfg["bench_repeats"]):
                t0 = time.perf_counter()
                _bench_forward(kind, h, params, layout)
                best = min(best, time.perf_counter() - t0)
            with track_allocations() as counter:
                _bench_forward(kind, h, params, layout)
            row[f"{kind}_seconds"] = best
            row[f"{kind}_bytes"] = counter.bytes
        rows.append(row)
        print(
            f"T={T:6d}  mmta {row['mmta_seconds']:.4f}s / {row['mmta_bytes'] / 1e6:8.1f} MB   "
            f"global {row['global_seconds']:.4f}s / {row['global_bytes'] / 1e6:8.1f} MB"
        )
    result = {
        "d_model": d_model,
        "heads": cfg["bench_heads"],
        "window": cfg["bench_window"],
        "stride": cfg["bench_stride"],
        "repeats": cfg["bench_repeats"],
        "note": "bytes counts matrix buffers allocated during one forward pass, not process RSS",
        "rows": rows,
        "scaling": [
            {
                "from_T": a["T"],
                "to_T": b["T"],
                "mmta_time_ratio": b["mmta_seconds"] / a["mmta_seconds"],
                "global_time_ratio": b["global_seconds"] / a["global_seconds"],
                "mmta_bytes_ratio": b["mmta_bytes"] / a["mmta_bytes"],
                "global_bytes_ratio": b["global_bytes"] / a["global_bytes"],
            }
            for a, b in zip(rows[:-1], rows[1:])
        ],
    }
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bench.json", "w") as f:
        json.dump(result, f, sort_keys=True, indent=1)
        f.write("\n")
    _echo(cfg, out_dir, "bench")
    return 0


def cmd_sweep(cfg: dict) -> int:
    cells = cfgmod.parse_cells(cfg["sweep_cells"])
    train_ds = _load_split(cfg, "train")
    val_ds = _load_split(cfg, "val")
    test_ds = _load_split(cfg, "test")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for w, s in cells:
        cell_dir = out_dir / f"cell_w{w}_s{s}"
        cell_cfg = dict(cfg, window=w, stride=s)
        row = {"window": w, "stride": s}
        try:
            model = EncoderModel(_encoder_config(cell_cfg, train_ds), rng=_init_rng(cfg["seed"]))
            train(model, train_ds, val_ds, _train_config(cell_cfg), out_dir=cell_dir)
            best = load_checkpoint(cell_dir / "best.ckpt")
            pairs = [
                (seq.labels, predict(best.forward(seq.features), cfg["smooth"]))
                for seq in test_ds.sequences
            ]
            rep = split_report(pairs, test_ds.n_classes)
            row.update(
                edit_score_mean=rep["edit_score_mean"],
                aer_mean=rep["aer_mean"],
                frame_accuracy=rep["frame_accuracy"],
            )
            print(
                f"w={w:4d} s={s:4d}  edit {rep['edit_score_mean']:6.2f}  "
                f"aer {rep['aer_mean']:.3f}  acc {rep['frame_accuracy']:.3f}"
            )
        except Exception as e:  # keep sweeping; the cell row carries the fault
            row["error"] = f"{type(e).__name__}: {e}"
            print(f"w={w:4d} s={s:4d}  failed: {row['error']}")
        results.append(row)
    with open(out_dir / "sweep.json", "w") as f:
        json.dump({"cells": results, "smooth": cfg["smooth"]}, f, sort_keys=True, indent=1)
        f.write("\n")
    _echo(cfg, out_dir, "sweep")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end training: focal loss, gradient clipping, momentum SGD with a
reduce-on-plateau schedule, the epoch loop over variable-length sequences,
and a finite-difference gradient checker.

Sequences are never padded; a batch is a gradient-accumulation group.  Each
sequence runs forward and backward on its own tape, gradients summing into
the shared parameter slots, then one optimizer step consumes the batch mean.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernel
from .encoder import EncoderModel, save_checkpoint
from .errors import ConfigError
from .kernel import Matrix, NumericError, ShapeError, Tape


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 2
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_norm: float = 5.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    patience: int = 5
    lr_factor: float = 0.01
    min_delta: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ConfigError("lr and clip_norm must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.focal_alpha <= 0 or self.focal_gamma < 0:
            raise ConfigError("weight_decay >= 0, focal_alpha > 0, focal_gamma >= 0 required")
        if self.patience < 1 or not 0.0 < self.lr_factor <= 1.0:
            raise ConfigError("patience >= 1 and 0 < lr_factor <= 1 required")


@dataclass
class TrainState:
    lr: float
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = -1
    plateau_count: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def focal_loss(
    logits: Matrix,
    labels: np.ndarray,
    alpha: float = 0.25,
    gamma: float = 2.0,
    tape: Tape | None = None,
) -> Matrix:
    """Mean over frames of -alpha * (1 - p_t)^gamma * log p_t.

    p_t is the softmax probability of frame t's true class, computed through
    log-softmax so near-certain frames don't round to log(0).  gamma = 0
    recovers plain weighted cross-entropy exactly, gradient included.

    The backward is the closed form (per frame, then / T for the mean):

        dL/dz_j = alpha * (1-p_t)^(gamma-1) * (gamma * p_t * log p_t - (1-p_t))
                  * (1[j = t] - p_j)
    """
    labels = np.asarray(labels)
    T, C = logits.shape
    if labels.shape != (T,):
        raise ShapeError(f"labels shape {labels.shape} does not match {T} frames")
    bad = (labels < 0) | (labels >= C)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(f"frame {i}: label {labels[i]} outside [0, {C})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    logp = z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    rows = np.arange(T)
    logp_t = logp[rows, labels]
    p_t = np.exp(logp_t)
    miss = 1.0 - p_t
    loss = float(np.mean(-alpha * miss**gamma * logp_t))
    out = Matrix(np.array([[loss]], dtype=logits.dtype))
    if tape is not None:

        def bwd() -> None:
            if out.grad is None:
                return
            if gamma == 0.0:
                coeff = np.full(T, -alpha)
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    coeff = alpha * (
                        gamma * p_t * logp_t * miss ** (gamma - 1.0) - miss**gamma
                    )
                coeff = np.where(miss == 0.0, 0.0, coeff)
            p = np.exp(logp)
            g = coeff[:, None] * (-p)
            g[rows, labels] += coeff
            g *= out.grad[0, 0] / T
            kernel._accum(logits, g)

        tape.record(bwd)
    return out


def clip_gradients(named_params, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm.

    Returns the pre-clip norm.  Runs before weight decay is added, so decay
    is never clipped away.
    """
    total = 0.0
    grads = []
    for name, p in named_params:
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient to clip")
        total += float((p.grad * p.grad).sum())
        grads.append(p.grad)
    total = math.sqrt(total)
    if total > max_norm:
        s = max_norm / total
        for g in grads:
            g *= s
    return total


def sgd_step(named_params, state: TrainState, cfg: TrainConfig) -> None:
    """One momentum-SGD update from the gradients sitting on the params.

    Order per tensor: add weight decay (skipping decay-exempt names), fold
    into the velocity buffer, step.  A non-finite gradient aborts with the
    offending parameter named before anything is modified.
    """
    params = list(named_params)
    for name, p in params:
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient")
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {name}")
    for name, p in params:
        g = p.grad
        if cfg.weight_decay > 0.0 and not EncoderModel.decay_exempt(name):
            g = g + cfg.weight_decay * p.data
        buf = state.velocity.get(name)
        if buf is None:
            buf = np.zeros_like(p.data)
            state.velocity[name] = buf
        buf *= cfg.momentum
        buf += g
        p.data -= state.lr * buf


def plateau_schedule(state: TrainState, val_loss: float, cfg: TrainConfig) -> bool:
    """Track best validation loss; multiply lr by lr_factor after ``patience``
    consecutive epochs without strict improvement.  Returns True on the
    epochs that improved (callers checkpoint on those)."""
    if val_loss < state.best_val - cfg.min_delta:
        state.best_val = val_loss
        state.best_epoch = state.epoch
        state.plateau_count = 0
        return True
    state.plateau_count += 1
    if state.plateau_count >= cfg.patience:
        state.lr *= cfg.lr_factor
        state.plateau_count = 0
    return False


def _epoch_loss(model: EncoderModel, dataset, cfg: TrainConfig) -> float:
    """Mean eval-mode focal loss over a dataset (no tape, no dropout)."""
    losses = []
    for seq in dataset.sequences:
        logits = model.forward(seq.features)
        losses.append(focal_loss(logits, seq.labels, cfg.focal_alpha, cfg.focal_gamma).item())
    return float(np.mean(losses))


def train(
    model: EncoderModel,
    train_ds,
    val_ds,
    cfg: TrainConfig,
    out_dir=None,
    log_sink=None,
) -> tuple[TrainState, list[dict]]:
    """Run the full loop; returns the final state and the per-epoch log.

    Per epoch: shuffle, walk batches of batch_size sequences, accumulate
    each sequence's gradients on a fresh tape, average, clip, step.  Then
    score the validation split, drive the plateau schedule, and checkpoint
    (best.ckpt on improvement, final.ckpt after the last epoch, under out_dir).

    Log records carry epoch, train/val loss, lr, grad norm mean, and wall
    seconds; everything except seconds is deterministic for a fixed seed.
    """
    root = np.random.SeedSequence(cfg.seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in root.spawn(2))
    state = TrainState(lr=cfg.lr)
    params = list(model.named_parameters())
    log: list[dict] = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    n = len(train_ds.sequences)
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        t0 = time.monotonic()
        order = shuffle_rng.permutation(n)
        seq_losses = []
        grad_norms = []
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            model.zero_grads()
            for idx in batch:
                seq = train_ds.sequences[idx]
                tape = Tape()
                tape.register(*model.parameters())
                logits = model.forward(seq.features, train=True, rng=dropout_rng, tape=tape)
                loss = focal_loss(logits, seq.labels, cfg.focal_alpha, cfg.focal_gamma, tape)
                seq_losses.append(loss.item())
                tape.backward(loss)
            inv = 1.0 / len(batch)
            for _, p in params:
                p.grad *= inv
            grad_norms.append(clip_gradients(params, cfg.clip_norm))
            sgd_step(params, state, cfg)
        val_loss = _epoch_loss(model, val_ds, cfg)
        improved = plateau_schedule(state, val_loss, cfg)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(seq_losses)),
            "val_loss": val_loss,
            "lr": state.lr,
            "grad_norm_mean": float(np.mean(grad_norms)),
            "improved": improved,
            "seconds": time.monotonic() - t0,
        }
        log.append(record)
        if log_sink is not None:
            log_sink(record)
        if out_path is not None and improved:
            save_checkpoint(model, out_path / "best.ckpt")
    if out_path is not None:
        save_checkpoint(model, out_path / "final.ckpt")
        if state.best_epoch < 0:
            save_checkpoint(model, out_path / "best.ckpt")
        with open(out_path / "train_log.jsonl", "w") as f:
            for rec in log:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return state, log


def grad_check(
    model: EncoderModel,
    x: np.ndarray,
    labels: np.ndarray,
    *,
    step: float = 1e-5,
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> dict:
    """Compare tape gradients against central differences, elementwise.

    Runs the model without dropout (a stochastic path has no well-defined
    finite difference); when the config carries a nonzero rate the report
    says so via ``dropout_skipped``.  Per tensor: max relative error over
    entries, with |a - f| / max(|a|, |f|) and near-zero pairs treated as
    agreeing.
    """

    def loss_value() -> float:
        return focal_loss(model.forward(x), labels, alpha, gamma).item()

    tape = Tape()
    tape.register(*model.parameters())
    loss = focal_loss(model.forward(x, tape=tape), labels, alpha, gamma, tape)
    tape.backward(loss)
    report: dict = {
        "step": step,
        "dropout_skipped": model.config.dropout > 0.0,
        "tensors": {},
    }
    worst = 0.0
    for name, p in model.named_parameters():
        analytic = p.grad.copy()
        fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_value()
            flat[i] = keep - step
            down = loss_value()
            flat[i] = keep
            fd_flat[i] = (up - down) / (2.0 * step)
        denom = np.maximum(np.abs(analytic), np.abs(fd))
        err = np.where(denom < 1e-7, 0.0, np.abs(analytic - fd) / np.maximum(denom, 1e-300))
        tensor_err = float(err.max()) if err.size else 0.0
        report["tensors"][name] = tensor_err
        worst = max(worst, tensor_err)
    report["max_rel_err"] = worst
    return report

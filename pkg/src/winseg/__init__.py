"""Windowed temporal attention for frame-wise action labeling.

A sequence encoder whose attention runs inside overlapping local windows
fused by membership averaging, trained from scratch (reverse-mode tape,
focal loss, momentum SGD) and scored with boundary-sensitive metrics.
"""

from .attention import AttentionParams, dilution_probe, global_attention, mmta, window_attention
from .encoder import (
    EncoderConfig,
    EncoderModel,
    effective_receptive_field,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .errors import ConfigError, DataFormatError
from .kernel import Matrix, NumericError, ShapeError, Tape, TapeStateError, track_allocations
from .metrics import (
    Transcript,
    aer,
    edit_score,
    extract_transcript,
    expand_transcript,
    frame_stats,
    levenshtein,
    render_timeline,
    split_report,
)
from .synthdata import Dataset, GeneratorConfig, SequenceSample, generate, load_dataset, save_dataset
from .training import TrainConfig, TrainState, focal_loss, grad_check, sgd_step, train
from .windowing import WindowConfig, WindowLayout, aggregate_overlaps, build_layout

__version__ = "0.1.0"

__all__ = [
    "AttentionParams",
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "EncoderConfig",
    "EncoderModel",
    "GeneratorConfig",
    "Matrix",
    "NumericError",
    "SequenceSample",
    "ShapeError",
    "Tape",
    "TapeStateError",
    "TrainConfig",
    "TrainState",
    "Transcript",
    "WindowConfig",
    "WindowLayout",
    "aer",
    "aggregate_overlaps",
    "build_layout",
    "dilution_probe",
    "edit_score",
    "effective_receptive_field",
    "expand_transcript",
    "extract_transcript",
    "focal_loss",
    "frame_stats",
    "generate",
    "global_attention",
    "grad_check",
    "levenshtein",
    "load_checkpoint",
    "load_dataset",
    "mmta",
    "predict",
    "render_timeline",
    "save_checkpoint",
    "save_dataset",
    "sgd_step",
    "split_report",
    "track_allocations",
    "train",
    "window_attention",
    "__version__",
]

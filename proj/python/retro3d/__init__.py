"""Template-free retrosynthesis with 3D-aware attention."""

from ._retro3d import (
    Checkpoint,
    ConformerError,
    NumericError,
    ParseError,
    Vocab,
    average_checkpoints,
    build_sam,
    canonical_key,
    dataset_filter,
    distance_matrix,
    evaluate,
    gaussian_basis,
    is_valid,
    predict,
    root_align,
    strip_maps,
    synthetic_conformer,
    tokenize,
    train,
    write,
)

__all__ = [
    "Checkpoint",
    "ConformerError",
    "NumericError",
    "ParseError",
    "Vocab",
    "average_checkpoints",
    "build_sam",
    "canonical_key",
    "dataset_filter",
    "distance_matrix",
    "evaluate",
    "gaussian_basis",
    "is_valid",
    "predict",
    "root_align",
    "strip_maps",
    "synthetic_conformer",
    "tokenize",
    "train",
    "write",
]

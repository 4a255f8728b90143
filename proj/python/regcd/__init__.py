"""Joint image registration and change detection with diffusion features."""

from ._regcd import (
    IoError,
    NumericError,
    ValidationError,
    affine_from_params,
    argsoftmax_decode,
    change_metrics,
    config_hash,
    default_config,
    evaluate,
    flow_epe,
    flow_from_affine,
    fourier_features,
    gaussian_target,
    generate_dataset,
    lambda_cd,
    lattice_offsets,
    learning_rate,
    load_sample,
    pretrain,
    sample_affine,
    train,
    warp,
)

__all__ = [
    "IoError",
    "NumericError",
    "ValidationError",
    "affine_from_params",
    "argsoftmax_decode",
    "change_metrics",
    "config_hash",
    "default_config",
    "evaluate",
    "flow_epe",
    "flow_from_affine",
    "fourier_features",
    "gaussian_target",
    "generate_dataset",
    "lambda_cd",
    "lattice_offsets",
    "learning_rate",
    "load_sample",
    "pretrain",
    "sample_affine",
    "train",
    "warp",
]

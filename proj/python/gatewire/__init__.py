"""Confidence-gated early-exit networks."""

from ._core import (
    Dataset,
    GatewireError,
    Model,
    Splits,
    SyntheticSpec,
    TrainConfig,
    ValidationError,
    calibrate,
    compare,
    default_theta_grid,
    derive_seed,
    desk_scale_config,
    ece,
    gen_synthetic,
    infer_batch,
    run_experiment,
    softmax,
    split,
    sweep,
    train,
)

__all__ = [
    "Dataset",
    "GatewireError",
    "Model",
    "Splits",
    "SyntheticSpec",
    "TrainConfig",
    "ValidationError",
    "calibrate",
    "compare",
    "default_theta_grid",
    "derive_seed",
    "desk_scale_config",
    "ece",
    "gen_synthetic",
    "infer_batch",
    "run_experiment",
    "softmax",
    "split",
    "sweep",
    "train",
]

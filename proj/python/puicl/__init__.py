"""Positive-unlabeled in-context classifier."""

from ._puicl import (
    CapacityError,
    CheckpointError,
    ConfigError,
    DegenerateSampleError,
    IoError,
    MetricError,
    Model,
    NumericalError,
    PuiclError,
    ShapeError,
    auc,
    count_params,
    evaluate,
    generate_instance,
    naive_baseline,
    pu_composition,
    train,
)

__all__ = [
    "CapacityError",
    "CheckpointError",
    "ConfigError",
    "DegenerateSampleError",
    "IoError",
    "MetricError",
    "Model",
    "NumericalError",
    "PuiclError",
    "ShapeError",
    "auc",
    "count_params",
    "evaluate",
    "generate_instance",
    "naive_baseline",
    "pu_composition",
    "train",
]

"""Tool-pose ST-GCN gesture recognition."""

from ._core import (
    IoError,
    NumericalError,
    ValidationError,
    __version__,
    crossval,
    gradcheck,
    lr_at,
    partition,
    predict,
    segment,
    synth,
    train,
)

__all__ = [
    "IoError",
    "NumericalError",
    "ValidationError",
    "__version__",
    "crossval",
    "gradcheck",
    "lr_at",
    "partition",
    "predict",
    "segment",
    "synth",
    "train",
]

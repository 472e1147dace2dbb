"""Python bindings for the urep library."""

from ._core import (
    Model,
    UrepError,
    assess_relatedness,
    generate,
    js_divergence,
    intensity_histogram,
    load_checkpoint,
    psnr,
    run_cli,
)

__all__ = [
    "Model",
    "UrepError",
    "assess_relatedness",
    "generate",
    "intensity_histogram",
    "js_divergence",
    "load_checkpoint",
    "psnr",
    "run_cli",
]

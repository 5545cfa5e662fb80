"""SemifreddoNet toolkit: re-exports of the native extension."""

from _semifreddo import (  # noqa: F401
    describe,
    validate,
    default_spec_json,
    small_spec_json,
    topology_hash,
    train_synthetic,
    eval_bundle,
    quantize_bundle,
    estimate_area,
    estimate_fps,
    fit_activation,
)

__all__ = [
    "describe",
    "validate",
    "default_spec_json",
    "small_spec_json",
    "topology_hash",
    "train_synthetic",
    "eval_bundle",
    "quantize_bundle",
    "estimate_area",
    "estimate_fps",
    "fit_activation",
]

"""LiDAR-camera extrinsic calibration from fused BEV features."""

from bevcal._core import (
    CalibError,
    Calibrator,
    Sample,
    canonical_config,
    compose,
    compute_metrics,
    default_config,
    depth_bins,
    draw_noise,
    evaluate,
    generate_scenes,
    invert,
    load_config,
    load_frame,
    make_initial,
    pose_from_tuple,
    pose_to_tuple,
    recover_extrinsic,
    train,
    write_frame,
)

__all__ = [
    "CalibError",
    "Calibrator",
    "Sample",
    "canonical_config",
    "compose",
    "compute_metrics",
    "default_config",
    "depth_bins",
    "draw_noise",
    "evaluate",
    "generate_scenes",
    "invert",
    "load_config",
    "load_frame",
    "make_initial",
    "pose_from_tuple",
    "pose_to_tuple",
    "recover_extrinsic",
    "train",
    "write_frame",
]

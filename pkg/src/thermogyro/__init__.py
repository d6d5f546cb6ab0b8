"""Rotational odometry from ultra-low-resolution thermal frames fused with a gyroscope."""

from .model import ModelConfig, build_model, count_flops, count_params, forward, fuse

__all__ = ["ModelConfig", "build_model", "count_flops", "count_params", "forward", "fuse"]

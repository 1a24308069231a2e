"""Scan conditioning applied before any learning.

Order is fixed: background removal, median filter, time-varying gain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .bscan import BScan


@dataclass(frozen=True)
class PreprocessConfig:
    median_kernel: int = 3
    gain_alpha: float = 0.025  # 1/ns
    gain_tmax_clip: float = 50.0
    background_mode: str = "mean-trace"

    def __post_init__(self):
        if self.median_kernel < 1 or self.median_kernel % 2 == 0:
            raise ValueError(f"median_kernel must be odd and >= 1, got {self.median_kernel}")
        if self.gain_tmax_clip < 1:
            raise ValueError(f"gain_tmax_clip must be >= 1, got {self.gain_tmax_clip}")
        if self.gain_alpha < 0:
            raise ValueError(f"gain_alpha must be >= 0, got {self.gain_alpha}")
        if self.background_mode not in ("mean-trace", "none"):
            raise ValueError(f"unknown background_mode {self.background_mode!r}")


def remove_background(scan: BScan) -> BScan:
    """Subtract the mean trace, i.e. each row's mean across columns."""
    if scan.cols < 2:
        raise ValueError("background removal needs at least 2 traces")
    data = scan.data - scan.data.mean(axis=1, keepdims=True)
    return scan.replace(data)


def median_filter(scan: BScan, k: int) -> BScan:
    """k x k median with replicate padding at the borders."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"median kernel must be odd and >= 1, got {k}")
    if k > min(scan.rows, scan.cols):
        raise ValueError(f"median kernel {k} larger than scan {scan.shape}")
    if k == 1:
        return scan
    return scan.replace(ndimage.median_filter(scan.data, size=k, mode="nearest"))


def gain_curve(rows: int, dt: float, alpha: float, cap: float) -> np.ndarray:
    """g(t) = min(exp(alpha * t), cap) sampled at t = r * dt."""
    t = np.arange(rows) * dt
    return np.minimum(np.exp(alpha * t), cap)


def apply_gain(scan: BScan, cfg: PreprocessConfig) -> BScan:
    g = gain_curve(scan.rows, scan.dt, cfg.gain_alpha, cfg.gain_tmax_clip)
    return scan.replace(scan.data * g[:, None])


def preprocess(scan: BScan, cfg: PreprocessConfig | None = None) -> BScan:
    cfg = cfg or PreprocessConfig()
    if cfg.background_mode == "mean-trace":
        scan = remove_background(scan)
    scan = median_filter(scan, cfg.median_kernel)
    return apply_gain(scan, cfg)

"""Single-level Daubechies-2 decomposition and coefficient-merge fusion.

The 1-D analysis step on a length-N signal is

    low[k]  = sum_n h[n] * x_ext[2k + 2 - n]
    high[k] = sum_n g[n] * x_ext[2k + 2 - n],     k = 0 .. ceil(N/2) - 1

with whole-point symmetric extension (x[-1] = x[1], x[N] = x[N-2]). The
transform is non-expansive and, with this sampling phase, its N x N
(N + 1 x N for odd N) matrix A has condition number <= 2 for every N, so the
inverse is the exact least-squares inverse (A^T A)^-1 A^T, solved through
the banded Cholesky factor of A^T A. Interior rows are the
usual orthonormal db2 frame; only the boundary rows are folded.

2-D: rows are split into L/H first (filtering along each row), then columns,
giving ll, lh (low along rows, high along columns), hl, hh.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, ndimage

from .bscan import BScan

FILTER_LEN = 4
DETAIL_MODES = ("abs_max", "signed_max")


@dataclass(frozen=True)
class Db2Filter:
    lowpass: np.ndarray
    highpass: np.ndarray


def db2_filter() -> Db2Filter:
    """db2 analysis taps.

    The four lowpass taps solve sum h = sqrt(2), sum h^2 = 1,
    h0 h2 + h1 h3 = 0 (double-shift orthogonality) and one vanishing
    moment of the highpass, sum (-1)^n n h[n] = 0; the closed-form root is
    (1 + s, 3 + s, 3 - s, 1 - s) / (4 sqrt 2) with s = sqrt 3.
    """
    s = math.sqrt(3.0)
    h = np.array([1 + s, 3 + s, 3 - s, 1 - s]) / (4.0 * math.sqrt(2.0))
    g = np.array([h[3], -h[2], h[1], -h[0]])
    return Db2Filter(h, g)


def _reflect(i: int, n: int) -> int:
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i %= period
    return i if i < n else period - i


@lru_cache(maxsize=64)
def _analysis_matrix(n: int) -> np.ndarray:
    filt = db2_filter()
    half = (n + 1) // 2
    a = np.zeros((2 * half, n))
    for k in range(half):
        for tap in range(FILTER_LEN):
            j = _reflect(2 * k + 2 - tap, n)
            a[k, j] += filt.lowpass[tap]
            a[half + k, j] += filt.highpass[tap]
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def _gram_cholesky(n: int) -> np.ndarray:
    """Upper banded Cholesky factor of A^T A (bandwidth FILTER_LEN - 1)."""
    a = _analysis_matrix(n)
    gram = a.T @ a
    u = FILTER_LEN - 1
    bands = np.zeros((u + 1, n))
    for d in range(u + 1):
        bands[u - d, d:] = np.diagonal(gram, d)
    c = linalg.cholesky_banded(bands)
    c.setflags(write=False)
    return c


def _synthesize(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Least-squares inverse of the analysis along axis 0."""
    return linalg.cho_solve_banded((_gram_cholesky(n), False), _analysis_matrix(n).T @ coeffs)


@dataclass(frozen=True)
class WaveletPyramid:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    shape: tuple[int, int]
    level: int = 1

    def bands(self):
        return self.ll, self.lh, self.hl, self.hh


def _as_array(image) -> np.ndarray:
    return np.asarray(image.data if isinstance(image, BScan) else image, dtype=np.float64)


def dwt2(image) -> WaveletPyramid:
    x = _as_array(image)
    if x.ndim != 2:
        raise ValueError("dwt2 expects a 2-D image")
    rows, cols = x.shape
    if rows < FILTER_LEN or cols < FILTER_LEN:
        raise ValueError(f"image {x.shape} smaller than the db2 support ({FILTER_LEN})")
    hc, hr = (cols + 1) // 2, (rows + 1) // 2
    along_rows = x @ _analysis_matrix(cols).T  # L | H
    low, high = along_rows[:, :hc], along_rows[:, hc:]
    ar = _analysis_matrix(rows)
    lo_cols, hi_cols = ar @ low, ar @ high
    return WaveletPyramid(
        ll=lo_cols[:hr], lh=lo_cols[hr:], hl=hi_cols[:hr], hh=hi_cols[hr:], shape=(rows, cols)
    )


def idwt2(p: WaveletPyramid) -> np.ndarray:
    rows, cols = p.shape
    hr, hc = (rows + 1) // 2, (cols + 1) // 2
    for band in p.bands():
        if band.shape != (hr, hc):
            raise ValueError(f"subband shape {band.shape} does not match image {p.shape}")
    low = _synthesize(np.vstack([p.ll, p.lh]), rows)
    high = _synthesize(np.vstack([p.hl, p.hh]), rows)
    return _synthesize(np.hstack([low, high]).T, cols).T


def merge(pa: WaveletPyramid, pb: WaveletPyramid, detail: str = "abs_max") -> WaveletPyramid:
    """Elementwise minimum of approximations, maximum of details.

    ``detail="abs_max"`` keeps whichever coefficient has the larger magnitude
    (sign preserved; ties go to ``pa``); ``"signed_max"`` is the plain maximum.
    """
    if pa.shape != pb.shape or pa.level != pb.level:
        raise ValueError(f"cannot merge pyramids of shapes {pa.shape} and {pb.shape}")
    if detail not in DETAIL_MODES:
        raise ValueError(f"detail must be one of {DETAIL_MODES}, got {detail!r}")

    def pick(a, b):
        if detail == "signed_max":
            return np.maximum(a, b)
        return np.where(np.abs(b) > np.abs(a), b, a)

    return WaveletPyramid(
        ll=np.minimum(pa.ll, pb.ll),
        lh=pick(pa.lh, pb.lh),
        hl=pick(pa.hl, pb.hl),
        hh=pick(pa.hh, pb.hh),
        shape=pa.shape,
        level=pa.level,
    )


def resize_bilinear(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == tuple(shape):
        return x.copy()
    zoom = (shape[0] / x.shape[0], shape[1] / x.shape[1])
    out = ndimage.zoom(x, zoom, order=1, mode="nearest", grid_mode=True)
    # zoom may be off by one on rounding
    return out[: shape[0], : shape[1]] if out.shape != tuple(shape) else out


def fuse(normal, simulated, detail: str = "abs_max"):
    """Fuse a normal segment with a simulated one of any size.

    Returns a BScan carrying ``normal``'s metadata when ``normal`` is a BScan,
    otherwise an array.
    """
    a = _as_array(normal)
    b = _as_array(simulated)
    if b.shape != a.shape:
        b = resize_bilinear(b, a.shape)
    out = idwt2(merge(dwt2(a), dwt2(b), detail=detail))
    return normal.replace(out) if isinstance(normal, BScan) else out

"""Minimal dense-array kernel used by every other module.

All grids are numpy float64 arrays: 2D grids are (rows, cols), 3D grids are
(rows, cols, channels), row-major.  Pixel rectangles are half-open
``(r0, c0, r1, c1)`` tuples.  Every function here is pure.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVector, InvalidArgument, InvalidRect

NORM_EPS = 1e-12


def as_grid2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InvalidArgument(f"expected a non-empty 2D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("grid contains non-finite values")
    return a


def as_grid3d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.size == 0:
        raise InvalidArgument(f"expected a non-empty 3D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("grid contains non-finite values")
    return a


def softmax(values) -> np.ndarray:
    """Stable softmax over a 1D vector (max-subtraction applied internally)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidArgument("softmax requires a non-empty 1D vector")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument("softmax input must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


def cosine(u, v) -> float:
    """Cosine similarity of two vectors; raises on near-zero norms."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise InvalidArgument(f"shape mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= NORM_EPS or nv <= NORM_EPS:
        raise DegenerateVector("cosine of a (near-)zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


class IntegralImage:
    """Summed-area table with a zero border: table[i, j] = sum(src[:i, :j])."""

    def __init__(self, src):
        src = as_grid2d(src)
        self.rows, self.cols = src.shape
        table = np.zeros((self.rows + 1, self.cols + 1), dtype=np.float64)
        np.cumsum(np.cumsum(src, axis=0), axis=1, out=table[1:, 1:])
        self.table = table

    def rect_sum(self, r0, c0, r1, c1):
        """Sum of the source over half-open rect(s); accepts scalars or arrays."""
        t = self.table
        return t[r1, c1] - t[r0, c1] - t[r1, c0] + t[r0, c0]

    def rect_mean(self, r0, c0, r1, c1) -> float:
        r0, c0, r1, c1 = int(r0), int(c0), int(r1), int(c1)
        if not (0 <= r0 < r1 <= self.rows and 0 <= c0 < c1 <= self.cols):
            raise InvalidRect(f"rect ({r0},{c0},{r1},{c1}) invalid for "
                              f"{self.rows}x{self.cols} grid")
        area = (r1 - r0) * (c1 - c0)
        return float(self.rect_sum(r0, c0, r1, c1)) / area

    def rect_mean_batch(self, r0, c0, r1, c1) -> np.ndarray:
        """Vectorized rect_mean over index arrays (assumed pre-validated)."""
        area = (np.asarray(r1) - r0) * (np.asarray(c1) - c0)
        return self.rect_sum(r0, c0, r1, c1) / area


def integral(src) -> IntegralImage:
    return IntegralImage(src)


def rect_mean(ii: IntegralImage, rect) -> float:
    r0, c0, r1, c1 = rect
    return ii.rect_mean(r0, c0, r1, c1)


def resize_bilinear(src, out_rows: int, out_cols: int) -> np.ndarray:
    """Corner-aligned bilinear resize: constants stay constant, corners map
    to corners."""
    src = as_grid2d(src)
    if out_rows < 1 or out_cols < 1:
        raise InvalidArgument("target dimensions must be >= 1")
    in_rows, in_cols = src.shape

    def _coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    ry = _coords(out_rows, in_rows)
    cx = _coords(out_cols, in_cols)
    r0 = np.minimum(np.floor(ry).astype(int), in_rows - 1)
    c0 = np.minimum(np.floor(cx).astype(int), in_cols - 1)
    r1 = np.minimum(r0 + 1, in_rows - 1)
    c1 = np.minimum(c0 + 1, in_cols - 1)
    fy = (ry - r0)[:, None]
    fx = (cx - c0)[None, :]
    top = src[np.ix_(r0, c0)] * (1 - fx) + src[np.ix_(r0, c1)] * fx
    bot = src[np.ix_(r1, c0)] * (1 - fx) + src[np.ix_(r1, c1)] * fx
    return top * (1 - fy) + bot * fy


def gaussian_kernel(kernel_size: int) -> np.ndarray:
    """Normalized 1D Gaussian with sigma = kernel_size / 6."""
    if kernel_size < 1:
        raise InvalidArgument("kernel_size must be >= 1")
    if kernel_size == 1:
        return np.ones(1)
    sigma = kernel_size / 6.0
    x = np.arange(kernel_size) - (kernel_size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _reflect_pad_1d(a: np.ndarray, pad_lo: int, pad_hi: int, axis: int) -> np.ndarray:
    return np.pad(a, [(pad_lo, pad_hi) if ax == axis else (0, 0)
                      for ax in range(a.ndim)], mode="symmetric")


def _convolve_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    k = kernel.size
    pad_lo = (k - 1) // 2
    pad_hi = k - 1 - pad_lo
    padded = _reflect_pad_1d(a, pad_lo, pad_hi, axis)
    out = np.zeros_like(a)
    sl = [slice(None)] * a.ndim
    for i in range(k):
        sl[axis] = slice(i, i + a.shape[axis])
        out += kernel[k - 1 - i] * padded[tuple(sl)]
    return out


def gaussian_smooth(src, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding (sum-preserving up to
    boundary effects)."""
    src = as_grid2d(src)
    k = gaussian_kernel(kernel_size)
    return _convolve_axis(_convolve_axis(src, k, 0), k, 1)

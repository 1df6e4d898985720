"""Pixel-level primitives: gray conversion, Gaussian kernels, separable
filtering, gradient magnitude and the guided filter.

Images are plain numpy arrays: gray images are ``(height, width)`` float64,
RGB images are ``(height, width, 3)`` with values in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ShapeError(ValueError):
    """Raised when arrays that must share dimensions do not."""


@dataclass(frozen=True)
class Kernel1D:
    radius: int
    taps: np.ndarray

    def __post_init__(self):
        if len(self.taps) != 2 * self.radius + 1:
            raise ValueError("taps length must be 2*radius+1")


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D gray image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def as_rgb(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) RGB image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def rgb_to_gray(img) -> np.ndarray:
    """BT.601 luma. Gray input is passed through unchanged."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return as_gray(arr)
    arr = as_rgb(arr)
    r, g, b = LUMA_WEIGHTS
    return r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> Kernel1D:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not truncate > 0:
        raise ValueError(f"truncate must be positive, got {truncate}")
    radius = int(math.ceil(truncate * sigma))
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return Kernel1D(radius, taps / taps.sum())


def gaussian_derivative_kernel(sigma: float, truncate: float = 4.0) -> Kernel1D:
    """Derivative-of-Gaussian taps ``-i/sigma^2 * g(i)``, forced to zero sum.

    Convolving a unit ramp with these taps yields ~1 (sign follows the ramp).
    """
    g = gaussian_kernel(sigma, truncate)
    i = np.arange(-g.radius, g.radius + 1, dtype=np.float64)
    taps = -i / (sigma * sigma) * g.taps
    return Kernel1D(g.radius, taps - taps.mean())


def convolve_separable(img, kx: Kernel1D, ky: Kernel1D) -> np.ndarray:
    """Convolve rows with ``kx`` and columns with ``ky``; replicate borders."""
    arr = as_gray(img)
    # correlate1d with reversed taps == convolution
    out = ndimage.correlate1d(arr, kx.taps[::-1], axis=1, mode="nearest")
    return ndimage.correlate1d(out, ky.taps[::-1], axis=0, mode="nearest")


def gaussian_blur(img, sigma: float, truncate: float = 4.0) -> np.ndarray:
    k = gaussian_kernel(sigma, truncate)
    return convolve_separable(img, k, k)


def gradients(img, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-derivative responses (gx, gy) at scale ``sigma``."""
    g = gaussian_kernel(sigma)
    d = gaussian_derivative_kernel(sigma)
    gx = convolve_separable(img, d, g)
    gy = convolve_separable(img, g, d)
    return gx, gy


def gradient_magnitude(img, sigma: float) -> np.ndarray:
    gx, gy = gradients(img, sigma)
    return np.hypot(gx, gy)


def gradient_magnitude_at(img, sigma: float, rows, cols) -> np.ndarray:
    """``gradient_magnitude(img, sigma)[rows, cols]`` without the full column pass.

    Row passes run over the whole image; the column pass is evaluated only at
    the requested pixels, which is cheaper for sparse pixel sets.
    """
    arr = as_gray(img)
    g = gaussian_kernel(sigma)
    d = gaussian_derivative_kernel(sigma)
    r = g.radius
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    row_d = ndimage.correlate1d(arr, d.taps[::-1], axis=1, mode="nearest")
    row_g = ndimage.correlate1d(arr, g.taps[::-1], axis=1, mode="nearest")
    # clamp-to-edge row indices, shape (n_pixels, 2r+1)
    offs = np.arange(r, -r - 1, -1)
    flat = np.clip(rows[:, None] + offs[None, :], 0, arr.shape[0] - 1) * arr.shape[1]
    flat += cols[:, None]
    gx = np.take(row_d, flat) @ g.taps
    gy = np.take(row_g, flat) @ d.taps
    return np.hypot(gx, gy)


def box_mean(img, radius: int) -> np.ndarray:
    """Mean over (2r+1)^2 windows with replicate padding."""
    arr = as_gray(img)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    return ndimage.uniform_filter(arr, size=2 * radius + 1, mode="nearest")


def guided_filter(src, guide, radius: int, eps: float, subsample: int = 1) -> np.ndarray:
    """Gray-guide guided filter.

    ``subsample > 1`` enables the fast variant: coefficients are computed on a
    strided copy and bilinearly upsampled before being applied to the full
    resolution guide.
    """
    return GuidedFilter(guide, radius, eps, subsample)(src)


class GuidedFilter:
    """Guided filter with the guide statistics precomputed.

    Filtering several inputs against one guide reuses the guide's box means.
    """

    def __init__(self, guide, radius: int, eps: float, subsample: int = 1):
        self.guide = as_gray(guide)
        if radius < 1:
            raise ValueError("radius must be >= 1")
        if not eps > 0:
            raise ValueError("eps must be positive")
        if subsample < 1:
            raise ValueError("subsample must be >= 1")
        self.subsample = subsample
        if subsample > 1:
            self._guide_lo = self.guide[::subsample, ::subsample]
            self.radius = max(1, radius // subsample)
        else:
            self._guide_lo = self.guide
            self.radius = radius
        self.eps = eps
        self._mean_i = box_mean(self._guide_lo, self.radius)
        self._var_i = box_mean(self._guide_lo * self._guide_lo, self.radius) - self._mean_i ** 2

    def __call__(self, src) -> np.ndarray:
        p = as_gray(src)
        if p.shape != self.guide.shape:
            raise ShapeError(f"input {p.shape} and guide {self.guide.shape} differ")
        s, r = self.subsample, self.radius
        p_lo = p[::s, ::s] if s > 1 else p
        mean_p = box_mean(p_lo, r)
        cov_ip = box_mean(self._guide_lo * p_lo, r) - self._mean_i * mean_p
        a = cov_ip / (self._var_i + self.eps)
        b = mean_p - a * self._mean_i
        mean_a = box_mean(a, r)
        mean_b = box_mean(b, r)
        if s > 1:
            mean_a = _upsample(mean_a, p.shape)
            mean_b = _upsample(mean_b, p.shape)
        return mean_a * self.guide + mean_b


def _upsample(arr: np.ndarray, shape) -> np.ndarray:
    zoom = (shape[0] / arr.shape[0], shape[1] / arr.shape[1])
    return _resize_to(ndimage.zoom(arr, zoom, order=1, mode="nearest"), shape)


def _resize_to(arr: np.ndarray, shape) -> np.ndarray:
    out = arr[: shape[0], : shape[1]]
    if out.shape != tuple(shape):
        out = np.pad(out, ((0, shape[0] - out.shape[0]), (0, shape[1] - out.shape[1])), mode="edge")
    return out

"""Feature-level forensic analyses on normalized defocus maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imgcore
from .defocus import DefocusMap
from .imgcore import ShapeError

DEFAULT_THRESHOLD = 0.1
DEFAULT_WINDOW = 7
HIST_BINS = 16
FEATURE_SCHEMA_VERSION = 1
FEATURE_NAMES = (
    ["defocus_mean", "defocus_std", "defocus_min", "defocus_max", "defocus_median",
     "var_mean", "var_max", "var_std"]
    + [f"hist_{i:02d}" for i in range(HIST_BINS)]
)
KS_SERIES_TERMS = 100


@dataclass
class KsResult:
    d_statistic: float
    p_value: float
    n1: int
    n2: int

    def to_dict(self) -> dict:
        return {"d_statistic": self.d_statistic, "p_value": self.p_value, "n1": self.n1, "n2": self.n2}


def _values(m, normalization: str = "sigma_max") -> np.ndarray:
    if isinstance(m, DefocusMap):
        if normalization == "minmax":
            return m.minmax_normalized()
        return m.normalized
    return imgcore.as_gray(m)


def _pair(a, b, normalization):
    va, vb = _values(a, normalization), _values(b, normalization)
    if va.shape != vb.shape:
        raise ShapeError(f"maps differ in shape: {va.shape} vs {vb.shape}")
    return va, vb


def discrepancy_mask(a, b, threshold: float = DEFAULT_THRESHOLD,
                     normalization: str = "sigma_max") -> np.ndarray:
    """Pixels whose normalized defocus differs by at least ``threshold``."""
    va, vb = _pair(a, b, normalization)
    return np.abs(va - vb) >= threshold


def threshold_sweep(a, b, thresholds, normalization: str = "sigma_max"):
    """Activated-pixel count per threshold, as ``[(threshold, count), ...]``."""
    va, vb = _pair(a, b, normalization)
    diff = np.abs(va - vb)
    out = []
    for t in thresholds:
        if not t > 0:
            raise ValueError("thresholds must be positive")
        out.append((float(t), int(np.count_nonzero(diff >= t))))
    return out


def local_variance(m, window: int = DEFAULT_WINDOW, normalization: str = "sigma_max") -> np.ndarray:
    """Windowed variance E[x^2] - E[x]^2 with replicate padding, floored at 0."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    x = _values(m, normalization)
    r = window // 2
    mean = imgcore.box_mean(x, r)
    var = np.maximum(imgcore.box_mean(x * x, r) - mean * mean, 0.0)
    # E[x^2] - E[x]^2 leaves rounding residue on flat windows; zero those exactly
    size = 2 * r + 1
    flat = ndimage.maximum_filter(x, size, mode="nearest") == ndimage.minimum_filter(x, size, mode="nearest")
    var[flat] = 0.0
    return var


def ks_statistic(x, y) -> float:
    xs = np.sort(np.asarray(x, dtype=np.float64))
    ys = np.sort(np.asarray(y, dtype=np.float64))
    pooled = np.concatenate([xs, ys])
    cdf_x = np.searchsorted(xs, pooled, side="right") / len(xs)
    cdf_y = np.searchsorted(ys, pooled, side="right") / len(ys)
    return float(np.max(np.abs(cdf_x - cdf_y)))


def kolmogorov_sf(lam: float, terms: int = KS_SERIES_TERMS) -> float:
    """Q_KS(lambda) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2), clamped to [0, 1]."""
    if lam <= 0:
        return 1.0
    k = np.arange(1, terms + 1, dtype=np.float64)
    total = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam))
    return float(min(1.0, max(0.0, total)))


def ks_two_sample(x, y) -> KsResult:
    """Two-sample KS test with the asymptotic (Stephens-corrected) p-value."""
    n1, n2 = len(x), len(y)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples must be non-empty")
    d = ks_statistic(x, y)
    ne = n1 * n2 / (n1 + n2)
    sq = np.sqrt(ne)
    p = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
    return KsResult(d, p, n1, n2)


def extract_features(m, var=None, window: int = DEFAULT_WINDOW,
                     normalization: str = "sigma_max") -> np.ndarray:
    """24-number descriptor; column order is ``FEATURE_NAMES``."""
    x = _values(m, normalization)
    if var is None:
        var = local_variance(x, window)
    var = np.asarray(var, dtype=np.float64)
    if var.shape != x.shape:
        raise ShapeError(f"variance map {var.shape} does not match defocus map {x.shape}")
    counts, _ = np.histogram(np.clip(x, 0.0, 1.0), bins=HIST_BINS, range=(0.0, 1.0))
    hist = counts / x.size
    stats = [x.mean(), x.std(), x.min(), x.max(), np.median(x), var.mean(), var.max(), var.std()]
    return np.concatenate([np.asarray(stats, dtype=np.float64), hist])

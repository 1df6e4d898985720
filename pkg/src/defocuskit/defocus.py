"""Single-image defocus blur map estimation.

Pipeline: gray conversion, Canny edge map, two-scale gradient-ratio blur at
edge pixels, then dense propagation (guided filter or matting Laplacian).
"""
from __future__ import annotations

import logging
import time
import tracemalloc
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as sparse_linalg

from . import imgcore
from .imgcore import ShapeError

log = logging.getLogger(__name__)

STAGES = ("rgb_to_gray", "edge_map", "sparse_blur_map", "propagation")
PROPAGATION_MODES = ("guided-filter", "matting-laplacian")
CANNY_SIGMA = 1.0
MATTING_EPS = 1e-7


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual_norm):
        super().__init__(f"{message} (residual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class DefocusParams:
    sigma1: float = 1.5
    sigma2: float = 2.0
    epsilon: float = 1e-6
    sigma_max: float = 5.0
    canny_low: float = 0.05
    canny_high: float = 0.15
    propagation: str = "guided-filter"
    gf_radius: int = 15
    gf_eps: float = 1e-3
    gf_subsample: int = 1
    matting_lambda: float = 1e-3
    cg_tol: float = 1e-5
    cg_max_iter: int = 2000

    def __post_init__(self):
        if not 0 < self.sigma1 < self.sigma2:
            raise ValueError("need 0 < sigma1 < sigma2")
        if not (self.epsilon > 0 and self.sigma_max > 0):
            raise ValueError("epsilon and sigma_max must be positive")
        if not 0 < self.canny_low < self.canny_high:
            raise ValueError("need 0 < canny_low < canny_high")
        if self.propagation not in PROPAGATION_MODES:
            raise ValueError(f"propagation must be one of {PROPAGATION_MODES}")
        if self.gf_radius < 1 or not self.gf_eps > 0:
            raise ValueError("gf_radius must be >= 1 and gf_eps > 0")
        if self.gf_subsample < 1:
            raise ValueError("gf_subsample must be >= 1")
        if not (self.matting_lambda > 0 and self.cg_tol > 0 and self.cg_max_iter >= 1):
            raise ValueError("matting_lambda, cg_tol, cg_max_iter must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DefocusParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def updated(self, **changes) -> "DefocusParams":
        return replace(self, **changes)


@dataclass
class SparseBlurEstimate:
    mask: np.ndarray
    sigma_at_edges: np.ndarray
    degenerate_pixels: int = 0


@dataclass
class DefocusMap:
    """Dense per-pixel blur ``sigma`` (pixels) with its clamp ceiling."""

    sigma: np.ndarray
    sigma_max: float = 5.0

    @property
    def shape(self):
        return self.sigma.shape

    @property
    def normalized(self) -> np.ndarray:
        return np.clip(self.sigma / self.sigma_max, 0.0, 1.0)

    def minmax_normalized(self) -> np.ndarray:
        lo, hi = float(self.sigma.min()), float(self.sigma.max())
        if hi - lo <= 0:
            return np.zeros_like(self.sigma)
        return (self.sigma - lo) / (hi - lo)

    @classmethod
    def from_normalized(cls, values, sigma_max: float = 5.0) -> "DefocusMap":
        return cls(np.asarray(values, dtype=np.float64) * sigma_max, sigma_max)


@dataclass
class StageTiming:
    stage: str
    ms: float
    peak_mb: float | None = None

    def to_dict(self) -> dict:
        return {"stage": self.stage, "ms": self.ms, "peak_mb": self.peak_mb}


@dataclass
class Diagnostics:
    degenerate_ratio_pixels: int = 0
    empty_edge_mask: bool = False
    warnings: list = field(default_factory=list)


def sigma_from_ratio(ratio, sigma1: float, sigma2: float, epsilon: float = 1e-6):
    """Invert the two-scale gradient ratio into a blur sigma.

    ``ratio`` is |grad(I*G(sigma1))| / |grad(I*G(sigma2))|; for a Gaussian-blurred
    step of width s it equals sqrt((s^2 + sigma2^2) / (s^2 + sigma1^2)).
    """
    r2 = np.asarray(ratio, dtype=np.float64) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = (r2 * sigma1 ** 2 - sigma2 ** 2) / (1.0 - r2 + epsilon)
    return np.sqrt(np.maximum(np.nan_to_num(s2, nan=0.0, posinf=np.inf, neginf=0.0), 0.0))


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # 0: horizontal gradient, 1: 45 deg, 2: vertical, 3: 135 deg (rows grow downward)
    sector = np.digitize(angle, [22.5, 67.5, 112.5, 157.5]) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dy, dx) in offsets.items():
        fwd = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        # ties broken toward the forward neighbour so plateaus stay one pixel wide
        keep |= (sector == s) & (mag > fwd) & (mag >= bwd)
    return keep & (mag > 0)


def detect_edges(img, params: DefocusParams = DefocusParams()) -> np.ndarray:
    """Canny edges: Gaussian-derivative gradient, NMS, hysteresis.

    Hysteresis thresholds are fractions of the image's peak gradient magnitude.
    """
    gray = imgcore.as_gray(img)
    gx, gy = imgcore.gradients(gray, CANNY_SIGMA)
    mag = np.hypot(gx, gy)
    peak = float(mag.max())
    if peak <= 1e-12:
        return np.zeros(gray.shape, dtype=bool)
    thin = _non_max_suppression(mag, gx, gy)
    strong = thin & (mag >= params.canny_high * peak)
    weak = thin & (mag >= params.canny_low * peak)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(gray.shape, dtype=bool)
    connected = np.zeros(n + 1, dtype=bool)
    connected[np.unique(labels[strong])] = True
    connected[0] = False
    return connected[labels]


def sparse_blur(img, edges, params: DefocusParams = DefocusParams(),
                diagnostics: Diagnostics | None = None) -> SparseBlurEstimate:
    gray = imgcore.as_gray(img)
    mask = np.asarray(edges, dtype=bool)
    if mask.shape != gray.shape:
        raise ShapeError(f"edge mask {mask.shape} does not match image {gray.shape}")
    rows, cols = np.nonzero(mask)
    g1 = imgcore.gradient_magnitude_at(gray, params.sigma1, rows, cols)
    g2 = imgcore.gradient_magnitude_at(gray, params.sigma2, rows, cols)
    ratio = g1 / (g2 + params.epsilon)
    values = sigma_from_ratio(ratio, params.sigma1, params.sigma2, params.epsilon)
    degenerate = np.abs(ratio - 1.0) <= params.epsilon
    values[degenerate] = params.sigma_max
    values = np.clip(values, 0.0, params.sigma_max)
    n_degenerate = int(degenerate.sum())
    if diagnostics is not None:
        diagnostics.degenerate_ratio_pixels += n_degenerate
    sigma = np.zeros(gray.shape, dtype=np.float64)
    sigma[mask] = values
    return SparseBlurEstimate(mask, sigma, n_degenerate)


def matting_laplacian(guide, eps: float = MATTING_EPS, win_radius: int = 1) -> sparse.csr_matrix:
    """Closed-form matting Laplacian of a gray guide over (2r+1)^2 windows.

    Only windows lying fully inside the image contribute.
    """
    img = imgcore.as_gray(guide)
    h, w = img.shape
    k = 2 * win_radius + 1
    n_win = k * k
    if h < k or w < k:
        return sparse.csr_matrix((h * w, h * w))
    idx = np.arange(h * w).reshape(h, w)
    # window pixel indices, one row per window
    win_idx = np.lib.stride_tricks.sliding_window_view(idx, (k, k)).reshape(-1, n_win)
    vals = img.ravel()[win_idx]
    mu = vals.mean(axis=1, keepdims=True)
    var = vals.var(axis=1, keepdims=True)
    d = vals - mu
    inv = 1.0 / (var + eps / n_win)
    # per window: delta_ij - (1 + d_i d_j / (var + eps/|w|)) / |w|
    block = -(1.0 + d[:, :, None] * d[:, None, :] * inv[:, :, None]) / n_win
    block += np.eye(n_win)[None, :, :]
    rows = np.repeat(win_idx, n_win, axis=1).ravel()
    cols = np.tile(win_idx, (1, n_win)).ravel()
    lap = sparse.coo_matrix((block.ravel(), (rows, cols)), shape=(h * w, h * w))
    return lap.tocsr()


def matting_system(sparse_est: SparseBlurEstimate, guide, params: DefocusParams):
    """Build ``A d = b`` with A = L + lambda*Diag(mask), b = lambda*Diag(mask)*sigma."""
    lap = matting_laplacian(guide)
    m = sparse_est.mask.ravel().astype(np.float64)
    lam = params.matting_lambda
    a = (lap + sparse.diags(lam * m)).tocsr()
    b = lam * m * sparse_est.sigma_at_edges.ravel()
    return a, b


def _propagate_matting(sparse_est, guide, params):
    a, b = matting_system(sparse_est, guide, params)
    diag = a.diagonal()
    precond = sparse.diags(1.0 / np.where(diag > 0, diag, 1.0))
    x, info = sparse_linalg.cg(a, b, rtol=params.cg_tol, atol=0.0,
                               maxiter=params.cg_max_iter, M=precond)
    residual = float(np.linalg.norm(b - a @ x))
    if info != 0:
        raise ConvergenceError(
            f"conjugate gradients did not converge in {params.cg_max_iter} iterations", residual)
    return x.reshape(sparse_est.mask.shape)


def _propagate_guided(sparse_est, guide, params):
    gf = imgcore.GuidedFilter(guide, params.gf_radius, params.gf_eps, params.gf_subsample)
    num = gf(sparse_est.sigma_at_edges)
    den = gf(sparse_est.mask.astype(np.float64))
    return num / np.maximum(den, 1e-8)


def propagate(sparse_est: SparseBlurEstimate, guide, params: DefocusParams = DefocusParams(),
              diagnostics: Diagnostics | None = None) -> DefocusMap:
    g = imgcore.as_gray(guide)
    if sparse_est.mask.shape != g.shape:
        raise ShapeError(f"sparse estimate {sparse_est.mask.shape} does not match guide {g.shape}")
    if not sparse_est.mask.any():
        msg = "empty edge mask; returning a zero defocus map"
        log.warning(msg)
        if diagnostics is not None:
            diagnostics.empty_edge_mask = True
            diagnostics.warnings.append(msg)
        return DefocusMap(np.zeros(g.shape), params.sigma_max)
    if params.propagation == "matting-laplacian":
        dense = _propagate_matting(sparse_est, g, params)
    else:
        dense = _propagate_guided(sparse_est, g, params)
    return DefocusMap(np.clip(dense, 0.0, params.sigma_max), params.sigma_max)


def _run_stage(name, fn, timings, track_memory):
    if track_memory:
        tracemalloc.start()
    t0 = time.perf_counter()
    try:
        out = fn()
    finally:
        ms = (time.perf_counter() - t0) * 1000.0
        peak = None
        if track_memory:
            peak = tracemalloc.get_traced_memory()[1] / 2 ** 20
            tracemalloc.stop()
    timings.append(StageTiming(name, ms, peak))
    return out


def estimate_defocus(img, params: DefocusParams = DefocusParams(), track_memory: bool = False,
                     diagnostics: Diagnostics | None = None):
    """Full pipeline. Returns ``(DefocusMap, [StageTiming, ...])``."""
    timings: list[StageTiming] = []
    gray = _run_stage("rgb_to_gray", lambda: imgcore.rgb_to_gray(img), timings, track_memory)
    edges = _run_stage("edge_map", lambda: detect_edges(gray, params), timings, track_memory)
    est = _run_stage("sparse_blur_map", lambda: sparse_blur(gray, edges, params, diagnostics),
                     timings, track_memory)
    dmap = _run_stage("propagation", lambda: propagate(est, gray, params, diagnostics),
                      timings, track_memory)
    return dmap, timings

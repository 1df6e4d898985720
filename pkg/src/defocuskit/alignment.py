"""Defocus-difference vs. saliency alignment.

Both histograms are binned on the fake image's normalized defocus; one is
weighted by the real/fake defocus difference, the other by the clipped
saliency. Their overlap and KL divergence measure how well the saliency
follows the defocus discrepancy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import _values
from .imgcore import ShapeError

DEFAULT_BINS = 20
DEFAULT_EPSILON = 1e-10
SCHEMA_VERSION = 1


@dataclass
class WeightedHistogram:
    n_bins: int
    mass: np.ndarray
    degenerate: bool = False

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def normalized(self) -> np.ndarray:
        t = self.total
        if t > 0:
            return self.mass / t
        return np.full(self.n_bins, 1.0 / self.n_bins)

    def __add__(self, other: "WeightedHistogram") -> "WeightedHistogram":
        if other.n_bins != self.n_bins:
            raise ValueError("bin counts differ")
        mass = self.mass + other.mass
        return WeightedHistogram(self.n_bins, mass, degenerate=not mass.sum() > 0)


@dataclass
class AlignmentReport:
    h_diff: WeightedHistogram
    h_shap: WeightedHistogram
    alignment: float
    kl: float
    n_bins: int
    epsilon: float
    n_pairs: int = 1
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        edges = self.h_diff.edges
        return {
            "schema_version": SCHEMA_VERSION,
            "alignment": self.alignment,
            "kl": self.kl,
            "kl_log_base": "e",
            "n_bins": self.n_bins,
            "epsilon": self.epsilon,
            "n_pairs": self.n_pairs,
            "bin_edges": edges.tolist(),
            "h_diff": self.h_diff.normalized.tolist(),
            "h_shap": self.h_shap.normalized.tolist(),
            "h_diff_mass": self.h_diff.mass.tolist(),
            "h_shap_mass": self.h_shap.mass.tolist(),
            "degenerate": {"h_diff": self.h_diff.degenerate, "h_shap": self.h_shap.degenerate},
            "warnings": list(self.warnings),
        }


def clip_negatives(saliency) -> np.ndarray:
    s = np.asarray(saliency, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("saliency map contains non-finite values")
    return np.maximum(s, 0.0)


def diff_map(d_fake, d_real) -> np.ndarray:
    a, b = _values(d_fake), _values(d_real)
    if a.shape != b.shape:
        raise ShapeError(f"maps differ in shape: {a.shape} vs {b.shape}")
    return np.abs(a - b)


def bin_index(values, n_bins: int) -> np.ndarray:
    """Bin i covers [i/N, (i+1)/N); the last bin also takes 1.0."""
    v = np.asarray(values, dtype=np.float64)
    if np.any((v < 0) | (v > 1)) or not np.all(np.isfinite(v)):
        raise ValueError("binning values must lie in [0, 1]")
    return np.minimum((v * n_bins).astype(np.intp), n_bins - 1)


def weighted_histogram(binning_values, weights, n_bins: int = DEFAULT_BINS) -> WeightedHistogram:
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    v = np.asarray(binning_values, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if v.size != w.size:
        raise ShapeError(f"{v.size} binning values vs {w.size} weights")
    mass = np.bincount(bin_index(v, n_bins), weights=w, minlength=n_bins).astype(np.float64)
    return WeightedHistogram(n_bins, mass, degenerate=not mass.sum() > 0)


def _probabilities(h) -> np.ndarray:
    return h.normalized if isinstance(h, WeightedHistogram) else np.asarray(h, dtype=np.float64)


def alignment_score(h_shap, h_diff) -> float:
    """Sum of per-bin minima of the two normalized histograms."""
    p, q = _probabilities(h_shap), _probabilities(h_diff)
    if p.shape != q.shape:
        raise ValueError(f"bin counts differ: {p.size} vs {q.size}")
    return float(np.minimum(p, q).sum())


def kl_divergence(h_shap, h_diff, epsilon: float = DEFAULT_EPSILON) -> float:
    """KL(shap || diff) in nats with epsilon smoothing inside the log."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    p, q = _probabilities(h_shap), _probabilities(h_diff)
    if p.shape != q.shape:
        raise ValueError(f"bin counts differ: {p.size} vs {q.size}")
    return float(np.sum(p * np.log((p + epsilon) / (q + epsilon))))


def pair_histograms(d_real, d_fake, saliency, n_bins: int = DEFAULT_BINS):
    """``(h_diff, h_shap)`` for one real/fake pair."""
    fake = _values(d_fake)
    m_diff = diff_map(d_fake, d_real)
    s = clip_negatives(saliency)
    if s.shape != fake.shape:
        raise ShapeError(f"saliency {s.shape} does not match defocus maps {fake.shape}")
    return weighted_histogram(fake, m_diff, n_bins), weighted_histogram(fake, s, n_bins)


def report_from_histograms(h_diff, h_shap, epsilon: float = DEFAULT_EPSILON, n_pairs: int = 1):
    warnings = []
    if h_shap.degenerate:
        warnings.append("saliency histogram has zero mass; using a uniform distribution")
    if h_diff.degenerate:
        warnings.append("defocus-difference histogram has zero mass; using a uniform distribution")
    return AlignmentReport(
        h_diff=h_diff, h_shap=h_shap,
        alignment=alignment_score(h_shap, h_diff),
        kl=kl_divergence(h_shap, h_diff, epsilon),
        n_bins=h_diff.n_bins, epsilon=epsilon, n_pairs=n_pairs, warnings=warnings,
    )


def analyze_alignment(d_real, d_fake, saliency, n_bins: int = DEFAULT_BINS,
                      epsilon: float = DEFAULT_EPSILON) -> AlignmentReport:
    h_diff, h_shap = pair_histograms(d_real, d_fake, saliency, n_bins)
    return report_from_histograms(h_diff, h_shap, epsilon)


def analyze_pooled(pairs, n_bins: int = DEFAULT_BINS, epsilon: float = DEFAULT_EPSILON) -> AlignmentReport:
    """Sum raw histogram mass over ``(d_real, d_fake, saliency)`` triples, then normalize once."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to pool")
    h_diff = h_shap = None
    for d_real, d_fake, sal in pairs:
        hd, hs = pair_histograms(d_real, d_fake, sal, n_bins)
        h_diff = hd if h_diff is None else h_diff + hd
        h_shap = hs if h_shap is None else h_shap + hs
    return report_from_histograms(h_diff, h_shap, epsilon, n_pairs=len(pairs))

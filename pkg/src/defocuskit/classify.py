"""Logistic baseline over defocus features, with AUC and DeLong intervals.

Labels: real = 0, fake = 1 (fake is the positive class).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

MODEL_SCHEMA_VERSION = 1


class TrainingError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    kept: np.ndarray
    feature_names: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.kept)

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "kept": self.kept.tolist(),
            "feature_names": list(self.feature_names),
            "dropped_features": [n for n, k in zip(self.feature_names, self.kept) if not k],
            "final_loss": self.loss_history[-1] if self.loss_history else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]),
                   np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   np.asarray(d["kept"], dtype=bool), list(d.get("feature_names", [])))


@dataclass
class EvalReport:
    accuracy: float
    recall: float
    auc: float
    auc_ci_95: tuple
    threshold: float
    n_real: int
    n_fake: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "recall": self.recall, "auc": self.auc,
                "auc_ci_95": list(self.auc_ci_95), "threshold": self.threshold,
                "n_real": self.n_real, "n_fake": self.n_fake}


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_grad(w, b, x, y, l2: float):
    """Mean logistic loss plus ``l2/2 * |w|^2``, and its gradient in (w, b)."""
    z = x @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * float(w @ w)
    r = (sigmoid(z) - y) / len(y)
    return float(loss), x.T @ r + l2 * w, float(r.sum())


def _standardize_fit(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    kept = std > 1e-12
    return mean, np.where(kept, std, 1.0), kept


def train_logistic(x, y, lr: float = 0.5, epochs: int = 500, l2: float = 1e-3,
                   feature_names=None) -> LogisticModel:
    """Full-batch gradient descent from zero weights.

    A step that raises the loss is retried with half the learning rate, so the
    recorded loss never increases.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise TrainingError("features must be (n_samples, n_features) matching labels")
    if not lr > 0:
        raise TrainingError("lr must be positive")
    if len(np.unique(y)) < 2:
        raise TrainingError("training data must contain both classes")
    mean, std, kept = _standardize_fit(x)
    xs = ((x - mean) / std)[:, kept]
    w = np.zeros(xs.shape[1])
    b = 0.0
    loss, gw, gb = loss_and_grad(w, b, xs, y, l2)
    history = [loss]
    step = lr
    for _ in range(epochs):
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss, new_gw, new_gb = loss_and_grad(w_new, b_new, xs, y, l2)
            if new_loss <= loss + 1e-12 or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        history.append(loss)
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(x.shape[1])]
    return LogisticModel(w, b, mean, std, kept, names, history)


def decision_function(model: LogisticModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.shape[1]}")
    xs = ((x - model.mean) / model.std)[:, model.kept]
    return xs @ model.weights + model.bias


def predict(model: LogisticModel, x) -> np.ndarray:
    return sigmoid(decision_function(model, x))


def _split_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels).astype(int)
    if s.shape != lab.shape:
        raise MetricError("scores and labels differ in length")
    pos, neg = s[lab == 1], s[lab == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("AUC needs both classes")
    return pos, neg


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_fake > score_real) with ties counted 1/2."""
    pos, neg = _split_scores(scores, labels)
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def placement_values(scores, labels):
    """DeLong structural components: (V10 per fake sample, V01 per real sample)."""
    pos, neg = _split_scores(scores, labels)
    m, n = len(pos), len(neg)
    all_ranks = stats.rankdata(np.concatenate([pos, neg]))
    pos_ranks = stats.rankdata(pos)
    neg_ranks = stats.rankdata(neg)
    v10 = (all_ranks[:m] - pos_ranks) / n
    v01 = 1.0 - (all_ranks[m:] - neg_ranks) / m
    return v10, v01


def delong_variance(scores, labels) -> float:
    v10, v01 = placement_values(scores, labels)
    if len(v10) < 2 or len(v01) < 2:
        raise MetricError("DeLong variance needs at least 2 samples per class")
    return float(np.var(v10, ddof=1) / len(v10) + np.var(v01, ddof=1) / len(v01))


def delong_ci(scores, labels, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    auc = roc_auc(scores, labels)
    se = np.sqrt(delong_variance(scores, labels))
    z = stats.norm.ppf(0.5 + level / 2.0)
    return float(max(0.0, auc - z * se)), float(min(1.0, auc + z * se))


def evaluate(model: LogisticModel, x, y, threshold: float = 0.5) -> EvalReport:
    scores = predict(model, x)
    return evaluate_scores(scores, y, threshold)


def evaluate_scores(scores, y, threshold: float = 0.5) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y).astype(int)
    pred = (scores >= threshold).astype(int)
    accuracy = float(np.mean(pred == y))
    recall = float(np.mean(pred[y == 1] == 1)) if np.any(y == 1) else float("nan")
    auc = roc_auc(scores, y)
    lo, hi = delong_ci(scores, y)
    return EvalReport(accuracy, recall, auc, (lo, hi), threshold,
                      int(np.sum(y == 0)), int(np.sum(y == 1)))

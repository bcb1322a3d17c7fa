"""Metrics and influence diagnostics.

ESS (normalized perplexity of relevance scores), top-k recall, RMSE,
Gaussian predictive NLL, leverage and leave-one-out residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import row_quad
from .errors import InputError
from .model import Dataset, WeightPosterior, Prediction, LOG_2PI

ESS_EPS = 1e-12


@dataclass(frozen=True)
class RelevanceScores:
    """Nonnegative relevance scores; ``kind`` is "weights" or "samples"."""

    scores: np.ndarray
    kind: str = "weights"

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise InputError("scores must be a nonempty vector")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise InputError("scores must be finite and nonnegative")
        if self.kind not in ("weights", "samples"):
            raise InputError("kind must be 'weights' or 'samples'")
        object.__setattr__(self, "scores", s)

    @classmethod
    def from_precisions(cls, gamma):
        return cls(1.0 / np.asarray(gamma, dtype=float), "weights")

    @classmethod
    def from_noise(cls, lam):
        return cls(1.0 / np.asarray(lam, dtype=float), "samples")


@dataclass(frozen=True)
class DiagnosticsReport:
    leverage: np.ndarray
    residuals: np.ndarray
    loo_sq_residuals: np.ndarray
    lam: np.ndarray
    flagged: np.ndarray  # True where h_i >= 1 and the LOO entry is +inf


def ess(scores) -> float:
    """Effective support size in (0, 1].

    Scores are floored at 1e-12, normalized to a distribution p and the
    result is ``exp(H(p)) / m``.
    """
    if isinstance(scores, RelevanceScores):
        s = scores.scores
    else:
        s = RelevanceScores(scores).scores
    if not np.any(s > 0):
        raise InputError("ESS needs at least one strictly positive score")
    s = np.maximum(s, ESS_EPS)
    p = s / s.sum()
    return float(np.exp(-np.sum(p * np.log(p))) / s.size)


def topk_indices(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties go to the lowest index."""
    s = np.asarray(scores, dtype=float)
    return np.argsort(-s, kind="stable")[:k]


def topk_recall(scores, truth, k: int) -> float:
    """Fraction of ``truth`` found among the top-k scores."""
    s = np.asarray(scores, dtype=float)
    if not isinstance(truth, (set, frozenset)):
        truth = np.atleast_1d(truth).tolist()
    truth = {int(t) for t in truth}
    if not truth:
        raise InputError("truth set is empty")
    k = int(k)
    if not 1 <= k <= s.size:
        raise InputError(f"k must lie in [1, {s.size}], got {k}")
    hits = truth.intersection(int(i) for i in topk_indices(s, k))
    return len(hits) / len(truth)


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.ndim != 1 or pred.size == 0:
        raise InputError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def predictive_nll(preds, targets) -> float:
    """Mean Gaussian NLL.

    ``preds`` is a sequence of :class:`Prediction` or a ``(means, variances)``
    pair of arrays.
    """
    if isinstance(preds, tuple) and len(preds) == 2 and not isinstance(preds[0], Prediction):
        mean, var = (np.asarray(a, dtype=float) for a in preds)
    else:
        mean = np.array([p.mean for p in preds], dtype=float)
        var = np.array([p.variance for p in preds], dtype=float)
    y = np.asarray(targets, dtype=float)
    if mean.shape != y.shape or var.shape != y.shape:
        raise InputError("predictions and targets differ in length")
    if np.any(~(var > 0)):
        raise InputError("predictive variances must be positive")
    return float(np.mean(0.5 * (LOG_2PI + np.log(var)) + (y - mean) ** 2 / (2.0 * var)))


def leverage(data: Dataset, posterior: WeightPosterior, noise) -> np.ndarray:
    """Per-sample leverage ``h_i = x_i' Sigma x_i / lam_i``."""
    lam = noise.variances(data.n)
    q = row_quad(data.X, posterior.cov)
    return np.maximum(q, 0.0) / lam


def _flagged_ratio(residuals, leverage, p):
    r = np.asarray(residuals, dtype=float)
    h = np.asarray(leverage, dtype=float)
    if r.shape != h.shape:
        raise InputError("residuals and leverage differ in shape")
    flag = h >= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r**2 / (1.0 - h) ** p
    return np.where(flag, np.inf, out), flag


def loo_sq_residuals(residuals, leverage, return_flags: bool = False):
    """Squared leave-one-out residuals ``r_i^2 / (1 - h_i)^2``.

    Entries with ``h_i >= 1`` are +inf; pass ``return_flags`` to also get
    the boolean mask of those entries.
    """
    out, flag = _flagged_ratio(residuals, leverage, 2.0)
    return (out, flag) if return_flags else out


def studentized_lambda_update(residuals, leverage, p: float = 2.0):
    """Studentized noise proposal ``r_i^2 / (1 - h_i)^p``; +inf where h_i >= 1."""
    if not p >= 2:
        raise InputError("p must be >= 2")
    return _flagged_ratio(residuals, leverage, float(p))[0]


def diagnostics(data: Dataset, posterior: WeightPosterior, noise) -> DiagnosticsReport:
    h = leverage(data, posterior, noise)
    r = data.y - data.X @ posterior.mu
    loo, flag = loo_sq_residuals(r, h, return_flags=True)
    return DiagnosticsReport(h, r, loo, noise.variances(data.n), flag)

"""Feature construction: standardization, polynomial powers, RBF basis
(relevance-vector style) and random Fourier features.

Maps act on standardized inputs. Lengthscales left as ``None`` are resolved
once on the training rows by the median heuristic (:func:`fit_map`); the
resolved spec and centers are then reused unchanged on test rows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InputError
from .model import Dataset

MEDIAN_SUBSAMPLE = 1000


@dataclass(frozen=True)
class Identity:
    name = "identity"


@dataclass(frozen=True)
class Polynomial:
    degree: int = 2
    include_bias: bool = True
    name = "polynomial"

    def __post_init__(self):
        if int(self.degree) < 1:
            raise InputError("polynomial degree must be >= 1")


@dataclass(frozen=True)
class RbfBasis:
    lengthscale: Optional[float] = None
    name = "rbf"

    def __post_init__(self):
        if self.lengthscale is not None and not self.lengthscale > 0:
            raise InputError("lengthscale must be positive")


@dataclass(frozen=True)
class RandomFourier:
    out_dim: int = 256
    lengthscale: Optional[float] = None
    seed: int = 0
    name = "rff"

    def __post_init__(self):
        if int(self.out_dim) < 1:
            raise InputError("out_dim must be a positive integer")
        if self.lengthscale is not None and not self.lengthscale > 0:
            raise InputError("lengthscale must be positive")


FeatureMapSpec = Union[Identity, Polynomial, RbfBasis, RandomFourier]


def map_from_dict(d: Optional[dict]) -> FeatureMapSpec:
    if not d:
        return Identity()
    d = dict(d)
    kind = d.pop("kind", "identity")
    table = {"identity": Identity, "polynomial": Polynomial, "rbf": RbfBasis, "rff": RandomFourier}
    if kind not in table:
        raise InputError(f"unknown feature map {kind!r}")
    try:
        return table[kind](**d)
    except TypeError as exc:
        raise InputError(str(exc)) from None


def map_to_dict(spec: FeatureMapSpec) -> dict:
    out = {"kind": spec.name}
    for k in ("degree", "include_bias", "lengthscale", "out_dim", "seed"):
        if hasattr(spec, k):
            out[k] = getattr(spec, k)
    return out


@dataclass(frozen=True)
class StandardizerStats:
    means: np.ndarray
    scales: np.ndarray
    target_mean: float
    target_scale: float

    def transform_X(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.means.size:
            raise InputError(f"expected {self.means.size} input columns, got {X.shape[1]}")
        return (X - self.means) / self.scales

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_scale

    def inverse_y(self, y):
        return np.asarray(y, dtype=float) * self.target_scale + self.target_mean

    def to_json(self) -> dict:
        return {
            "means": [float(v) for v in self.means],
            "scales": [float(v) for v in self.scales],
            "target_mean": float(self.target_mean),
            "target_scale": float(self.target_scale),
        }

    @classmethod
    def from_json(cls, d: dict) -> "StandardizerStats":
        return cls(np.asarray(d["means"], float), np.asarray(d["scales"], float),
                   float(d["target_mean"]), float(d["target_scale"]))

    @classmethod
    def identity(cls, d: int) -> "StandardizerStats":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)


def _guarded_std(a, axis=None):
    s = np.std(a, axis=axis)  # population convention
    return np.where(s > 0, s, 1.0)


def standardize_fit(train: Dataset) -> StandardizerStats:
    """Column means and population standard deviations of the training split.

    Zero-variance columns (and a constant target) get scale 1.
    """
    if train.n < 2:
        raise InputError("standardization needs at least two rows")
    return StandardizerStats(
        means=train.X.mean(axis=0),
        scales=_guarded_std(train.X, axis=0),
        target_mean=float(train.y.mean()),
        target_scale=float(_guarded_std(train.y)),
    )


def median_heuristic(Z) -> float:
    """Median pairwise Euclidean distance over at most 1000 evenly spaced rows."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] > MEDIAN_SUBSAMPLE:
        Z = Z[np.linspace(0, Z.shape[0] - 1, MEDIAN_SUBSAMPLE).astype(int)]
    if Z.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(Z)))
    return med if med > 0 else 1.0


def fit_map(spec: FeatureMapSpec, stats: StandardizerStats, X_train_raw):
    """Fix data-dependent map parameters on the training rows.

    Returns ``(resolved_spec, centers)``. ``centers`` is the standardized
    training design for :class:`RbfBasis` and ``None`` otherwise.
    """
    Z = stats.transform_X(X_train_raw)
    centers = None
    if isinstance(spec, (RbfBasis, RandomFourier)) and spec.lengthscale is None:
        spec = replace(spec, lengthscale=median_heuristic(Z))
    if isinstance(spec, RbfBasis):
        centers = Z
    return spec, centers


def rff_params(spec: RandomFourier, in_dim: int):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(spec.seed) % 2**64)))
    W = rng.standard_normal((int(spec.out_dim), in_dim)) / spec.lengthscale
    b = rng.uniform(0.0, 2.0 * np.pi, size=int(spec.out_dim))
    return W, b


def apply_map(spec: FeatureMapSpec, stats: StandardizerStats, X_raw, centers=None):
    """Standardize ``X_raw`` and apply the feature map."""
    Z = stats.transform_X(X_raw)
    if isinstance(spec, Identity):
        return Z
    if isinstance(spec, Polynomial):
        cols = [Z**p for p in range(1, int(spec.degree) + 1)]
        # per input feature: x, x^2, ..., x^degree
        out = np.stack(cols, axis=2).reshape(Z.shape[0], -1)
        if spec.include_bias:
            out = np.hstack([np.ones((Z.shape[0], 1)), out])
        return out
    if spec.lengthscale is None:
        raise InputError("lengthscale unresolved; call fit_map on the training rows first")
    if isinstance(spec, RbfBasis):
        if centers is None:
            raise InputError("RBF basis needs centers (the standardized training rows)")
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        sq = cdist(Z, centers, "sqeuclidean")
        return np.exp(-sq / (2.0 * spec.lengthscale**2))
    if isinstance(spec, RandomFourier):
        W, b = rff_params(spec, Z.shape[1])
        return np.sqrt(2.0 / spec.out_dim) * np.cos(Z @ W.T + b)
    raise InputError(f"unsupported feature map {spec!r}")

"""Synthetic sparse regression with variance-inflation outliers, target
contamination for real data, and train/test splitting.

Randomness comes from numpy's counter-based Philox generator. Each quantity
draws from its own named stream, ``SeedSequence(seed, spawn_key=(id,))``,
so changing e.g. the outlier fraction does not perturb the design matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError
from .model import Dataset

STREAMS = {
    "design": 0,
    "theta": 1,
    "support": 2,
    "noise": 3,
    "outliers": 4,
    "test": 5,
    "contamination": 6,
    "split": 7,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent Philox generator for the named stream."""
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 500
    d: int = 50
    sparsity_ratio: float = 0.2
    rho: float = 0.2
    sigma: float = 0.2
    multiplier: float = 10.0
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if int(self.n) < 1 or int(self.d) < 1:
            raise InputError("n and d must be positive integers")
        if not 0 < self.sparsity_ratio <= 1:
            raise InputError("sparsity_ratio must lie in (0, 1]")
        if math.floor(self.sparsity_ratio * self.d) < 1:
            raise InputError("sparsity_ratio * d must select at least one feature")
        if not 0 <= self.rho < 1:
            raise InputError("rho must lie in [0, 1)")
        if not self.sigma > 0:
            raise InputError("sigma must be positive")
        if not self.multiplier > 0:
            raise InputError("multiplier must be positive")
        if int(self.n_test) < 0:
            raise InputError("n_test must be nonnegative")

    @property
    def n_support(self) -> int:
        return math.floor(self.sparsity_ratio * self.d)

    @property
    def n_outliers(self) -> int:
        return math.floor(self.rho * self.n)


@dataclass(frozen=True)
class GroundTruth:
    theta_true: np.ndarray
    support: np.ndarray
    outliers: np.ndarray
    per_sample_sigma: np.ndarray
    sigma: float = float("nan")
    multiplier: float = float("nan")

    def to_json(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta_true],
            "support": [int(i) for i in self.support],
            "outliers": [int(i) for i in self.outliers],
            "sigma": float(self.sigma),
            "multiplier": float(self.multiplier),
        }


@dataclass(frozen=True)
class ContaminationSpec:
    rho: float = 0.1
    amplitude: float = 3.0
    delta_mean: float = 1.0
    delta_std: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise InputError("contamination rho must lie in [0, 1)")
        if not self.amplitude > 0:
            raise InputError("contamination amplitude must be positive")
        if not self.delta_std > 0:
            raise InputError("contamination delta_std must be positive")


def gen_sparse_linear(spec: SyntheticSpec):
    """Draw a sparse linear problem with a random outlier subset.

    Returns ``(train, test, truth)``. Outlier rows have noise standard
    deviation ``multiplier * sigma``; test rows are never corrupted.
    """
    n, d = int(spec.n), int(spec.d)
    X = stream(spec.seed, "design").standard_normal((n, d))
    support = np.sort(stream(spec.seed, "support").choice(d, spec.n_support, replace=False))
    theta = np.zeros(d)
    theta[support] = stream(spec.seed, "theta").standard_normal(support.size)
    outliers = np.sort(stream(spec.seed, "outliers").choice(n, spec.n_outliers, replace=False))
    sig = np.full(n, float(spec.sigma))
    sig[outliers] *= spec.multiplier
    y = X @ theta + sig * stream(spec.seed, "noise").standard_normal(n)

    rng = stream(spec.seed, "test")
    Xt = rng.standard_normal((int(spec.n_test), d))
    yt = Xt @ theta + spec.sigma * rng.standard_normal(int(spec.n_test))
    truth = GroundTruth(theta, support.astype(np.int64), outliers.astype(np.int64), sig,
                        float(spec.sigma), float(spec.multiplier))
    return Dataset(X, y), Dataset(Xt, yt) if spec.n_test > 0 else None, truth


def contaminate_targets(y, spec: ContaminationSpec):
    """Add signed perturbations ``a * s_i * delta_i`` on a random subset.

    ``y`` is expected to be standardized already. Returns a new vector and
    the sorted corrupted indices.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    k = math.floor(spec.rho * n)
    rng = stream(spec.seed, "contamination")
    idx = np.sort(rng.choice(n, k, replace=False))
    signs = rng.choice(np.array([-1.0, 1.0]), size=k)
    delta = rng.normal(spec.delta_mean, spec.delta_std, size=k)
    out = y.copy()
    out[idx] += spec.amplitude * signs * delta
    return out, idx.astype(np.int64)


def split_indices(n: int, test_fraction: float, cap_train: Optional[int] = None, seed: int = 0):
    if not 0 < test_fraction < 1:
        raise InputError("test_fraction must lie in (0, 1)")
    n_test = math.floor(test_fraction * n)
    if n_test < 1 or n - n_test < 1:
        raise InputError(f"split of n={n} with test_fraction={test_fraction} leaves an empty part")
    perm = stream(seed, "split").permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    if cap_train is not None:
        if int(cap_train) < 1:
            raise InputError("cap_train must be a positive integer")
        train_idx = train_idx[: int(cap_train)]
    return np.sort(train_idx), np.sort(test_idx)


def split(data: Dataset, test_fraction: float = 0.2, cap_train: Optional[int] = None, seed: int = 0):
    """Random disjoint train/test partition; test size is ``floor(test_fraction * n)``.

    With ``cap_train`` the training part is a uniform subsample of that size.
    """
    tr, te = split_indices(data.n, test_fraction, cap_train, seed)
    return data.subset(tr), data.subset(te)

"""Reference point estimators: ordinary least squares and ridge regression.

Both report a Gaussian predictive distribution with a single residual
variance so they can be scored by the same RMSE / NLL metrics as the ARD
fits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError
from .model import Dataset


@dataclass(frozen=True)
class LinearFit:
    theta: np.ndarray
    noise_var: float

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mean = X @ self.theta
        return mean, np.full(mean.shape, self.noise_var)


def ols(data: Dataset) -> LinearFit:
    """Minimum-norm least squares; noise variance RSS / max(n - d, 1)."""
    theta, *_ = linalg.lstsq(data.X, data.y)
    r = data.y - data.X @ theta
    dof = max(data.n - data.d, 1)
    return LinearFit(theta, max(float(r @ r) / dof, 1e-12))


def ridge(data: Dataset, alpha: float = 1.0) -> LinearFit:
    """Ridge regression with penalty ``alpha * ||theta||^2``."""
    if not alpha > 0:
        raise InputError("ridge alpha must be positive")
    a = data.X.T @ data.X
    a[np.diag_indices_from(a)] += alpha
    theta = linalg.solve(a, data.X.T @ data.y, assume_a="pos")
    r = data.y - data.X @ theta
    return LinearFit(theta, max(float(r @ r) / data.n, 1e-12))

"""Joint ARD linear-Gaussian model: objective, posterior, gradients, prediction.

Weights carry per-coordinate precisions ``gamma`` and samples carry noise
variances ``lam`` (one shared value or one per sample). Everything in this
module is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ._linalg import chol_inverse, chol_logdet, chol_solve, col_quad, robust_cholesky, row_quad
from .errors import InputError

LOG_2PI = float(np.log(2.0 * np.pi))


def _frozen(a, ndim, name):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``X`` (n x d) and targets ``y`` (n). Immutable."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _frozen(self.X, 2, "X")
        y = _frozen(self.y, 1, "y")
        if X.shape[0] != y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise InputError("Dataset needs n >= 1 and d >= 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows])


@dataclass(frozen=True)
class Homoscedastic:
    """One noise variance shared by every sample."""

    lam: float

    def __post_init__(self):
        lam = float(self.lam)
        if not (np.isfinite(lam) and lam > 0):
            raise InputError(f"noise variance must be positive and finite, got {lam}")
        object.__setattr__(self, "lam", lam)

    hetero = False

    def variances(self, n: int) -> np.ndarray:
        return np.full(n, self.lam)

    def log_values(self) -> np.ndarray:
        return np.log(np.atleast_1d(self.lam))


@dataclass(frozen=True)
class Heteroscedastic:
    """One noise variance per sample."""

    lam: np.ndarray

    def __post_init__(self):
        lam = _frozen(self.lam, 1, "lam")
        if np.any(lam <= 0):
            raise InputError("noise variances must be strictly positive")
        object.__setattr__(self, "lam", lam)

    hetero = True

    def variances(self, n: int) -> np.ndarray:
        if self.lam.shape[0] != n:
            raise InputError(f"expected {n} noise variances, got {self.lam.shape[0]}")
        return np.array(self.lam)

    def log_values(self) -> np.ndarray:
        return np.log(self.lam)


NoiseModel = Union[Homoscedastic, Heteroscedastic]


@dataclass(frozen=True)
class ArdState:
    """Weight precisions plus a noise model."""

    gamma: np.ndarray
    noise: NoiseModel

    def __post_init__(self):
        gamma = _frozen(self.gamma, 1, "gamma")
        if np.any(gamma <= 0):
            raise InputError("weight precisions must be strictly positive")
        if not isinstance(self.noise, (Homoscedastic, Heteroscedastic)):
            raise InputError(f"unsupported noise model {type(self.noise).__name__}")
        object.__setattr__(self, "gamma", gamma)

    def check(self, data: Dataset) -> None:
        if self.gamma.shape[0] != data.d:
            raise InputError(
                f"state has {self.gamma.shape[0]} precisions but data has d={data.d}"
            )
        if self.noise.hetero and self.noise.lam.shape[0] != data.n:
            raise InputError(
                f"state has {self.noise.lam.shape[0]} noise variances but data has n={data.n}"
            )

    @classmethod
    def initial(cls, data: Dataset, gamma0=0.1, lam0=0.1, hetero=True) -> "ArdState":
        noise = Heteroscedastic(np.full(data.n, lam0)) if hetero else Homoscedastic(lam0)
        return cls(np.full(data.d, gamma0), noise)


@dataclass(frozen=True)
class WeightPosterior:
    """Gaussian posterior N(mu, cov) over the weights."""

    mu: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class Moments:
    """Quantities derived from one factorization at a given state.

    ``pi_diag`` is diag(Sigma_y^{-1}), ``pi_y`` is Sigma_y^{-1} y and
    ``xpx_diag`` holds x_j^T Sigma_y^{-1} x_j for every column j. ``q`` holds
    the row quadratic forms x_i^T Sigma_theta x_i.
    """

    posterior: WeightPosterior
    residual: np.ndarray
    q: np.ndarray
    pi_diag: np.ndarray
    pi_y: np.ndarray
    xpx_diag: np.ndarray
    nll: float
    form: str
    jitter: float


def _dual_factor(data, state):
    lam = state.noise.variances(data.n)
    Xs = data.X / lam[:, None]
    prec = Xs.T @ data.X
    prec[np.diag_indices_from(prec)] += state.gamma
    chol, jitter = robust_cholesky(prec, name="posterior precision (Gamma + X^T Lambda^-1 X)")
    ytil = Xs.T @ data.y
    return lam, chol, jitter, ytil


def _primal_factor(data, state):
    lam = state.noise.variances(data.n)
    Xg = data.X / state.gamma
    cov_y = Xg @ data.X.T
    cov_y[np.diag_indices_from(cov_y)] += lam
    chol, jitter = robust_cholesky(cov_y, name="marginal covariance Sigma_y")
    return lam, chol, jitter


def compute_posterior(data: Dataset, state: ArdState) -> WeightPosterior:
    """Exact weight posterior via a Cholesky factor of Gamma + X^T Lambda^-1 X."""
    state.check(data)
    _, chol, _, ytil = _dual_factor(data, state)
    mu = chol_solve(chol, ytil)
    return WeightPosterior(mu=mu, cov=chol_inverse(chol))


def nll_primal(data: Dataset, state: ArdState) -> float:
    """Negative log marginal likelihood evaluated through the n x n covariance."""
    state.check(data)
    _, chol, _ = _primal_factor(data, state)
    alpha = chol_solve(chol, data.y)
    return 0.5 * (data.n * LOG_2PI + chol_logdet(chol) + float(data.y @ alpha))


def nll_dual(data: Dataset, state: ArdState) -> float:
    """Negative log marginal likelihood evaluated through the d x d precision.

    Uses the determinant lemma and Woodbury identity, so only a d x d matrix
    is factorized. Agrees with :func:`nll_primal` including constants.
    """
    state.check(data)
    lam, chol, _, ytil = _dual_factor(data, state)
    mu = chol_solve(chol, ytil)
    logdet = chol_logdet(chol) - np.sum(np.log(state.gamma)) + np.sum(np.log(lam))
    quad = float(data.y @ (data.y / lam)) - float(ytil @ mu)
    return 0.5 * (data.n * LOG_2PI + logdet + quad)


def moments(data: Dataset, state: ArdState, form: str | None = None) -> Moments:
    """Posterior and precision terms from a single factorization.

    ``form`` selects the d x d route ("dual") or the n x n route ("primal");
    by default the dual route is used whenever d <= n.
    """
    state.check(data)
    if form is None:
        form = "dual" if data.d <= data.n else "primal"
    X, y, gamma = data.X, data.y, state.gamma
    if form == "dual":
        lam, chol, jitter, ytil = _dual_factor(data, state)
        mu = chol_solve(chol, ytil)
        cov = chol_inverse(chol)
        r = y - X @ mu
        q = row_quad(X, cov)
        pi_diag = 1.0 / lam - q / lam**2
        pi_y = r / lam
        xpx = gamma * (1.0 - gamma * np.diag(cov))
        logdet = chol_logdet(chol) - np.sum(np.log(gamma)) + np.sum(np.log(lam))
        quad = float(y @ (y / lam)) - float(ytil @ mu)
    elif form == "primal":
        lam, chol, jitter = _primal_factor(data, state)
        pi = chol_inverse(chol)
        pi_y = pi @ y
        pi_diag = np.diag(pi).copy()
        Xg = X / gamma
        mu = Xg.T @ pi_y
        cov = np.diag(1.0 / gamma) - Xg.T @ pi @ Xg
        cov = 0.5 * (cov + cov.T)
        r = y - X @ mu
        q = lam - lam**2 * pi_diag
        xpx = col_quad(X, pi)
        logdet = chol_logdet(chol)
        quad = float(y @ pi_y)
    else:
        raise InputError(f"unknown form {form!r}")
    nll = 0.5 * (data.n * LOG_2PI + logdet + quad)
    return Moments(
        posterior=WeightPosterior(mu=mu, cov=cov),
        residual=r,
        q=q,
        pi_diag=pi_diag,
        pi_y=pi_y,
        xpx_diag=np.maximum(xpx, 0.0),
        nll=float(nll),
        form=form,
        jitter=jitter,
    )


def grad_from_moments(m: Moments, state: ArdState):
    gamma = state.gamma
    mu = m.posterior.mu
    # x_j^T Pi_y y = gamma_j mu_j
    grad_gamma = -0.5 / gamma**2 * (m.xpx_diag - (gamma * mu) ** 2)
    grad_lam = 0.5 * (m.pi_diag - m.pi_y**2)
    if not state.noise.hetero:
        return grad_gamma, float(np.sum(grad_lam))
    return grad_gamma, grad_lam


def nll_grad(data: Dataset, state: ArdState, form: str | None = None):
    """Analytic gradient of the negative log marginal likelihood.

    Returns ``(grad_gamma, grad_noise)`` where ``grad_noise`` is a scalar for
    homoscedastic noise and a length-n vector otherwise.
    """
    m = moments(data, state, form=form)
    return grad_from_moments(m, state)


def predict(posterior: WeightPosterior, lambda_base: float, x_star) -> Prediction:
    """Posterior predictive mean and variance at a single input."""
    if not lambda_base > 0:
        raise InputError("lambda_base must be positive")
    x = np.asarray(x_star, dtype=float)
    if x.shape != posterior.mu.shape:
        raise InputError(f"x_star has shape {x.shape}, expected {posterior.mu.shape}")
    quad = max(float(x @ posterior.cov @ x), 0.0)
    return Prediction(mean=float(x @ posterior.mu), variance=float(lambda_base) + quad)


def predict_batch(posterior: WeightPosterior, lambda_base: float, X):
    """Vectorized :func:`predict` over the rows of ``X``; returns (means, variances)."""
    if not lambda_base > 0:
        raise InputError("lambda_base must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != posterior.mu.shape[0]:
        raise InputError(f"X has {X.shape[1]} columns, expected {posterior.mu.shape[0]}")
    quad = np.maximum(row_quad(X, posterior.cov), 0.0)
    return X @ posterior.mu, float(lambda_base) + quad


@dataclass(frozen=True)
class Mean:
    pass


@dataclass(frozen=True)
class TrimmedMean:
    alpha: float = 0.05


def lambda_base(noise: NoiseModel, policy=Mean()) -> float:
    """Plug-in base noise level for predictive variances.

    ``TrimmedMean(alpha)`` averages the learned variances lying inside the
    inclusive band between the alpha and 1 - alpha empirical quantiles
    (linear interpolation).
    """
    if isinstance(policy, Mean):
        if not noise.hetero:
            return float(noise.lam)
        return float(np.mean(noise.lam))
    if isinstance(policy, TrimmedMean):
        if not noise.hetero:
            raise InputError("trimmed mean needs heteroscedastic noise")
        if not 0 <= policy.alpha < 0.5:
            raise InputError(f"trim alpha must lie in [0, 0.5), got {policy.alpha}")
        lam = noise.lam
        lo, hi = np.quantile(lam, [policy.alpha, 1.0 - policy.alpha])
        kept = lam[(lam >= lo) & (lam <= hi)]
        if kept.size == 0:
            raise InputError("trimming removed every noise variance")
        return float(np.mean(kept))
    raise InputError(f"unknown lambda_base policy {policy!r}")

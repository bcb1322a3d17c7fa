"""Iterative re-estimation of weight precisions and noise variances.

Five procedures share one outer loop (:func:`fit`): EM, MacKay fixed-point
updates, l2-IRLS, l1-IRLS and log-parameter gradient descent. Each update
returns a raw :class:`Proposal`; :func:`stabilize` damps and clips it into
the next :class:`~jointard.model.ArdState`.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg

from . import _kernels
from ._linalg import row_quad
from .errors import InputError, NumericalError
from .evaluation import studentized_lambda_update
from .model import (
    ArdState,
    Dataset,
    Heteroscedastic,
    Homoscedastic,
    Moments,
    WeightPosterior,
    compute_posterior,
    grad_from_moments,
    moments,
)

log = logging.getLogger(__name__)

MACKAY_MU2_FLOOR = 1e-24
MACKAY_DENOM_FLOOR = 1e-8


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmmConfig:
    """Inner solver settings for l1-IRLS."""

    rho: float = 1.0
    max_inner_iter: int = 500
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8

    def __post_init__(self):
        for name in ("rho", "tol_primal", "tol_dual"):
            if not getattr(self, name) > 0:
                raise InputError(f"admm.{name} must be positive")
        if int(self.max_inner_iter) < 1:
            raise InputError("admm.max_inner_iter must be a positive integer")


@dataclass(frozen=True)
class EM:
    name = "em"


@dataclass(frozen=True)
class MacKay:
    name = "mackay"


@dataclass(frozen=True)
class L2Irls:
    name = "l2irls"


@dataclass(frozen=True)
class L1Irls:
    admm: AdmmConfig = AdmmConfig()
    name = "l1irls"


@dataclass(frozen=True)
class Gradient:
    lr_gamma: float = 0.05
    lr_lambda: float = 0.05
    name = "gradient"

    def __post_init__(self):
        if not (self.lr_gamma > 0 and self.lr_lambda > 0):
            raise InputError("gradient learning rates must be positive")


Method = Union[EM, MacKay, L2Irls, L1Irls, Gradient]
METHODS = {"em": EM, "mackay": MacKay, "l2irls": L2Irls, "l1irls": L1Irls, "gradient": Gradient}


@dataclass(frozen=True)
class FitConfig:
    """Solver knobs for :func:`fit`.

    Defaults: damping 0.01 on both blocks, clips [1e-6, 1e6], 100 warm-start
    iterations with the noise frozen, noise refreshed every 3rd iteration
    afterwards, relative log-parameter tolerance 1e-6 with patience 5,
    at most 5000 iterations and all parameters initialised at 0.1.

    ``noise_update="studentized"`` swaps the EM noise proposal for
    r_i^2 / (1 - h_i)^p with ``p = studentized_power``.
    """

    method: Method = EM()
    noise_mode: str = "hetero"
    max_iter: int = 5000
    damping_gamma: float = 0.01
    damping_lambda: float = 0.01
    clip_min: float = 1e-6
    clip_max: float = 1e6
    warm_start_steps: int = 100
    lambda_update_period: int = 3
    tol_rel: float = 1e-6
    patience: int = 5
    init_gamma: float = 0.1
    init_lambda: float = 0.1
    seed: int = 0
    noise_update: str = "standard"
    studentized_power: float = 2.0

    def __post_init__(self):
        if not isinstance(self.method, (EM, MacKay, L2Irls, L1Irls, Gradient)):
            raise InputError(f"unknown method {self.method!r}")
        if self.noise_mode not in ("hetero", "homo"):
            raise InputError("noise_mode must be 'hetero' or 'homo'")
        if int(self.max_iter) < 1:
            raise InputError("max_iter must be a positive integer")
        for name in ("damping_gamma", "damping_lambda"):
            val = getattr(self, name)
            if not 0 < val <= 1:
                raise InputError(f"{name} must lie in (0, 1], got {val}")
        if not 0 < self.clip_min < self.clip_max:
            raise InputError("need 0 < clip_min < clip_max")
        if int(self.warm_start_steps) < 0:
            raise InputError("warm_start_steps must be nonnegative")
        if int(self.lambda_update_period) < 1:
            raise InputError("lambda_update_period must be a positive integer")
        if not self.tol_rel > 0:
            raise InputError("tol_rel must be positive")
        if int(self.patience) < 1:
            raise InputError("patience must be a positive integer")
        if not (self.init_gamma > 0 and self.init_lambda > 0):
            raise InputError("initial values must be positive")
        if self.noise_update not in ("standard", "studentized"):
            raise InputError("noise_update must be 'standard' or 'studentized'")
        if not self.studentized_power >= 2:
            raise InputError("studentized_power must be >= 2")
        if self.noise_update == "studentized" and not isinstance(self.method, EM):
            raise InputError("the studentized noise update is an EM variant")

    @property
    def hetero(self) -> bool:
        return self.noise_mode == "hetero"

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "method"}
        out["method"] = self.method.name
        if isinstance(self.method, L1Irls):
            out["admm"] = asdict(self.method.admm)
        if isinstance(self.method, Gradient):
            out["lr_gamma"] = self.method.lr_gamma
            out["lr_lambda"] = self.method.lr_lambda
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        name = d.pop("method", "em")
        admm = d.pop("admm", None)
        lr_gamma = d.pop("lr_gamma", None)
        lr_lambda = d.pop("lr_lambda", None)
        if name not in METHODS:
            raise InputError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
        if name == "l1irls":
            method = L1Irls(AdmmConfig(**(admm or {})))
        elif name == "gradient":
            kw = {}
            if lr_gamma is not None:
                kw["lr_gamma"] = lr_gamma
            if lr_lambda is not None:
                kw["lr_lambda"] = lr_lambda
            method = Gradient(**kw)
        else:
            method = METHODS[name]()
        try:
            return cls(method=method, **d)
        except TypeError as exc:
            raise InputError(str(exc)) from None


# ----------------------------------------------------------------------------
# update rules
# ----------------------------------------------------------------------------


@dataclass
class Proposal:
    """Raw, undamped parameter proposal.

    Unlike :class:`ArdState` the entries may be zero or infinite (l1 map-back
    on exact zeros); :func:`stabilize` turns a proposal into a valid state.
    """

    gamma: np.ndarray
    lam: Union[np.ndarray, float]
    hetero: bool
    guards: int = 0
    info: dict = field(default_factory=dict)


def _em_core(data, mu, cov, r, q, state, noise_update="standard", power=2.0):
    gamma = 1.0 / (mu**2 + np.diag(cov))
    if not state.noise.hetero:
        return Proposal(gamma, float(np.mean(r**2 + q)), False)
    if noise_update == "studentized":
        lam = studentized_lambda_update(r, q / state.noise.lam, power)
    else:
        lam = r**2 + q
    return Proposal(gamma, lam, True)


def em_update(data: Dataset, posterior: WeightPosterior, state: ArdState) -> Proposal:
    """EM (posterior second-moment) proposal for gamma and the noise."""
    state.check(data)
    r = data.y - data.X @ posterior.mu
    q = row_quad(data.X, posterior.cov)
    return _em_core(data, posterior.mu, posterior.cov, r, q, state)


def _mackay_core(data, mu, cov, r, q, state):
    gamma = state.gamma
    num = 1.0 - gamma * np.diag(cov)
    guards = int(np.sum(num < 0))
    num = np.maximum(num, 0.0)
    mu2 = mu**2
    guards += int(np.sum(mu2 < MACKAY_MU2_FLOOR))
    new_gamma = num / np.maximum(mu2, MACKAY_MU2_FLOOR)
    if state.noise.hetero:
        return Proposal(new_gamma, r**2 + q, True, guards=guards)
    n = data.n
    denom = n - np.sum(num)
    if denom < MACKAY_DENOM_FLOOR * n:
        guards += 1
        denom = MACKAY_DENOM_FLOOR * n
    return Proposal(new_gamma, float(r @ r) / denom, False, guards=guards)


def mackay_update(data: Dataset, posterior: WeightPosterior, state: ArdState) -> Proposal:
    """MacKay fixed-point proposal.

    Guards: the numerator ``1 - gamma_j [Sigma]_jj`` is clamped at zero,
    ``mu_j^2`` is floored at 1e-24 and the homoscedastic denominator at
    ``1e-8 * n``. Each activation is counted in ``Proposal.guards``.
    """
    state.check(data)
    r = data.y - data.X @ posterior.mu
    q = row_quad(data.X, posterior.cov)
    return _mackay_core(data, posterior.mu, posterior.cov, r, q, state)


def _l2_core(data, m: Moments, state):
    # the weighted ridge subproblem min (y-X t)'L^-1(y-X t) + t'G t is solved
    # by the same Cholesky factor as the posterior; forming G^-1 X' Pi_y y
    # instead divides tiny residuals by tiny lam_i and loses digits
    theta = np.array(m.posterior.mu)
    r = data.y - data.X @ theta
    # 1/g - x'Pi x/g^2 and lam - lam^2 Pi_ii are evaluated through their
    # exact equivalents [Sigma]_jj and x_i' Sigma x_i; the literal
    # differences cancel catastrophically once lam_i or 1/g_j is tiny.
    new_gamma = 1.0 / (theta**2 + np.diag(m.posterior.cov))
    if state.noise.hetero:
        return theta, Proposal(new_gamma, r**2 + m.q, True)
    return theta, Proposal(new_gamma, float(np.mean(r**2 + m.q)), False)


def l2_irls_update(data: Dataset, state: ArdState):
    """l2-IRLS step: weighted ridge solution plus re-estimated parameters.

    Returns ``(theta, proposal)``; theta equals the posterior mean.
    """
    return _l2_core(data, moments(data, state), state)


def l1_surrogate(data, theta, inv_lam, w, v):
    """Value of the doubly l1-penalized surrogate at ``theta``."""
    r = data.y - data.X @ theta
    return float(r @ (r * inv_lam) + 2.0 * w @ np.abs(theta) + 2.0 * v @ np.abs(r))


@dataclass
class AdmmWarmState:
    """Primal iterate in original units plus scaled duals, carried between
    outer iterations."""

    theta: np.ndarray
    u: np.ndarray
    nu: np.ndarray


def _l1_core(data, m: Moments, state, admm: AdmmConfig, theta_warm, warm=None):
    X, y = data.X, data.y
    lam = state.noise.variances(data.n)
    gamma = state.gamma
    inv_lam = 1.0 / lam
    w = np.sqrt(m.xpx_diag)
    # homoscedastic noise reduces the subproblem to a weighted lasso
    hetero = state.noise.hetero
    v = np.sqrt(np.maximum(m.pi_diag, 0.0)) if hetero else np.zeros(data.n)

    # Diagonal preconditioning: with t = sqrt(gamma) * theta and residuals
    # measured in units of sqrt(lam) the quadratic term becomes isotropic and
    # the l1 weights become sqrt(1 - gamma_j Sigma_jj) and sqrt(1 - h_i), both
    # in [0, 1]. The objective value is unchanged, so a fixed rho suits every
    # outer iteration even when lam_i or 1/gamma_j span many decades.
    sg, sl = np.sqrt(gamma), np.sqrt(lam)
    A = X / sl[:, None] / sg[None, :]
    b = y / sl
    a_w = np.sqrt(np.maximum(1.0 - gamma * np.diag(m.posterior.cov), 0.0))
    a_v = np.sqrt(np.maximum(1.0 - m.q / lam, 0.0)) if hetero else np.zeros(data.n)
    gram = A.T @ A
    gram[np.diag_indices_from(gram)] += 1.0
    chol = linalg.cholesky(gram, lower=True, check_finite=False)

    if warm is None:
        th0 = np.zeros(data.d) if theta_warm is None else np.asarray(theta_warm, float)
        warm = AdmmWarmState(th0, np.zeros(data.d), np.zeros(data.n))
    z0 = sg * warm.theta
    e0 = (y - X @ warm.theta) / sl
    _, z, e, u, nu, iters, r_norm, s_norm, ok = _kernels.admm_double_l1(
        A, b, np.ones(data.n), a_w, a_v, admm.rho, chol, z0, e0, warm.u, warm.nu,
        int(admm.max_inner_iter), admm.tol_primal, admm.tol_dual,
    )
    theta = z / sg
    r = y - X @ theta
    with np.errstate(divide="ignore", invalid="ignore"):
        new_gamma = w / np.abs(theta)
        if hetero:
            new_lam = np.abs(r) / v
        else:
            new_lam = float(np.linalg.norm(r) / np.sqrt(np.sum(m.pi_diag)))
    new_gamma = np.where(np.isnan(new_gamma), np.inf, new_gamma)
    if hetero:
        new_lam = np.where(np.isnan(new_lam), np.inf, new_lam)
    info = {
        "inner_iterations": iters,
        "inner_converged": ok,
        "primal_residual": r_norm,
        "dual_residual": s_norm,
        "surrogate": l1_surrogate(data, theta, inv_lam, w, v),
        "w": w,
        "v": v,
        "warm": AdmmWarmState(theta, u, nu),
    }
    if not ok:
        log.debug("ADMM stopped at max_inner_iter=%d (r=%.3e, s=%.3e)", iters, r_norm, s_norm)
    return theta, Proposal(new_gamma, new_lam, hetero, info=info)


def l1_irls_update(data: Dataset, state: ArdState, admm: AdmmConfig = AdmmConfig(),
                   theta_warm=None):
    """l1-IRLS step: solve the doubly l1-penalized subproblem, then map back.

    The inner problem is solved by ADMM warm-started at ``theta_warm``.
    Map-back values may be 0 or inf on exact zeros; :func:`stabilize` clips
    them. Inner diagnostics are in ``proposal.info``.
    """
    return _l1_core(data, moments(data, state), state, admm, theta_warm)


def _gradient_core(m: Moments, state, lr_gamma, lr_lambda):
    g_gamma, g_lam = grad_from_moments(m, state)
    gamma = np.exp(np.log(state.gamma) - lr_gamma * state.gamma * g_gamma)
    if state.noise.hetero:
        lam = state.noise.lam
        return Proposal(gamma, np.exp(np.log(lam) - lr_lambda * lam * g_lam), True)
    lam = state.noise.lam
    return Proposal(gamma, float(np.exp(np.log(lam) - lr_lambda * lam * g_lam)), False)


def gradient_update(data: Dataset, state: ArdState, lr_gamma: float, lr_lambda: float) -> Proposal:
    """One descent step on log-parameters with per-block learning rates."""
    if not (lr_gamma > 0 and lr_lambda > 0):
        raise InputError("learning rates must be positive")
    return _gradient_core(moments(data, state), state, lr_gamma, lr_lambda)


# ----------------------------------------------------------------------------
# stability layer and convergence
# ----------------------------------------------------------------------------


def _blend(prev, prop, eta, lo, hi):
    prop = np.asarray(prop, dtype=float)
    prop = np.where(np.isnan(prop), prev, prop)
    prop = np.clip(prop, lo, hi)
    return np.clip((1.0 - eta) * prev + eta * prop, lo, hi)


def stabilize(proposal: Proposal, previous: ArdState, config: FitConfig,
              update_lambda: bool = True) -> ArdState:
    """Damp a proposal towards the previous iterate and clip into bounds.

    Non-finite proposal entries are first clamped into [clip_min, clip_max]
    (NaN keeps the previous value), then blended by exponential moving
    average and clamped again.
    """
    lo, hi = config.clip_min, config.clip_max
    gamma = _blend(previous.gamma, proposal.gamma, config.damping_gamma, lo, hi)
    prev_noise = previous.noise
    if not update_lambda:
        if prev_noise.hetero:
            return ArdState(gamma, Heteroscedastic(np.clip(prev_noise.lam, lo, hi)))
        return ArdState(gamma, Homoscedastic(float(np.clip(prev_noise.lam, lo, hi))))
    if prev_noise.hetero != proposal.hetero:
        raise InputError("proposal and previous state disagree on the noise model")
    lam = _blend(np.atleast_1d(prev_noise.lam), np.atleast_1d(proposal.lam),
                 config.damping_lambda, lo, hi)
    if prev_noise.hetero:
        return ArdState(gamma, Heteroscedastic(lam))
    return ArdState(gamma, Homoscedastic(float(lam[0])))


def relative_log_change(old, new) -> float:
    lo, ln = np.log(np.atleast_1d(old)), np.log(np.atleast_1d(new))
    return float(np.max(np.abs(ln - lo)) / (1.0 + np.max(np.abs(ln))))


def converged(log_prev: ArdState, log_next: ArdState, tol_rel: float) -> bool:
    """Relative l-inf change of log-parameters below ``tol_rel`` for both blocks."""
    g = relative_log_change(log_prev.gamma, log_next.gamma)
    l = relative_log_change(log_prev.noise.lam, log_next.noise.lam)
    return g < tol_rel and l < tol_rel


# ----------------------------------------------------------------------------
# outer loop
# ----------------------------------------------------------------------------


@dataclass
class TraceEntry:
    iteration: int
    nll: float
    max_rel_change: float
    guards: int = 0
    lambda_updated: bool = False
    inner_iterations: Optional[int] = None
    inner_converged: Optional[bool] = None
    surrogate: Optional[float] = None


@dataclass
class FitResult:
    state: ArdState
    posterior: WeightPosterior
    trace: list
    iterations_run: int
    converged: bool
    threads: Optional[int] = None

    @property
    def final_nll(self) -> float:
        return self.trace[-1].nll if self.trace else float("nan")


def _blas_threads():
    try:
        from threadpoolctl import threadpool_info
    except ImportError:
        return None
    counts = [p.get("num_threads") for p in threadpool_info() if p.get("user_api") == "blas"]
    return counts[0] if counts else None


def lambda_due(iteration: int, config: FitConfig) -> bool:
    """Whether the noise block is refreshed at ``iteration`` (0-based)."""
    if iteration < config.warm_start_steps:
        return False
    return (iteration - config.warm_start_steps) % config.lambda_update_period == 0


def fit(data: Dataset, config: FitConfig = FitConfig(), init: Optional[ArdState] = None) -> FitResult:
    """Run the selected procedure until convergence or ``max_iter``.

    Per iteration: factorize at the current state, form the method's raw
    proposal, freeze the noise block during warm-start and between refresh
    iterations, damp and clip, then test the log-parameter criterion.
    Convergence is only tested once warm-start is over and requires
    ``patience`` consecutive successes. The posterior is recomputed from
    the final state.
    """
    state = init if init is not None else ArdState.initial(
        data, config.init_gamma, config.init_lambda, hetero=config.hetero)
    state.check(data)
    method = config.method
    trace = []
    streak = 0
    done = False
    theta_warm = None
    warm = None
    it = 0
    try:
        for it in range(config.max_iter):
            m = moments(data, state)
            mu, cov = m.posterior.mu, m.posterior.cov
            entry_extra = {}
            if isinstance(method, EM):
                prop = _em_core(data, mu, cov, m.residual, m.q, state,
                                config.noise_update, config.studentized_power)
            elif isinstance(method, MacKay):
                prop = _mackay_core(data, mu, cov, m.residual, m.q, state)
            elif isinstance(method, L2Irls):
                _, prop = _l2_core(data, m, state)
            elif isinstance(method, L1Irls):
                theta_warm, prop = _l1_core(data, m, state, method.admm, theta_warm, warm=warm)
                warm = prop.info["warm"]
                entry_extra = {
                    "inner_iterations": prop.info["inner_iterations"],
                    "inner_converged": prop.info["inner_converged"],
                    "surrogate": prop.info["surrogate"],
                }
            else:
                prop = _gradient_core(m, state, method.lr_gamma, method.lr_lambda)
            update_lambda = lambda_due(it, config)
            new = stabilize(prop, state, config, update_lambda=update_lambda)
            change = max(relative_log_change(state.gamma, new.gamma),
                         relative_log_change(state.noise.lam, new.noise.lam))
            trace.append(TraceEntry(it, m.nll, change, prop.guards, update_lambda, **entry_extra))
            if it >= config.warm_start_steps:
                streak = streak + 1 if converged(state, new, config.tol_rel) else 0
            state = new
            if streak >= config.patience:
                done = True
                break
        posterior = compute_posterior(data, state)
    except NumericalError as exc:
        exc.trace = trace
        raise
    return FitResult(state=state, posterior=posterior, trace=trace,
                     iterations_run=it + 1, converged=done, threads=_blas_threads())

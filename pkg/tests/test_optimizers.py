import numpy as np
import pytest

from jointard.datagen import SyntheticSpec, gen_sparse_linear
from jointard.errors import InputError, NumericalError
from jointard.evaluation import RelevanceScores, ess, topk_recall
from jointard.model import (
    ArdState,
    Dataset,
    Heteroscedastic,
    Homoscedastic,
    compute_posterior,
    moments,
    nll_grad,
    nll_primal,
)
from jointard.optimizers import (
    EM,
    AdmmConfig,
    FitConfig,
    Gradient,
    L1Irls,
    L2Irls,
    MacKay,
    Proposal,
    converged,
    em_update,
    fit,
    gradient_update,
    l1_irls_update,
    l2_irls_update,
    lambda_due,
    mackay_update,
    stabilize,
)

from conftest import random_instance, rel_err


def dense_instance(seed, n=60, d=5):
    """All weights clearly relevant, so exact EM has an interior fixed point."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    theta = rng.choice([-1.0, 1.0], d) * rng.uniform(1.0, 2.0, d)
    return Dataset(X, X @ theta + 0.5 * rng.standard_normal(n))


def exact_em(data, hetero, clip=(1e-12, 1e12), **kw):
    opts = dict(method=EM(), noise_mode="hetero" if hetero else "homo",
                damping_gamma=1.0, damping_lambda=1.0, clip_min=clip[0], clip_max=clip[1],
                warm_start_steps=0, lambda_update_period=1, tol_rel=1e-12, patience=1,
                max_iter=20000)
    opts.update(kw)
    return fit(data, FitConfig(**opts))


def free_mask(values, lo, hi, slack=1e-7):
    v = np.atleast_1d(values)
    return (v > lo * (1 + slack)) & (v < hi * (1 - slack))


# --- config ------------------------------------------------------------------


def test_config_defaults():
    c = FitConfig()
    assert (c.damping_gamma, c.damping_lambda) == (0.01, 0.01)
    assert (c.clip_min, c.clip_max) == (1e-6, 1e6)
    assert (c.warm_start_steps, c.lambda_update_period) == (100, 3)
    assert (c.tol_rel, c.patience, c.max_iter) == (1e-6, 5, 5000)
    assert (c.init_gamma, c.init_lambda) == (0.1, 0.1)
    assert isinstance(c.method, EM) and c.hetero


@pytest.mark.parametrize("bad", [
    dict(damping_gamma=0.0), dict(damping_lambda=1.5), dict(clip_min=1.0, clip_max=1.0),
    dict(max_iter=0), dict(lambda_update_period=0), dict(tol_rel=0.0), dict(patience=0),
    dict(init_gamma=-1.0), dict(noise_mode="other"), dict(warm_start_steps=-1),
    dict(studentized_power=1.5),
])
def test_config_rejects(bad):
    with pytest.raises(InputError):
        FitConfig(**bad)


def test_method_params_validated():
    with pytest.raises(InputError):
        Gradient(lr_gamma=0.0)
    with pytest.raises(InputError):
        AdmmConfig(rho=-1.0)


def test_config_roundtrip():
    c = FitConfig(method=L1Irls(AdmmConfig(rho=2.0, max_inner_iter=50)), noise_mode="homo", seed=3)
    assert FitConfig.from_dict(c.to_dict()) == c
    g = FitConfig(method=Gradient(0.1, 0.2))
    assert FitConfig.from_dict(g.to_dict()) == g


# --- scalar examples ---------------------------------------------------------


def test_em_scalar(scalar):
    data, state = scalar
    p = em_update(data, compute_posterior(data, state), state)
    assert p.gamma == pytest.approx([2 / 3], rel=1e-14)
    assert p.lam == pytest.approx([1.5], rel=1e-14)


@pytest.mark.parametrize("eps", [1e-4, 1e-8, 1e-12])
def test_em_zero_residual_zero_uncertainty(eps):
    # interpolating fit with a vanishing posterior covariance: the proposal
    # shrinks with it
    data = Dataset(np.eye(3), [1.0, -2.0, 0.5])
    state = ArdState(np.full(3, 1e-12), Heteroscedastic(np.full(3, eps)))
    post = compute_posterior(data, state)
    p = em_update(data, post, state)
    assert np.max(np.abs(data.y - post.mu)) < 1e-10
    assert np.all(p.lam <= 1.01 * eps)


def test_em_homoscedastic_is_mean_of_hetero():
    data, state = random_instance(7, n=30, d=4, hetero=False)
    post = compute_posterior(data, state)
    homo = em_update(data, post, state)
    lam = np.full(data.n, state.noise.lam)
    het = em_update(data, post, ArdState(state.gamma, Heteroscedastic(lam)))
    assert homo.lam == pytest.approx(np.mean(het.lam), rel=1e-12)
    np.testing.assert_allclose(homo.gamma, het.gamma, rtol=1e-14)


def test_em_homoscedastic_scalar():
    data = Dataset([[1.0]], [2.0])
    state = ArdState([1.0], Homoscedastic(1.0))
    p = em_update(data, compute_posterior(data, state), state)
    assert p.lam == pytest.approx(1.5)


def test_mackay_scalar(scalar):
    data, state = scalar
    p = mackay_update(data, compute_posterior(data, state), state)
    assert p.gamma == pytest.approx([0.5], rel=1e-14)
    assert p.guards == 0


def test_mackay_guards_count():
    # a weight exactly zero in the posterior mean triggers the mu^2 floor
    data = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), [1.0, 0.0])
    state = ArdState([1.0, 1.0], Homoscedastic(1.0))
    p = mackay_update(data, compute_posterior(data, state), state)
    assert p.guards >= 1 and np.isfinite(p.gamma).all()


@pytest.mark.parametrize("seed", range(3))
def test_hetero_lambda_agreement(seed):
    data, state = random_instance(seed, n=25, d=6)
    post = compute_posterior(data, state)
    em, mk = em_update(data, post, state), mackay_update(data, post, state)
    np.testing.assert_array_equal(em.lam, mk.lam)
    theta, l2 = l2_irls_update(data, state)
    assert rel_err(l2.lam, em.lam) < 1e-8
    # literal IRLS noise formula through a dense solve
    Pi = np.linalg.inv(np.diag(state.noise.lam) + data.X @ np.diag(1 / state.gamma) @ data.X.T)
    lam = state.noise.lam
    literal = (data.y - data.X @ theta) ** 2 + lam - lam**2 * np.diag(Pi)
    assert rel_err(l2.lam, literal) < 1e-8
    xpx = np.einsum("ij,ik,kj->j", data.X, Pi, data.X)
    g = state.gamma
    literal_g = 1 / (theta**2 + 1 / g - xpx / g**2)
    assert rel_err(l2.gamma, literal_g) < 1e-8


def test_l2_scalar(scalar):
    theta, p = l2_irls_update(*scalar)
    assert theta == pytest.approx([1.0], rel=1e-14)
    assert p.gamma == pytest.approx([2 / 3], rel=1e-14)
    assert p.lam == pytest.approx([1.5], rel=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_l2_ridge_identity(seed):
    data, state = random_instance(seed, spread=2.0)
    theta, _ = l2_irls_update(data, state)
    assert rel_err(theta, compute_posterior(data, state).mu) < 1e-8


def test_l1_scalar(scalar):
    data, state = scalar
    admm = AdmmConfig(max_inner_iter=5000, tol_primal=1e-12, tol_dual=1e-12)
    theta, p = l1_irls_update(data, state, admm)
    assert theta == pytest.approx([2.0], abs=1e-6)
    np.testing.assert_allclose(p.info["w"], [np.sqrt(0.5)], rtol=1e-14)
    np.testing.assert_allclose(p.info["v"], [np.sqrt(0.5)], rtol=1e-14)
    assert p.gamma == pytest.approx([np.sqrt(0.5) / 2], rel=1e-5)
    assert p.gamma[0] == pytest.approx(0.35355, abs=5e-6)
    assert p.lam[0] < 1e-5
    cfg = FitConfig(damping_gamma=1.0, damping_lambda=1.0)
    assert stabilize(p, state, cfg).noise.lam[0] == 1e-6


def test_l1_homoscedastic_runs():
    data, state = random_instance(2, n=30, d=4, hetero=False)
    theta, p = l1_irls_update(data, state)
    assert not p.hetero and np.isscalar(p.lam)
    m = moments(data, state)
    r = data.y - data.X @ theta
    assert p.lam == pytest.approx(np.linalg.norm(r) / np.sqrt(np.sum(m.pi_diag)))


def test_gradient_scalar(scalar):
    p = gradient_update(*scalar, lr_gamma=0.1, lr_lambda=0.1)
    assert p.gamma[0] == pytest.approx(np.exp(-0.025), rel=1e-14)
    assert p.gamma[0] == pytest.approx(0.97531, abs=5e-6)
    assert p.lam[0] == pytest.approx(np.exp(0.025), rel=1e-14)
    assert p.lam[0] == pytest.approx(1.02532, abs=5e-6)


def test_gradient_fixed_point_unchanged():
    data = dense_instance(0)
    res = exact_em(data, hetero=False)
    p = gradient_update(data, res.state, 0.05, 0.05)
    assert rel_err(p.gamma, res.state.gamma) < 1e-9
    assert abs(p.lam / res.state.noise.lam - 1) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_gradient_small_step_descends(seed):
    data, state = random_instance(seed, n=30, d=5)
    p = gradient_update(data, state, 1e-3, 1e-3)
    new = ArdState(p.gamma, Heteroscedastic(p.lam))
    assert nll_primal(data, new) < nll_primal(data, state)


def test_gradient_rejects_bad_rates(scalar):
    with pytest.raises(InputError):
        gradient_update(*scalar, lr_gamma=0.0, lr_lambda=0.1)


# --- stability layer ---------------------------------------------------------


def _prev(gamma=1.0, lam=1.0):
    return ArdState([gamma], Heteroscedastic([lam]))


def test_stabilize_ema():
    out = stabilize(Proposal(np.array([2.0]), np.array([1.0]), True), _prev(),
                    FitConfig(damping_gamma=0.01))
    assert out.gamma[0] == pytest.approx(1.01, rel=1e-15)


def test_stabilize_clamps():
    cfg = FitConfig(damping_gamma=1.0, damping_lambda=1.0)
    out = stabilize(Proposal(np.array([1.0]), np.array([1e12]), True), _prev(), cfg)
    assert out.noise.lam[0] == 1e6
    out = stabilize(Proposal(np.array([1.0]), np.array([0.0]), True), _prev(), cfg)
    assert out.noise.lam[0] == 1e-6
    out = stabilize(Proposal(np.array([np.inf]), np.array([1.0]), True), _prev(), cfg)
    assert out.gamma[0] == 1e6


def test_stabilize_full_damping_returns_clipped_proposal():
    cfg = FitConfig(damping_gamma=1.0, damping_lambda=1.0)
    out = stabilize(Proposal(np.array([3.0]), np.array([4.0]), True), _prev(), cfg)
    assert out.gamma[0] == 3.0 and out.noise.lam[0] == 4.0


def test_stabilize_nan_keeps_previous():
    cfg = FitConfig(damping_gamma=1.0, damping_lambda=1.0)
    out = stabilize(Proposal(np.array([np.nan]), np.array([2.0]), True), _prev(5.0), cfg)
    assert out.gamma[0] == 5.0


def test_stabilize_freezes_lambda():
    cfg = FitConfig(damping_gamma=1.0, damping_lambda=1.0)
    out = stabilize(Proposal(np.array([3.0]), np.array([4.0]), True), _prev(), cfg, update_lambda=False)
    assert out.noise.lam[0] == 1.0


def test_stabilize_noise_model_mismatch():
    with pytest.raises(InputError):
        stabilize(Proposal(np.array([1.0]), 1.0, False), _prev(), FitConfig())


def test_converged_examples():
    a = _prev()
    assert converged(a, a, 1e-300)
    assert not converged(a, _prev(gamma=np.e), 1e-6)
    # gamma moves by far less than tol but lambda does not
    assert not converged(a, _prev(gamma=1 + 1e-12, lam=2.0), 1e-6)
    assert converged(a, _prev(gamma=1 + 1e-12, lam=1 + 1e-12), 1e-6)


def test_lambda_schedule():
    cfg = FitConfig(warm_start_steps=4, lambda_update_period=3)
    due = [it for it in range(12) if lambda_due(it, cfg)]
    assert due == [4, 7, 10]


# --- outer loop --------------------------------------------------------------


def test_fit_warm_start_freezes_lambda():
    data, _ = random_instance(1, n=30, d=4)
    cfg = FitConfig(max_iter=12, warm_start_steps=5, lambda_update_period=2)
    res = fit(data, cfg)
    assert [e.lambda_updated for e in res.trace] == [lambda_due(i, cfg) for i in range(12)]
    # during warm start the noise stays at its initial value
    res5 = fit(data, FitConfig(max_iter=5, warm_start_steps=5))
    np.testing.assert_array_equal(res5.state.noise.lam, 0.1)


def test_fit_result_consistent():
    data, _ = random_instance(3, n=40, d=6)
    res = fit(data, FitConfig(max_iter=50))
    post = compute_posterior(data, res.state)
    np.testing.assert_array_equal(res.posterior.mu, post.mu)
    assert res.iterations_run == 50 and len(res.trace) == 50 and not res.converged
    assert all(np.isfinite(e.nll) for e in res.trace)
    s = res.state
    assert np.all((s.gamma >= 1e-6) & (s.gamma <= 1e6))


@pytest.mark.parametrize("method", [EM(), MacKay(), L2Irls(), L1Irls(AdmmConfig(max_inner_iter=50)), Gradient()])
@pytest.mark.parametrize("mode", ["hetero", "homo"])
def test_fit_deterministic(method, mode):
    data, _ = random_instance(4, n=40, d=6)
    cfg = FitConfig(method=method, noise_mode=mode, max_iter=30, warm_start_steps=5)
    a, b = fit(data, cfg), fit(data, cfg)
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.state.gamma, b.state.gamma)
    np.testing.assert_array_equal(a.state.noise.lam, b.state.noise.lam)


def test_fit_init_shape_checked():
    data, _ = random_instance(0, n=10, d=3)
    with pytest.raises(InputError):
        fit(data, init=ArdState(np.ones(2), Heteroscedastic(np.ones(10))))


def test_fit_numerical_error_carries_trace(monkeypatch):
    import jointard.optimizers as opt

    data, _ = random_instance(0, n=10, d=3)
    calls = {"n": 0}
    real = opt.moments

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 4:
            raise NumericalError("boom", matrix="test")
        return real(*args, **kwargs)

    monkeypatch.setattr(opt, "moments", flaky)
    with pytest.raises(NumericalError) as info:
        fit(data, FitConfig(max_iter=10))
    assert len(info.value.trace) == 3


@pytest.mark.parametrize("seed", range(10))
def test_em_monotone(seed):
    rng = np.random.default_rng(100 + seed)
    data, _ = random_instance(seed, n=int(rng.integers(10, 101)), d=int(rng.integers(1, 21)))
    res = exact_em(data, hetero=bool(seed % 2), max_iter=200, tol_rel=1e-300)
    nll = np.array([e.nll for e in res.trace])
    assert np.all(np.diff(nll) <= 1e-9)


def test_studentized_em_runs():
    data, _ = random_instance(0, n=40, d=4)
    res = fit(data, FitConfig(noise_update="studentized", max_iter=200, warm_start_steps=10))
    assert np.all(np.isfinite(res.state.noise.lam))


# --- fixed-point consistency -------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_fixed_point_homoscedastic(seed):
    data = dense_instance(seed)
    res = exact_em(data, hetero=False)
    assert res.converged
    s, post = res.state, res.posterior
    g, l = nll_grad(data, s)
    assert np.max(np.abs(s.gamma * g)) <= 1e-4 and abs(s.noise.lam * l) <= 1e-4
    mk = mackay_update(data, post, s)
    assert rel_err(mk.gamma, s.gamma) < 1e-8
    assert abs(mk.lam / s.noise.lam - 1) < 1e-5
    _, l2 = l2_irls_update(data, s)
    assert rel_err(l2.gamma, s.gamma) < 1e-6
    assert abs(l2.lam / s.noise.lam - 1) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_fixed_point_heteroscedastic(seed):
    # exact heteroscedastic EM drives some lam_i onto the lower clip; the
    # stationarity test is then the projected (KKT) one on free coordinates
    lo, hi = 1e-6, 1e6
    data = dense_instance(seed)
    res = exact_em(data, hetero=True, clip=(lo, hi))
    assert res.converged
    s, post = res.state, res.posterior
    g, l = nll_grad(data, s)
    fg, fl = free_mask(s.gamma, lo, hi), free_mask(s.noise.lam, lo, hi)
    assert np.max(np.abs(s.gamma * g)[fg], initial=0) <= 1e-4
    assert np.max(np.abs(s.noise.lam * l)[fl], initial=0) <= 1e-4
    # at a lower-bound coordinate the objective must not decrease inward
    assert np.all(l[~fl & (s.noise.lam <= lo * 1.0000001)] >= -1e-4 / lo)
    cfg = FitConfig(damping_gamma=1.0, damping_lambda=1.0, clip_min=lo, clip_max=hi)
    for prop in (mackay_update(data, post, s), l2_irls_update(data, s)[1]):
        new = stabilize(prop, s, cfg)
        assert rel_err(new.gamma, s.gamma) <= 1e-5
        assert rel_err(new.noise.lam, s.noise.lam) <= 1e-5


# --- documented claims that do not hold (see the decisions ledger) -----------


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="~50 lam_i crawl to clip_min under 0.01 EMA damping; "
                   "needs far more than max_iter=5000 to meet tol_rel")
def test_em_synthetic_default_converges():
    train, _, truth = gen_sparse_linear(SyntheticSpec(seed=0))
    res = fit(train, FitConfig())
    k = len(truth.support)
    assert ess(RelevanceScores.from_precisions(res.state.gamma)) < 0.6
    assert topk_recall(1 / res.state.gamma, truth.support, k) >= 0.9
    assert res.converged


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="chance-correlated columns have finite-gamma ML optima; "
                   "ESS stays far above 2/d")
@pytest.mark.parametrize("mode", ["hetero", "homo"])
def test_pure_noise_prunes_everything(mode):
    cfg = FitConfig(noise_mode=mode)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        data = Dataset(rng.standard_normal((200, 20)), 0.5 * rng.standard_normal(200))
        res = fit(data, cfg)
        assert np.all(res.state.gamma >= 0.1 * cfg.clip_max)
        assert ess(RelevanceScores.from_precisions(res.state.gamma)) <= 2 / data.d


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="heteroscedastic ML has boundary optima lam_i -> 0 even on "
                   "clean data; EM/MacKay/l2 reach them")
@pytest.mark.parametrize("method", [EM(), MacKay(), L2Irls()])
def test_homoscedastic_collapse(method):
    train, _, _ = gen_sparse_linear(SyntheticSpec(n=200, d=10, rho=0.0, n_test=0, seed=0))
    res = fit(train, FitConfig(method=method))
    lam = res.state.noise.lam
    assert lam.max() / lam.min() <= 10


@pytest.mark.slow
def test_homoscedastic_collapse_gradient():
    train, _, _ = gen_sparse_linear(SyntheticSpec(n=200, d=10, rho=0.0, n_test=0, seed=0))
    res = fit(train, FitConfig(method=Gradient()))
    lam = res.state.noise.lam
    assert lam.max() / lam.min() <= 10

import numpy as np
import pytest

from jointard.baselines import ols, ridge
from jointard.errors import InputError
from jointard.model import Dataset


def _data(seed=0, n=50, d=4):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    return Dataset(X, X @ np.arange(1.0, d + 1) + 0.1 * rng.standard_normal(n))


def test_ols_matches_normal_equations():
    data = _data()
    fit = ols(data)
    ref = np.linalg.solve(data.X.T @ data.X, data.X.T @ data.y)
    np.testing.assert_allclose(fit.theta, ref, rtol=1e-10)
    r = data.y - data.X @ ref
    assert fit.noise_var == pytest.approx(r @ r / (data.n - data.d))


def test_ridge_shrinks_towards_zero():
    data = _data()
    norms = [np.linalg.norm(ridge(data, a).theta) for a in (1e-3, 1.0, 1e3)]
    assert norms[0] > norms[1] > norms[2]
    a = 2.0
    ref = np.linalg.solve(data.X.T @ data.X + a * np.eye(data.d), data.X.T @ data.y)
    np.testing.assert_allclose(ridge(data, a).theta, ref, rtol=1e-10)
    with pytest.raises(InputError):
        ridge(data, 0.0)


def test_predict_shapes():
    fit = ols(_data())
    mean, var = fit.predict(np.zeros((3, 4)))
    assert mean.shape == var.shape == (3,) and np.all(var == fit.noise_var)

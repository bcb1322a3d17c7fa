import sys

import numpy as np
import pytest

from jointard.model import ArdState, Dataset, Heteroscedastic, Homoscedastic


def random_instance(seed, n=None, d=None, hetero=True, spread=1.0):
    """Random (data, state) with positive parameters spanning a few decades."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(5, 60))
    d = d or int(rng.integers(1, 20))
    X = rng.standard_normal((n, d))
    y = X @ rng.standard_normal(d) + rng.standard_normal(n)
    gamma = np.exp(rng.uniform(-spread, spread, d))
    if hetero:
        noise = Heteroscedastic(np.exp(rng.uniform(-spread, spread, n)))
    else:
        noise = Homoscedastic(float(np.exp(rng.uniform(-spread, spread))))
    return Dataset(X, y), ArdState(gamma, noise)


@pytest.fixture
def scalar():
    """The one-sample, one-feature instance used throughout the examples."""
    return Dataset([[1.0]], [2.0]), ArdState([1.0], Heteroscedastic([1.0]))


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])

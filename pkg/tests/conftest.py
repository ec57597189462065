import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def random_params(rng, n, r, identity_mff=False):
    """A valid random FactorParams instance for oracle comparisons."""
    from factormle import FactorParams

    loadings = rng.standard_normal((n, r))
    idio_var = rng.uniform(0.5, 5.0, n)
    if identity_mff:
        mff = np.eye(r)
    else:
        a = rng.standard_normal((r, r))
        mff = a @ a.T + 0.3 * np.eye(r)
    return FactorParams(loadings, idio_var, mff)


def random_second_moment(rng, n):
    w = rng.standard_normal((n, n + 7))
    m = w @ w.T / (n + 7)
    return (m + m.T) / 2.0

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from switchreg import KernelFunctions, MarkovStates, NoiseModel, ObservedSeries, Theta
from switchreg.io import motorcycle_series

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=40,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def motorcycle():
    return motorcycle_series(seed=0)


def random_markov_instance(rng, n, j, sep=3.0):
    """A small chain-model instance with grid-valued mean functions.

    Means are spread ``sep`` apart so posteriors are informative but not
    degenerate; transition rows and the initial law are drawn from a
    Dirichlet bounded away from zero.
    """
    x = np.sort(rng.uniform(0.0, 10.0, n))
    x += np.arange(n) * 1e-6
    means = rng.normal(0.0, 0.6, (j, n)) + sep * np.arange(j)[:, None]
    sig2 = rng.uniform(0.5, 2.0, j)
    pi = rng.dirichlet(np.full(j, 4.0))
    a = rng.dirichlet(np.full(j, 4.0), size=j)
    y = rng.normal(0.0, 1.5, n)
    series = ObservedSeries(x=x, y=y)
    theta = Theta(
        latent=MarkovStates(pi=pi, a=a),
        funcs=KernelFunctions(values=means, u=1.0, s=1.0),
        noise=NoiseModel(variances=sig2),
    )
    return series, theta

import numpy as np
import pytest
from hypothesis import settings

from fedscore_surv.survival import SurvivalDataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_data(time, event, X=None, names=None, site_id=0, kinds=None):
    time = np.asarray(time, dtype=float)
    if X is None:
        X = np.zeros((time.size, 0))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = names or [f"x{k + 1}" for k in range(X.shape[1])]
    return SurvivalDataset(time, event, X, names, kinds, site_id=site_id)


def weibull_cox(rng, n, beta, shape=1.0, scale=1.0, censor_rate=0.3, site_id=0, t_max=np.inf):
    """Cox data with a Weibull baseline and exponential censoring."""
    beta = np.asarray(beta, dtype=float)
    X = rng.standard_normal((n, beta.size))
    u = rng.random(n)
    T = scale * (-np.log(u) * np.exp(-X @ beta)) ** (1.0 / shape)
    C = rng.exponential(1.0 / censor_rate, n) * scale if censor_rate > 0 else np.full(n, np.inf)
    C = np.minimum(C, t_max)
    time = np.minimum(T, C)
    event = (T <= C).astype(int)
    return make_data(time, event, X, site_id=site_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

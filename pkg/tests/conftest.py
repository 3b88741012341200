import numpy as np
import pytest

from creditquote.bond import BondPrimitives
from creditquote.distributions import NORMAL, TRUNCATED_NORMAL, NoiseSpec
from creditquote.linalg import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def std_normal():
    return NoiseSpec(kind=NORMAL, mu=0.0, sigma=1.0)


@pytest.fixture
def market_noise():
    # the synthetic market default: truncated normal on [0.02, 0.11]
    return NoiseSpec(kind=TRUNCATED_NORMAL, mu=0.05, sigma=0.05, lo=0.02, hi=0.11)


@pytest.fixture
def semiannual_bond():
    return BondPrimitives(coupon_rate=0.05, par=100.0,
                          payment_times=0.5 * np.arange(1, 11))


@pytest.fixture
def zero_coupon():
    return BondPrimitives(coupon_rate=0.0, par=100.0,
                          payment_times=np.array([1.0]))


def random_primitives(rng, n_lo=10, n_hi=50):
    n = int(rng.integers(n_lo, n_hi + 1))
    coupon = float(rng.uniform(0.02, 0.1))
    return BondPrimitives(coupon_rate=coupon, par=100.0,
                          payment_times=0.5 * np.arange(1, n + 1))

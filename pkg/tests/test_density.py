import math

import numpy as np
import pytest
from scipy import stats

from helpers import FIXED_STRIKES, bs_chain, quad_ref

from entrofit.density import (LebesguePrior, OptionChain, PriorDensity, TiltedDensity, entropy, integrate_against,
                              l1_distance, mean, pdf, price_call, price_digital, relative_entropy, total_mass)
from entrofit.errors import ArbitrageError, DomainError, InputError
from entrofit.models import BlackScholes, MarketEnv
from entrofit.models.prior import as_prior
from entrofit.mred import minimize
from entrofit.quadrature import TIGHT_SPEC

ENV = MarketEnv(100.0)


@pytest.fixture(scope="module")
def med1():
    return minimize(LebesguePrior(), bs_chain(FIXED_STRIKES[1])).density


@pytest.fixture(scope="module")
def bs20():
    return as_prior(BlackScholes(0.20), ENV)


class Lognormal(PriorDensity):
    """Standard lognormal from scipy, an independent prior implementation."""

    name = "lognormal"

    def __init__(self, s=1.0):
        self.s = s
        self.support_hint = math.inf
        # every beta <= 0 converges
        self.moment_bound = 1e-300

    def pdf(self, S):
        return stats.lognorm.pdf(np.asarray(S, dtype=float), self.s)

    def logprice_pdf(self, x):
        return stats.norm.pdf(np.asarray(x, dtype=float), scale=self.s)

    @property
    def scale(self):
        return 1.0


# --- chain validation ------------------------------------------------------

def test_chain_sentinels():
    c = bs_chain(FIXED_STRIKES[3])
    np.testing.assert_array_equal(c.ext_strikes[[0, -1]], [0.0, np.inf])
    assert c.ext_calls[0] == 100.0 and c.ext_calls[-1] == 0.0


def test_chain_rejects_unsorted_and_duplicates():
    with pytest.raises(InputError):
        OptionChain(100.0, [100.0, 90.0], [10.0, 15.0])
    with pytest.raises(InputError):
        OptionChain(100.0, [90.0, 90.0], [15.0, 15.0])


def test_chain_rejects_increasing_calls():
    with pytest.raises(ArbitrageError) as exc:
        OptionChain(100.0, [90.0, 100.0], [10.0, 12.0])
    assert exc.value.index == 2


def test_chain_rejects_linear_calls():
    # a straight call curve leaves no mass between the strikes
    with pytest.raises(ArbitrageError):
        OptionChain(100.0, [80.0, 90.0, 100.0], [25.0, 20.0, 15.0])


def test_chain_rejects_digital_outside_bounds():
    c = bs_chain(FIXED_STRIKES[3])
    with pytest.raises(ArbitrageError, match="upper bound"):
        c.with_digitals([0.999, 0.45, 0.06])
    with pytest.raises(ArbitrageError, match="lower bound"):
        c.with_digitals([0.97, 0.45, 0.0])


def test_subset():
    c = bs_chain(FIXED_STRIKES[5]).subset([60, 140])
    np.testing.assert_array_equal(c.strikes, [60.0, 140.0])
    with pytest.raises(InputError):
        c.subset([70])


# --- pdf -------------------------------------------------------------------

def test_exponential_density_at_zero():
    lam = 0.01
    q = TiltedDensity(LebesguePrior(), np.empty(0), [lam], [-lam])
    assert pdf(q, 0.0) == pytest.approx(lam, rel=1e-15)
    assert total_mass(q, TIGHT_SPEC) == pytest.approx(1.0, rel=1e-12)
    assert mean(q, TIGHT_SPEC) == pytest.approx(1 / lam, rel=1e-12)


def test_zero_tilt_returns_prior(bs20):
    q = TiltedDensity(bs20, np.array([80.0, 120.0]), np.ones(3), np.zeros(3))
    S = np.linspace(1.0, 300.0, 50)
    np.testing.assert_allclose(pdf(q, S), bs20.pdf(S), rtol=1e-15)


def test_pdf_right_continuous(med1):
    assert pdf(med1, 100.0) == pytest.approx(med1.alpha[1] * math.exp(med1.beta[1] * 100.0), rel=1e-14)
    assert pdf(med1, -1.0) == 0.0


def test_fitted_med_integrates_to_one(med1):
    assert total_mass(med1, TIGHT_SPEC) == pytest.approx(1.0, abs=1e-6)
    ref = quad_ref(lambda s: float(pdf(med1, s)), 0, 100) + quad_ref(lambda s: float(pdf(med1, s)), 100, np.inf)
    assert ref == pytest.approx(1.0, abs=1e-6)


# --- prices ----------------------------------------------------------------

def test_med_1strike_prices(med1):
    assert round(price_call(med1, 100.0), 4) == 9.9476
    assert round(price_call(med1, 180.0), 4) == 0.1840
    assert round(price_digital(med1, 100.0), 4) == 0.4962


def test_mred_bs_digital(bs20):
    q = minimize(bs20, bs_chain(FIXED_STRIKES[1])).density
    assert round(price_digital(q, 100.0), 4) == 0.4420


def test_zero_strike(med1):
    assert price_call(med1, 0.0, TIGHT_SPEC) == pytest.approx(100.0, rel=1e-10)
    assert price_digital(med1, 0.0, TIGHT_SPEC) == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(DomainError):
        price_call(med1, -1.0)


def test_digital_decreasing(med1):
    d = [price_digital(med1, k) for k in np.linspace(0, 400, 41)]
    assert np.all(np.diff(d) < 0)
    assert 0 <= min(d) and max(d) <= 1


# --- entropies -------------------------------------------------------------

def test_uniform_negative_entropy():
    u = 4.0
    q = TiltedDensity(LebesguePrior(), np.array([1 / u]), [u, 1e-300], [0.0, -1.0])
    assert entropy(q, TIGHT_SPEC) == pytest.approx(-math.log(u), abs=1e-10)


@pytest.mark.parametrize("n,expected", [(1, 4.6801), (5, 4.6077)])
def test_med_entropy(n, expected):
    r = minimize(LebesguePrior(), bs_chain(FIXED_STRIKES[n]))
    H = entropy(r.density, TIGHT_SPEC)
    assert round(H, 4) == expected
    # the objective of the Lebesgue fit is minus the Shannon entropy
    assert -r.value == pytest.approx(H, abs=1e-8)


def test_relative_entropy_zero_for_prior(bs20):
    q = TiltedDensity(bs20, np.array([100.0]), np.ones(2), np.zeros(2))
    assert relative_entropy(q) == pytest.approx(0.0, abs=1e-15)


def test_csiszar_kullback(bs20):
    for n in (1, 3, 5):
        q = minimize(bs20, bs_chain(FIXED_STRIKES[n])).density
        H = relative_entropy(q, spec=TIGHT_SPEC)
        L1 = l1_distance(q, spec=TIGHT_SPEC)
        assert H > 0
        assert H >= 0.5 * L1 * L1


# --- integrate_against ------------------------------------------------------

def test_lognormal_mean():
    p = Lognormal()
    assert integrate_against(p, 0.0, math.inf, "S", spec=TIGHT_SPEC) == pytest.approx(math.exp(0.5), rel=1e-9)
    # brute-force trapezoid in log space as the second route
    x = np.linspace(-12, 14, 400001)
    ref = np.trapezoid(np.exp(x) * stats.norm.pdf(x), x)
    assert integrate_against(p, 0.0, math.inf, "S", spec=TIGHT_SPEC) == pytest.approx(ref, rel=1e-9)


def test_normalisation_and_interval_length(bs20):
    assert integrate_against(bs20, 0.0, math.inf, "1", spec=TIGHT_SPEC) == pytest.approx(1.0, abs=1e-8)
    assert integrate_against(LebesguePrior(), 80.0, 100.0, "exp", beta=0.0) == pytest.approx(20.0, rel=1e-14)


def test_exponential_weight_beyond_bound():
    with pytest.raises(DomainError):
        integrate_against(LebesguePrior(), 100.0, math.inf, "exp", beta=0.0)
    with pytest.raises(InputError):
        integrate_against(LebesguePrior(), 1.0, 2.0, "cosh")


def test_log_coefficients_beyond_double_range():
    # one steep bucket far from zero: alpha = e^{2000} is not representable
    K = np.array([100.0])
    lam = 20.0
    la1 = math.log(0.5 * lam) + lam * 100.0
    q = TiltedDensity(LebesguePrior(), K, None, [-20.0, -lam], log_coef=[math.log(0.5 / 100.0), la1])
    assert math.isinf(q.alpha[1]) and q.log_alpha[1] == la1
    assert q.bucket_integral(1, lambda S: np.ones_like(S), spec=TIGHT_SPEC) == pytest.approx(0.5, rel=1e-12)
    assert q.bucket_integral(1, lambda S: S, spec=TIGHT_SPEC) == pytest.approx(0.5 * (100 + 1 / lam), rel=1e-12)
    with pytest.raises(InputError):
        TiltedDensity(LebesguePrior(), K, None, [0.0, -1.0], log_coef=[0.0, math.inf])
    with pytest.raises(InputError):
        TiltedDensity(LebesguePrior(), K, [1.0, math.inf], [0.0, -1.0])

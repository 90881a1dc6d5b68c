import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from helpers import bs_call_ref, bs_digital_ref

from entrofit.calibration import implied_vol
from entrofit.density import integrate_against, mean, price_call
from entrofit.errors import InputError
from entrofit.models import BlackScholes, Heston, MarketEnv, SchobelZhu, VarianceGamma, charfn, make_model
from entrofit.models.fourier import (InversionSpec, TruncationWarning, bs_logprice_pdf, cdf_bar, invert_pdf,
                                     price_call_cf, price_digital_cf, vg_pdf_closed)
from entrofit.models.prior import as_prior
from entrofit.quadrature import TIGHT_SPEC

ENV = MarketEnv(100.0)
SPX = MarketEnv(1305.44, 0.0015, 0.02, 152 / 365)
HESTON_REF = Heston(1.0, 0.04, -0.3, 0.25, 0.04)
HESTON_SPX = Heston(0.8568, 0.08, -0.8016, 0.5473, 0.0421)
SZ_SPX = SchobelZhu(1.6316, 0.1731, -0.8031, 0.3249, 0.1887)
VG_SPX = VarianceGamma(-0.2808, 0.1535, 0.3638)
ALL = [BlackScholes(0.25), HESTON_REF, HESTON_SPX, SZ_SPX, VG_SPX]


@pytest.mark.parametrize("model", ALL, ids=lambda m: m.kind)
@pytest.mark.parametrize("env", [ENV, SPX, MarketEnv(50.0, 0.05, 0.01, 2.0)], ids=["flat", "spx", "carry"])
def test_normalisation_and_martingale(model, env):
    assert abs(charfn(model, env, 0.0) - 1.0) < 1e-14
    assert charfn(model, env, -1j) == pytest.approx(env.forward, rel=1e-12)


@pytest.mark.parametrize("model", ALL, ids=lambda m: m.kind)
def test_conjugate_symmetry(model):
    u = np.linspace(0.1, 40.0, 60)
    np.testing.assert_allclose(charfn(model, SPX, -u), np.conj(charfn(model, SPX, u)), rtol=1e-12, atol=1e-15)


def test_bs_charfn_direct():
    m = BlackScholes(0.3)
    env = MarketEnv(80.0, 0.03, 0.01, 0.7)
    mu = math.log(80.0) + (0.02 - 0.045) * 0.7
    u = np.linspace(-10, 10, 41)
    np.testing.assert_allclose(charfn(m, env, u), np.exp(1j * u * mu - 0.09 * u * u * 0.7 / 2), rtol=1e-13, atol=1e-15)


def test_heston_against_riccati_ode():
    """Characteristic function against a direct integration of the Heston Riccati system."""
    m, env = HESTON_SPX, SPX
    T = env.maturity
    for u in (0.5, 3.0, 12.0):
        def rhs(t, y):
            B = y[0] + 1j * y[1]
            dB = 0.5 * m.sigma**2 * B * B - (m.kappa - 1j * u * m.rho * m.sigma) * B - 0.5 * (u * u + 1j * u)
            dA = m.kappa * m.theta * B
            return [dB.real, dB.imag, dA.real, dA.imag]

        sol = integrate.solve_ivp(rhs, (0, T), [0, 0, 0, 0], method="DOP853", rtol=1e-12, atol=1e-14)
        B = sol.y[0, -1] + 1j * sol.y[1, -1]
        A = sol.y[2, -1] + 1j * sol.y[3, -1]
        ref = np.exp(1j * u * (math.log(env.spot) + (env.rate - env.dividend) * T) + A + B * m.v0)
        assert charfn(m, env, u) == pytest.approx(ref, rel=1e-9, abs=1e-14)


def test_bs_inversion_vs_closed_form():
    m = BlackScholes(0.25)
    x = np.linspace(math.log(100) - 1.5, math.log(100) + 1.5, 301)
    assert np.max(np.abs(invert_pdf(m, ENV, x) - bs_logprice_pdf(m, ENV, x))) < 1e-6
    ref = stats.norm.pdf(x, math.log(100) - 0.03125, 0.25)
    np.testing.assert_allclose(bs_logprice_pdf(m, ENV, x), ref, rtol=1e-12, atol=1e-300)


def test_vg_inversion_vs_closed_form():
    center = VG_SPX.log_center(SPX)
    x = center + np.concatenate([np.linspace(-0.8, -0.02, 80), np.linspace(0.02, 0.6, 60)])
    assert np.max(np.abs(invert_pdf(VG_SPX, SPX, x) - vg_pdf_closed(VG_SPX, SPX, x))) < 1e-5
    assert invert_pdf(VG_SPX, SPX, [center + 0.1])[0] == pytest.approx(vg_pdf_closed(VG_SPX, SPX, [center + 0.1])[0],
                                                                     abs=1e-5)


def test_vg_symmetric_case_is_even():
    m = VarianceGamma(0.0, 0.2, 0.1)
    c = m.log_center(ENV)
    d = np.linspace(0.01, 0.6, 30)
    np.testing.assert_allclose(vg_pdf_closed(m, ENV, c + d), vg_pdf_closed(m, ENV, c - d), rtol=1e-12)


def test_vg_small_nu_approaches_bs():
    m = VarianceGamma(0.0, 0.25, 1e-4)
    x = np.linspace(math.log(100) - 0.6, math.log(100) + 0.6, 25)
    np.testing.assert_allclose(vg_pdf_closed(m, ENV, x), bs_logprice_pdf(BlackScholes(0.25), ENV, x), rtol=2e-3)


def test_vg_closed_form_integrates_to_one():
    c = VG_SPX.log_center(SPX)
    f = lambda x: vg_pdf_closed(VG_SPX, SPX, np.atleast_1d(x))[0]
    total = integrate.quad(f, c - 3, c, limit=200)[0] + integrate.quad(f, c, c + 3, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-8)


def test_inverted_density_nonnegative_and_real():
    x = np.linspace(math.log(100) - 3, math.log(100) + 3, 400)
    for m in (HESTON_REF, HESTON_SPX):
        v = invert_pdf(m, ENV, x)
        assert np.all(np.isreal(v)) and np.all(v >= 0)


def test_truncation_warning():
    # a one-step truncation budget cannot reach the envelope for a low-vol model
    with pytest.warns(TruncationWarning):
        invert_pdf(BlackScholes(0.01), ENV, [math.log(100)], InversionSpec(max_a=10.0))


def test_bs_digital_probability():
    K = np.array([50.0, 80.0, 100.0, 120.0, 200.0])
    np.testing.assert_allclose(cdf_bar(BlackScholes(0.25), ENV, K), bs_digital_ref(100.0, K, 0.25), atol=1e-8)
    assert cdf_bar(HESTON_REF, ENV, 1e-6) == pytest.approx(1.0, abs=1e-8)


def test_stock_measure_probability():
    K = np.array([80.0, 100.0, 130.0])
    sd = 0.25
    d1 = (np.log(100.0 / K) + 0.5 * sd * sd) / sd
    np.testing.assert_allclose(cdf_bar(BlackScholes(0.25), ENV, K, "stock"), stats.norm.cdf(d1), atol=1e-8)


def test_heston_digital_vs_density_quadrature():
    K = SPX.forward
    x0 = math.log(K)
    f = lambda x: invert_pdf(HESTON_SPX, SPX, np.atleast_1d(x))[0]
    ref = integrate.quad(f, x0, x0 + 3.0, limit=400, epsabs=1e-12)[0]
    assert cdf_bar(HESTON_SPX, SPX, K) == pytest.approx(ref, abs=1e-6)


def test_call_prices():
    assert round(float(price_call_cf(BlackScholes(0.25), ENV, 100.0)), 4) == 9.9476
    K = np.linspace(40, 200, 33)
    np.testing.assert_allclose(price_call_cf(BlackScholes(0.25), ENV, K), bs_call_ref(100.0, K, 0.25), atol=1e-9)
    c = price_call_cf(HESTON_REF, ENV, K)
    assert np.all(np.diff(c) < 0) and np.all(np.diff(c, 2) > 0)
    assert float(price_call_cf(HESTON_REF, ENV, 1e4)) == pytest.approx(0.0, abs=1e-10)


def test_discounted_digital():
    env = MarketEnv(100.0, 0.05, 0.0, 1.0)
    assert float(price_digital_cf(BlackScholes(0.2), env, 100.0)) == pytest.approx(
        math.exp(-0.05) * float(bs_digital_ref(env.forward, 100.0, 0.2)), abs=1e-9)


def test_heston_implied_vols():
    K = [60.0, 80.0, 100.0, 120.0, 140.0]
    vols = [implied_vol(float(price_call_cf(HESTON_REF, ENV, k)), ENV, k) for k in K]
    assert [round(v, 4) for v in vols] == [0.2418, 0.2125, 0.1923, 0.1855, 0.1884]


@pytest.mark.parametrize("model", [BlackScholes(0.2), HESTON_REF, VG_SPX, SZ_SPX], ids=lambda m: m.kind)
def test_prior_mass_and_mean(model):
    env = SPX if model.kind in ("vg", "sz") else ENV
    p = as_prior(model, env)
    assert integrate_against(p, 0.0, math.inf, "1", spec=TIGHT_SPEC) == pytest.approx(1.0, abs=1e-8)
    assert integrate_against(p, 0.0, math.inf, "S", spec=TIGHT_SPEC) == pytest.approx(env.forward, rel=1e-6)
    assert p.support_hint < math.inf and p.moment_bound > 0
    # strictly positive inside the support
    S = np.linspace(env.forward * 0.2, p.support_hint * 0.999, 500)
    assert np.all(p.pdf(S) > 0)
    assert p.pdf(p.support_hint * 1.01) == 0.0


def test_heston_prior_reprices_its_vols():
    from entrofit.density import TiltedDensity

    p = as_prior(HESTON_REF, ENV)
    q = TiltedDensity(p, np.empty(0), [1.0], [0.0])
    for k, v in zip([60.0, 80.0, 100.0, 120.0, 140.0], [0.2418, 0.2125, 0.1923, 0.1855, 0.1884]):
        assert implied_vol(price_call(q, k, TIGHT_SPEC), ENV, k) == pytest.approx(v, abs=1e-4)
    assert mean(q, TIGHT_SPEC) == pytest.approx(100.0, rel=1e-6)


def test_make_model_errors():
    with pytest.raises(InputError):
        make_model("merton", sigma=0.2)
    with pytest.raises(InputError):
        make_model("heston", kappa=1.0)
    with pytest.raises(InputError):
        BlackScholes(-0.1)


def test_large_order_bessel_log():
    from scipy import special

    from entrofit.models.fourier import _log_kv

    for v in (50.0, 75.0, 150.0):
        z = np.array([0.5, 3.0, 30.0, 300.0])
        ref = np.log(special.kv(v, z))
        ok = np.isfinite(ref)
        np.testing.assert_allclose(_log_kv(v, z)[ok], ref[ok], rtol=1e-10, atol=1e-8)

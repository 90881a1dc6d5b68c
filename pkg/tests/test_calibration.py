import math

import numpy as np
import pytest

from helpers import bs_call_ref, bs_chain

from entrofit.calibration import (DEFAULT_STARTS, Quote, _Transform, bs_call, bs_vega, calibrate, fit_quality, implied_vol,
                                  model_vols)
from entrofit.errors import DomainError, InputError
from entrofit.models import BlackScholes, Heston, MarketEnv, SchobelZhu, VarianceGamma

ENV = MarketEnv(100.0)
SPX = MarketEnv(1305.44, 0.0015, 0.02, 152 / 365)
SPX_K = np.arange(900.0, 1601.0, 50.0)
HESTON_SPX = Heston(0.8568, 0.08, -0.8016, 0.5473, 0.0421)


def test_implied_vol_reference_price():
    assert implied_vol(9.9476449660225796, ENV, 100.0) == pytest.approx(0.25, abs=1e-10)
    assert round(implied_vol(9.9476, ENV, 100.0), 4) == 0.25


def test_implied_vol_outside_range():
    with pytest.raises(DomainError):
        implied_vol(20.0, ENV, 80.0)  # exactly intrinsic
    with pytest.raises(DomainError):
        implied_vol(100.0, ENV, 80.0)
    with pytest.raises(DomainError):
        implied_vol(5.0, ENV, -1.0)


def test_implied_vol_round_trip():
    rng = np.random.default_rng(3)
    env = MarketEnv(100.0, 0.03, 0.01, 0.75)
    for _ in range(200):
        K = float(np.exp(rng.uniform(-0.6, 0.6)) * 100)
        sig = float(rng.uniform(0.05, 1.2))
        price = float(bs_call_ref(env.forward, K, sig, env.maturity, env.discount))
        if price < 1e-10:
            continue
        v = implied_vol(price, env, K)
        assert abs(float(bs_call(env, K, v)) - price) <= 1e-10
        if bs_vega(env, K, sig) > 1e-2:
            assert v == pytest.approx(sig, abs=1e-8)


def test_bs_call_matches_reference():
    env = MarketEnv(90.0, 0.02, 0.04, 1.5)
    K = np.linspace(50, 150, 11)
    np.testing.assert_allclose(bs_call(env, K, 0.3), bs_call_ref(env.forward, K, 0.3, 1.5, env.discount), rtol=1e-13)


def test_quote_validation():
    with pytest.raises(InputError):
        Quote(100.0, 0.0)
    with pytest.raises(InputError):
        Quote(-1.0, 0.2)
    q = Quote.from_price(100.0, 9.9476449660225796, ENV)
    assert q.vol == pytest.approx(0.25, abs=1e-10) and q.weight == 1.0


def test_transform_round_trip():
    for kind, starts in DEFAULT_STARTS.items():
        tr = _Transform(kind)
        for s in starts:
            back = tr.to_params(tr.to_z(s))
            for k in tr.names:
                assert back[k] == pytest.approx(s[k], rel=1e-12)


def test_bs_surface():
    quotes = [Quote(k, 0.25) for k in (60.0, 80.0, 100.0, 120.0, 140.0)]
    rep = calibrate("bs", ENV, quotes)
    assert rep.converged and rep.model.sigma == pytest.approx(0.25, abs=1e-8)


def test_heston_self_calibration():
    vols = model_vols(HESTON_SPX, SPX, SPX_K)
    rep = calibrate("heston", SPX, [Quote(k, v) for k, v in zip(SPX_K, vols)])
    assert rep.sse <= 1e-4
    assert np.max(np.abs(rep.model_vols - vols)) < 1e-3


def test_noise_robustness():
    vols = model_vols(HESTON_SPX, SPX, SPX_K)
    clean = calibrate("heston", SPX, [Quote(k, v) for k, v in zip(SPX_K, vols)])
    rng = np.random.default_rng(11)
    noisy = vols + 1e-4 * rng.standard_normal(vols.size)
    rep = calibrate("heston", SPX, [Quote(k, v) for k, v in zip(SPX_K, noisy)])
    assert abs(rep.sse - clean.sse) < 1e-6


def test_vg_and_sz_fit_their_own_surfaces():
    for m in (VarianceGamma(-0.2808, 0.1535, 0.3638), SchobelZhu(1.6316, 0.1731, -0.8031, 0.3249, 0.1887)):
        vols = model_vols(m, SPX, SPX_K)
        rep = calibrate(m.kind, SPX, [Quote(k, v) for k, v in zip(SPX_K, vols)])
        assert rep.sse <= 1e-4


def test_too_few_quotes():
    with pytest.raises(InputError):
        calibrate("heston", ENV, [Quote(100.0, 0.2)])
    with pytest.raises(InputError):
        calibrate("merton", ENV, [Quote(100.0, 0.2)])


def test_fit_quality_exact_prior():
    chain = bs_chain([60.0, 100.0, 140.0])
    sse, H = fit_quality(BlackScholes(0.25), ENV, chain)
    assert sse == pytest.approx(0.0, abs=1e-18)
    assert H == pytest.approx(0.0, abs=1e-10)


def test_fit_quality_hand_sum():
    chain = bs_chain([60.0, 100.0, 140.0])
    quotes = [Quote(60.0, 0.25, 2.0), Quote(100.0, 0.25), Quote(140.0, 0.25, 0.5)]
    sse, H = fit_quality(BlackScholes(0.2), ENV, chain, quotes)
    assert sse == pytest.approx(2 * 0.05**2 + 0.05**2 + 0.5 * 0.05**2, rel=1e-8)
    assert H > 0

import numpy as np
import pytest

from helpers import FIXED_STRIKES, bs_chain, bs_digital_ref, random_chain

from entrofit.density import LebesguePrior, OptionChain, price_digital
from entrofit.errors import ArbitrageError, ConvergenceError, NumericalError
from entrofit.models import BlackScholes, Heston, MarketEnv
from entrofit.models.prior import as_prior
from entrofit.mred import digital_bounds, evaluate, minimize, tridiagonal_solve

ENV = MarketEnv(100.0)
LEB = LebesguePrior()


def test_one_strike_bounds():
    b = digital_bounds(bs_chain(FIXED_STRIKES[1]))
    assert b.lower[0] == 0.0
    assert b.upper[0] == pytest.approx((100.0 - 9.9476449660225796) / 100.0, rel=1e-15)
    assert round(b.upper[0], 5) == 0.90052


def test_empty_rectangle():
    with pytest.raises(ArbitrageError):
        OptionChain(100.0, [80.0, 90.0, 100.0], [25.0, 20.0, 15.0])


def test_identity_system():
    g = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(tridiagonal_solve(np.ones(3), np.zeros(2), g), g)


def test_tridiagonal_vs_dense():
    rng = np.random.default_rng(1)
    for n in range(1, 8):
        off = rng.normal(size=n - 1)
        diag = np.abs(rng.normal(size=n)) + 2.5
        H = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        g = rng.normal(size=n)
        x = tridiagonal_solve(diag, off, g)
        np.testing.assert_allclose(x, np.linalg.solve(H, g), rtol=1e-12, atol=1e-14)
        assert np.max(np.abs(H @ x - g)) < 1e-12 * np.max(np.abs(g))


def test_indefinite_pivot_raises():
    with pytest.raises(NumericalError):
        tridiagonal_solve(np.array([1.0, 1.0]), np.array([2.0]), np.array([1.0, 1.0]))


def test_matching_prior_is_stationary():
    p = as_prior(BlackScholes(0.25), ENV)
    chain = bs_chain(FIXED_STRIKES[3])
    ev = evaluate(p, chain, bs_digital_ref(100.0, chain.strikes, 0.25))
    assert ev.value == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(ev.gradient, 0.0, atol=1e-7)
    res = minimize(p, chain)
    assert res.iterations <= 1
    assert res.value == pytest.approx(0.0, abs=1e-9)


def test_lebesgue_quadrature_path_matches_closed_forms():
    from helpers import flat_prior

    flat = flat_prior()
    chain = bs_chain(FIXED_STRIKES[3])
    b = digital_bounds(chain)
    D = b.lower + 0.4 * (b.upper - b.lower)
    e1 = evaluate(LEB, chain, D)
    e2 = evaluate(flat, chain, D, method="adaptive")
    assert e1.value == pytest.approx(e2.value, abs=1e-9)
    np.testing.assert_allclose(e1.gradient, e2.gradient, atol=1e-8)
    np.testing.assert_allclose(e1.diag, e2.diag, rtol=1e-7)
    np.testing.assert_allclose(e1.off, e2.off, rtol=1e-7, atol=1e-9)


def test_hessian_matches_gradient_differences():
    chain = bs_chain(FIXED_STRIKES[5])
    b = digital_bounds(chain)
    D = b.lower + 0.5 * (b.upper - b.lower)
    ev = evaluate(LEB, chain, D)
    H = ev.hessian()
    h = 1e-6
    for j in range(D.size):
        e = np.zeros_like(D)
        e[j] = h
        col = (evaluate(LEB, chain, D + e).gradient - evaluate(LEB, chain, D - e).gradient) / (2 * h)
        np.testing.assert_allclose(col, H[:, j], rtol=1e-5, atol=1e-4)


@pytest.mark.parametrize("prior", ["lebesgue", "heston"])
def test_five_strike_digital_at_100(prior):
    p = LEB if prior == "lebesgue" else as_prior(Heston(1.0, 0.04, -0.3, 0.25, 0.04), ENV)
    q, D, H = minimize(p, bs_chain(FIXED_STRIKES[5]))
    assert round(price_digital(q, 100.0), 4) == 0.4510
    assert round(D[2], 4) == 0.4510


def test_optimum_inside_rectangle_and_tilt_continuous():
    rng = np.random.default_rng(17)
    for _ in range(10):
        chain = random_chain(rng, int(rng.integers(1, 6)))
        res = minimize(LEB, chain)
        assert digital_bounds(chain).contains(res.digitals)
        assert res.grad_norm < 1e-9
        np.testing.assert_allclose(res.density.log_tilt_jumps(), 0.0, atol=1e-9)
        assert np.all(np.diff(res.history) <= 1e-12 * (1 + np.abs(res.history[:-1])))


def test_iteration_cap():
    with pytest.raises(ConvergenceError) as exc:
        minimize(LEB, bs_chain(FIXED_STRIKES[5]), max_iter=1)
    assert exc.value.iterations == 1

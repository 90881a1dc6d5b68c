"""Shared independent oracles for the test suite."""

import math

import numpy as np
from scipy import integrate, stats

from entrofit.density import OptionChain

FIXED_STRIKES = {1: [100.0], 3: [60.0, 100.0, 140.0], 5: [60.0, 80.0, 100.0, 120.0, 140.0]}


def bs_call_ref(F, K, sigma, T=1.0, df=1.0):
    """Black-Scholes call via scipy.stats.norm, independent of the package pricer."""
    K = np.asarray(K, dtype=float)
    sd = sigma * math.sqrt(T)
    d1 = (np.log(F / K) + 0.5 * sd * sd) / sd
    return df * (F * stats.norm.cdf(d1) - K * stats.norm.cdf(d1 - sd))


def bs_digital_ref(F, K, sigma, T=1.0):
    sd = sigma * math.sqrt(T)
    d2 = (np.log(F / np.asarray(K, dtype=float)) - 0.5 * sd * sd) / sd
    return stats.norm.cdf(d2)


def bs_chain(strikes, sigma=0.25, F=100.0, T=1.0, digitals=False):
    K = np.asarray(strikes, dtype=float)
    D = bs_digital_ref(F, K, sigma, T) if digitals else None
    return OptionChain(F, K, bs_call_ref(F, K, sigma, T), D, T)


def random_chain(rng, n, F=100.0, with_digitals=False):
    """Arbitrage-free chain: BS calls at a random vol plus a smooth skew."""
    sigma = rng.uniform(0.12, 0.45)
    T = rng.uniform(0.25, 2.0)
    sd = sigma * math.sqrt(T)
    z = np.sort(rng.uniform(-1.6, 1.6, size=n))
    while np.any(np.diff(z) < 0.08):
        z = np.sort(rng.uniform(-1.6, 1.6, size=n))
    K = F * np.exp(z * sd)
    skew = rng.uniform(-0.2, 0.0)
    vols = sigma * (1.0 + skew * z * sd)
    C = bs_call_ref(F, K, vols, T)
    chain = OptionChain(F, K, C, None, T)
    if with_digitals:
        from entrofit.density import digital_bounds_arrays

        lo, hi = digital_bounds_arrays(chain)
        w = rng.uniform(0.2, 0.8, size=n)
        chain = chain.with_digitals(lo + w * (hi - lo))
    return chain


def quad_ref(f, a, b):
    """scipy.integrate.quad with tight tolerances (the independent route)."""
    val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=500)
    return val


def flat_prior():
    """Lebesgue measure presented as an ordinary prior, so solvers take the quadrature path."""
    from entrofit.density import PriorDensity

    class Flat(PriorDensity):
        name = "flat"
        support_hint = math.inf
        moment_bound = 0.0

        def pdf(self, S):
            S = np.asarray(S, dtype=float)
            return np.where(S >= 0, 1.0, 0.0)

        def logprice_pdf(self, x):
            return np.exp(np.asarray(x, dtype=float))

        @property
        def scale(self):
            return 100.0

    return Flat()

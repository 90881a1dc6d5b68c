"""Fair variance swap rates from fitted densities.

For a diffusion, ``sigma^2_fair = drift + (2/T) (ln S0 - E[ln S(T)])`` where
``drift`` is ``(2/T) E[int_0^T mu dt]`` (``2 (r - d)`` for deterministic
rates). ``E[ln S(T)]`` is the log contract. It equals ``H(q) - H~(q~)``, the
Shannon entropy of the price density minus that of the log-price density, so
the rate can be computed by two independent routes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from entrofit.density import TiltedDensity, entropy
from entrofit.errors import ConsistencyError, DomainError, InputError
from entrofit.quadrature import TIGHT_SPEC, QuadratureSpec, integrate

EULER_GAMMA = 0.57721566490153286061
ROUTE_TOL = 1e-6
TRADING_DAYS = 252


def _ei_series(s: float) -> float:
    total, term, k = 0.0, 1.0, 0
    while True:
        k += 1
        term *= s / k
        add = term / k
        total += add
        if abs(add) < 1e-17 * abs(total):
            return EULER_GAMMA + math.log(abs(s)) + total


def _e1_cf(x: float) -> float:
    """``e^x E1(x)`` for ``x > 1`` by the modified Lentz continued fraction."""
    tiny = 1e-300
    b = x + 1.0
    c, d = 1.0 / tiny, 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError("E1 continued fraction did not converge")


def _ei_asymptotic(s: float) -> float:
    return math.exp(s) * _scaled_ei(s)


def expint_ei(s: float) -> float:
    """Exponential integral ``Ei(s) = -PV int_{-s}^inf e^{-t}/t dt`` for real ``s != 0``.

    Positive arguments up to 40 use the power series (all terms positive); larger ones the
    asymptotic expansion. Negative arguments below -1 use ``Ei(s) = -E1(-s)`` with a
    continued fraction, which avoids the cancellation of the alternating series.
    """
    s = float(s)
    if s == 0.0:
        raise DomainError("Ei has a pole at 0")
    if not math.isfinite(s):
        return math.inf if s > 0 else 0.0
    if s > 709.0:
        raise DomainError(f"Ei({s:g}) overflows double precision")
    if s > 40.0:
        return _ei_asymptotic(s)
    if s < -1.0:
        return -_e1_cf(-s) * math.exp(s)
    return _ei_series(s)


@dataclass(frozen=True)
class DriftSpec:
    """``(2/T) E[int_0^T mu(t) dt]``; the default is ``2 (r - d)``."""

    value: float

    @classmethod
    def risk_neutral(cls, rate: float = 0.0, dividend: float = 0.0) -> "DriftSpec":
        return cls(2.0 * (rate - dividend))

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InputError("drift must be finite")


@dataclass(frozen=True)
class VarSwapResult:
    variance: float
    log_contract: float
    entropy: float
    log_entropy: float
    variance_entropy_route: float
    maturity: float

    @property
    def vol(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    @property
    def daily_variance(self) -> float:
        return self.variance / TRADING_DAYS


def log_contract(q: TiltedDensity, spec: QuadratureSpec = TIGHT_SPEC) -> float:
    """``E[ln S(T)]`` by bucket quadrature (the first bucket in log-price)."""
    return float(q.integrate(np.log, spec=spec))


def _scaled_ei(s: float) -> float:
    """``e^{-s} Ei(s)``, finite where ``Ei`` alone over- or underflows."""
    if s > 40.0:
        total, term = 1.0, 1.0
        for k in range(1, 60):
            nxt = term * k / s
            if abs(nxt) > abs(term):
                break
            term = nxt
            total += term
            if abs(term) < 1e-17:
                break
        return total / s
    if s < -1.0:
        return -_e1_cf(-s)
    return expint_ei(s) * math.exp(-s)


def _bucket_term(la: float, beta: float, S: float) -> float:
    """``alpha/beta (e^{beta S} ln S - Ei(beta S))`` with ``alpha = e^la``, evaluated in log scale."""
    if S == 0.0:
        return math.exp(la) / beta * (-EULER_GAMMA - math.log(abs(beta)))
    if math.isinf(S):
        return 0.0
    s = beta * S
    return math.exp(la + s) / beta * (math.log(S) - _scaled_ei(s))


def log_contract_med_closed(q: TiltedDensity) -> float:
    """``E[ln S(T)]`` for a maximum-entropy density from the exponential integral."""
    if not q.prior.is_lebesgue:
        raise InputError("the closed form needs a density tilted from Lebesgue measure")
    if not q.beta[-1] < 0:
        raise DomainError("last-bucket exponent must be negative")
    e = q.edges
    total = 0.0
    for i in range(q.beta.size):
        a, b, la, be = e[i], e[i + 1], q.log_alpha[i], q.beta[i]
        if be == 0.0:
            if math.isinf(b):
                raise DomainError("last bucket cannot have a zero exponent")
            prim = lambda S: 0.0 if S == 0.0 else S * math.log(S) - S
            total += math.exp(la) * (prim(b) - prim(a))
        else:
            total += _bucket_term(la, be, b) - _bucket_term(la, be, a)
    return float(total)


def log_density_entropy(q: TiltedDensity, spec: QuadratureSpec = TIGHT_SPEC) -> float:
    """Shannon entropy of the log-price density ``q~(x) = e^x q(e^x)``, integrated in ``x``."""
    p = q.prior
    e = q.edges
    total = 0.0
    for i in range(q.beta.size):
        la, be = q.log_alpha[i], q.beta[i]
        a = -math.inf if e[i] == 0.0 else math.log(e[i])
        hi = min(e[i + 1], p.support_hint)
        if not e[i] < hi:
            continue
        if math.isinf(hi):
            if not be < 0:
                raise DomainError("last-bucket exponent must be negative on an unbounded support")
            # beyond this point ln q~ < -750 and the contribution underflows
            hi = e[i] + (750.0 + abs(la) + 50.0) / -be
            hi += 2.0 * math.log(hi) / -be
        b = math.log(hi)

        def f(x, la=la, be=be):
            S = np.exp(x)
            base = p.logprice_pdf(x)
            with np.errstate(divide="ignore"):
                lbase = np.where(base > 0, np.log(np.where(base > 0, base, 1.0)), 0.0)
            lq = la + be * S + lbase
            return np.where(base > 0, -np.exp(lq) * lq, 0.0)

        total += integrate(f, a, b, spec).value
    return float(total)


def fair_rate(q: TiltedDensity, drift: DriftSpec | None = None, spot: float | None = None,
              maturity: float | None = None, spec: QuadratureSpec = TIGHT_SPEC) -> VarSwapResult:
    """Fair variance by the log-contract route, cross-checked by the entropy route."""
    chain = q.chain
    if maturity is None:
        if chain is None:
            raise InputError("maturity is required for a density without a chain")
        maturity = chain.maturity
    if spot is None:
        if chain is None:
            raise InputError("spot is required for a density without a chain")
        spot = chain.forward * math.exp(-(chain.rate - chain.dividend) * chain.maturity)
    if drift is None:
        drift = DriftSpec.risk_neutral(chain.rate, chain.dividend) if chain is not None else DriftSpec(0.0)
    T = maturity
    elog = log_contract(q, spec)
    if q.prior.is_lebesgue:
        closed = log_contract_med_closed(q)
        if abs(closed - elog) > ROUTE_TOL * max(1.0, abs(elog)):
            raise ConsistencyError(f"log contract: quadrature {elog:.12g} vs closed form {closed:.12g}")
        elog = closed
    H = entropy(q, spec)
    Ht = log_density_entropy(q, spec)
    var = drift.value + 2.0 / T * (math.log(spot) - elog)
    var_h = drift.value + 2.0 / T * (math.log(spot) - (H - Ht))
    if abs(var - var_h) > ROUTE_TOL:
        raise ConsistencyError(f"variance routes disagree: {var:.12g} vs {var_h:.12g}")
    return VarSwapResult(var, elog, H, Ht, var_h, T)

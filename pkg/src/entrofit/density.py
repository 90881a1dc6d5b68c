"""Option chains, prior densities, piecewise-exponentially tilted densities and
the pricing / entropy functionals evaluated against them.

All prices here are undiscounted (forward measure); discounting happens only at
the reporting boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from entrofit.errors import ArbitrageError, DomainError, InputError, QuadratureError
from entrofit.quadrature import DEFAULT_SPEC, TIGHT_SPEC, QuadratureSpec, integrate

# Cap on exponents handed to np.exp inside tilts.
_EXP_CAP = 700.0


@dataclass(frozen=True, eq=False)
class OptionChain:
    """Strikes ``K_1 < ... < K_n`` with undiscounted call (and optional digital) prices.

    ``forward`` is the undiscounted price of the call struck at zero. Sentinels
    ``K_0 = 0``, ``K_{n+1} = inf``, ``C_{n+1} = 0``, ``D_0 = 1``, ``D_{n+1} = 0``
    are exposed through the ``ext_*`` properties.
    """

    forward: float
    strikes: np.ndarray
    calls: np.ndarray
    digitals: np.ndarray | None = None
    maturity: float = 1.0
    rate: float = 0.0
    dividend: float = 0.0

    def __post_init__(self):
        strikes = np.atleast_1d(np.asarray(self.strikes, dtype=float))
        calls = np.atleast_1d(np.asarray(self.calls, dtype=float))
        object.__setattr__(self, "strikes", strikes)
        object.__setattr__(self, "calls", calls)
        if self.digitals is not None:
            object.__setattr__(self, "digitals", np.atleast_1d(np.asarray(self.digitals, dtype=float)))
        self._validate()

    def _validate(self):
        K, C = self.strikes, self.calls
        if not (self.forward > 0 and math.isfinite(self.forward)):
            raise InputError(f"forward must be positive, got {self.forward}")
        if self.maturity <= 0:
            raise InputError("maturity must be positive")
        if K.shape != C.shape:
            raise InputError("strikes and calls differ in length")
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(C)):
            raise InputError("non-finite strike or price")
        if np.any(K <= 0):
            raise InputError("strikes must be positive")
        for i in range(1, K.size):
            if K[i] == K[i - 1]:
                raise InputError(f"duplicate strike {K[i]}")
            if K[i] < K[i - 1]:
                raise InputError(f"strikes not increasing at index {i + 1}")
        ext_K, ext_C = self.ext_strikes, self.ext_calls
        for i in range(1, K.size + 1):
            if not ext_C[i] < ext_C[i - 1]:
                raise ArbitrageError(f"call price at strike {ext_K[i]} is not below the previous one", index=i)
        if K.size and not C[-1] > 0:
            raise ArbitrageError(f"call price at strike {K[-1]} must be positive", index=K.size)
        lo, hi = digital_bounds_arrays(self)
        for i in range(K.size):
            if not lo[i] < hi[i]:
                raise ArbitrageError(
                    f"call prices not strictly convex at strike {K[i]} "
                    f"(digital interval ({lo[i]:.10g}, {hi[i]:.10g}) is empty)",
                    index=i + 1,
                )
        if hi.size and not hi[0] < 1.0:
            raise ArbitrageError("call at the first strike is at or below intrinsic value", index=1)
        if self.digitals is not None:
            D = self.digitals
            if D.shape != K.shape:
                raise InputError("digitals and strikes differ in length")
            for i in range(K.size):
                if not lo[i] < D[i]:
                    raise ArbitrageError(
                        f"digital at strike {K[i]} = {D[i]:.10g} is not above the right call-spread "
                        f"lower bound {lo[i]:.10g}",
                        index=i + 1,
                    )
                if not D[i] < hi[i]:
                    raise ArbitrageError(
                        f"digital at strike {K[i]} = {D[i]:.10g} is not below the left call-spread "
                        f"upper bound {hi[i]:.10g}",
                        index=i + 1,
                    )

    @property
    def n(self) -> int:
        return self.strikes.size

    @property
    def discount_factor(self) -> float:
        return math.exp(-self.rate * self.maturity)

    @property
    def ext_strikes(self) -> np.ndarray:
        return np.concatenate([[0.0], self.strikes, [np.inf]])

    @property
    def ext_calls(self) -> np.ndarray:
        return np.concatenate([[self.forward], self.calls, [0.0]])

    @property
    def ext_digitals(self) -> np.ndarray:
        if self.digitals is None:
            raise InputError("chain carries no digital prices")
        return np.concatenate([[1.0], self.digitals, [0.0]])

    def with_digitals(self, digitals) -> "OptionChain":
        return OptionChain(self.forward, self.strikes, self.calls, np.asarray(digitals, dtype=float),
                           self.maturity, self.rate, self.dividend)

    def without_digitals(self) -> "OptionChain":
        return OptionChain(self.forward, self.strikes, self.calls, None, self.maturity, self.rate, self.dividend)

    def subset(self, strikes) -> "OptionChain":
        """Restrict to the given strikes (each must be present)."""
        idx = []
        for k in np.atleast_1d(strikes):
            hit = np.flatnonzero(np.isclose(self.strikes, k, rtol=0, atol=1e-9 * max(1.0, abs(k))))
            if hit.size == 0:
                raise InputError(f"strike {k} not in chain")
            idx.append(int(hit[0]))
        idx = sorted(set(idx))
        D = None if self.digitals is None else self.digitals[idx]
        return OptionChain(self.forward, self.strikes[idx], self.calls[idx], D,
                           self.maturity, self.rate, self.dividend)


def digital_bounds_arrays(chain: OptionChain) -> tuple[np.ndarray, np.ndarray]:
    """Open-interval bounds of arbitrage-free digital prices at each strike.

    ``lower_i`` is the right call-spread slope (zero at the last strike),
    ``upper_i`` the left call-spread slope.
    """
    K, C = chain.ext_strikes, chain.ext_calls
    n = chain.n
    slopes = np.empty(n + 1)
    for i in range(n + 1):
        if i == n:
            slopes[i] = 0.0
        else:
            slopes[i] = -(C[i + 1] - C[i]) / (K[i + 1] - K[i])
    upper = slopes[:n]
    lower = slopes[1:]
    return lower, upper


class PriorDensity:
    """Reference density ``p`` on ``[0, inf)``.

    Subclasses implement :meth:`logprice_pdf` (the density of ``x = ln S``,
    i.e. ``S p(S)`` at ``S = e^x``) and may override :meth:`pdf`.
    ``support_hint`` is the upper truncation: ``p`` is zero beyond it.
    ``moment_bound`` bounds the exponential tilt usable in the last bucket.
    """

    support_hint: float = math.inf
    moment_bound: float = math.inf
    is_lebesgue: bool = False
    breakpoints: tuple = ()
    name: str = "prior"

    def logprice_pdf(self, x):
        raise NotImplementedError

    def pdf(self, S):
        S = np.asarray(S, dtype=float)
        out = np.zeros_like(S)
        inside = (S > 0) & (S <= self.support_hint)
        if np.any(inside):
            Si = S[inside]
            out[inside] = self.logprice_pdf(np.log(Si)) / Si
        return out

    def log_pdf(self, S):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(S))

    @property
    def scale(self) -> float:
        """A representative price level used to split ``[0, inf)``."""
        return 1.0

    def rule(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        """Discrete measure ``(nodes, masses)`` approximating ``p`` on ``[lo, hi]``.

        Built once per interval by adaptive quadrature on the prior's first three
        moments and cached; reused for every tilt evaluated on that interval.
        """
        return _cached_rule(self, float(lo), float(hi))


@lru_cache(maxsize=4096)
def _cached_rule(prior: PriorDensity, lo: float, hi: float):
    hi = min(hi, prior.support_hint)
    if not lo < hi:
        return np.empty(0), np.empty(0)
    if math.isinf(hi):
        raise DomainError("a discrete rule needs a finite interval")
    spec = QuadratureSpec(rtol=1e-13, atol=1e-17, max_panels=40000, initial_panels=16)
    nodes, masses = [], []
    for a, b in _pieces(prior, lo, hi):
        if a == 0.0:
            xb = math.log(b)
            res = integrate(lambda x: np.vstack([prior.logprice_pdf(x), np.exp(x - xb) * prior.logprice_pdf(x)]),
                            -math.inf, xb, spec)
            nodes.append(np.exp(res.nodes))
            masses.append(res.weights * prior.logprice_pdf(res.nodes))
        else:
            res = integrate(lambda S: np.vstack([prior.pdf(S), (S / b) * prior.pdf(S), (S / b) ** 2 * prior.pdf(S)]),
                            a, b, spec)
            nodes.append(res.nodes)
            masses.append(res.weights * prior.pdf(res.nodes))
    return np.concatenate(nodes), np.concatenate(masses)


def _pieces(prior: PriorDensity, a: float, b: float):
    """Split ``[a, b]`` at the prior's breakpoints."""
    cuts = [a] + sorted(p for p in prior.breakpoints if a < p < b) + [b]
    return list(zip(cuts[:-1], cuts[1:]))


class LebesguePrior(PriorDensity):
    """``p = 1``: relative entropy against it is minus the Shannon entropy."""

    support_hint = math.inf
    moment_bound = 0.0
    is_lebesgue = True
    name = "lebesgue"

    def logprice_pdf(self, x):
        return np.exp(np.asarray(x, dtype=float))

    def pdf(self, S):
        S = np.asarray(S, dtype=float)
        return np.where(S >= 0, 1.0, 0.0)

    def log_pdf(self, S):
        return np.zeros_like(np.asarray(S, dtype=float))

    def rule(self, lo, hi):
        raise DomainError("the Lebesgue prior uses closed forms, not discrete rules")

    def __repr__(self):
        return "LebesguePrior()"


@dataclass(frozen=True, eq=False)
class TiltedDensity:
    """``q(S) = alpha_i exp(beta_i S) p(S)`` on ``[K_i, K_{i+1})``, ``i = 0..n``.

    Steep tilts on buckets far from zero push ``alpha`` past double range, so
    ``log_coef`` (the logs of the alphas) may be given instead and is then the
    authoritative coefficient; ``alpha`` is kept for reporting only.
    """

    prior: PriorDensity
    strikes: np.ndarray
    alpha: np.ndarray | None
    beta: np.ndarray
    chain: OptionChain | None = field(default=None, repr=False)
    log_coef: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("strikes", "beta"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.log_coef is None:
            alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
            if not np.all((alpha > 0) & np.isfinite(alpha)):
                raise InputError("alpha coefficients must be positive and finite")
            la = np.log(alpha)
        else:
            la = np.atleast_1d(np.asarray(self.log_coef, dtype=float))
            if not np.all(np.isfinite(la)):
                raise InputError("log-alpha coefficients must be finite")
            with np.errstate(over="ignore", under="ignore"):
                alpha = np.exp(la)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "log_coef", la)
        if la.shape != self.beta.shape or la.size != self.strikes.size + 1:
            raise InputError("need n+1 coefficients for n strikes")

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([[0.0], self.strikes, [np.inf]])

    @property
    def log_alpha(self) -> np.ndarray:
        return self.log_coef

    def bucket_of(self, S) -> np.ndarray:
        return np.searchsorted(self.strikes, np.asarray(S, dtype=float), side="right")

    def log_tilt(self, S, bucket=None):
        S = np.asarray(S, dtype=float)
        i = self.bucket_of(S) if bucket is None else bucket
        return self.log_alpha[i] + self.beta[i] * S

    def tilt(self, S, bucket=None):
        return np.exp(np.minimum(self.log_tilt(S, bucket), _EXP_CAP))

    def pdf(self, S):
        S = np.asarray(S, dtype=float)
        return np.where(S >= 0, self.tilt(S) * self.prior.pdf(S), 0.0)

    def log_tilt_jumps(self) -> np.ndarray:
        """``ln g(K_i+) - ln g(K_i-)`` at each strike."""
        K = self.strikes
        return (self.log_alpha[1:] + self.beta[1:] * K) - (self.log_alpha[:-1] + self.beta[:-1] * K)

    def bucket_integral(self, i: int, weight, lo=None, hi=None, spec: QuadratureSpec = DEFAULT_SPEC):
        """``int weight(S) q(S) dS`` over bucket ``i`` (optionally clipped to ``[lo, hi]``)."""
        e = self.edges
        a = e[i] if lo is None else max(lo, e[i])
        b = e[i + 1] if hi is None else min(hi, e[i + 1])
        try:
            return _weighted_integral(self.prior, weight, a, b, self.log_alpha[i], self.beta[i], spec)
        except QuadratureError as exc:
            raise QuadratureError(f"bucket {i}: {exc}", bucket=i, error=exc.error) from exc

    def integrate(self, weight, lo: float = 0.0, hi: float = math.inf, spec: QuadratureSpec = DEFAULT_SPEC):
        """``int_lo^hi weight(S) q(S) dS`` summed bucket by bucket."""
        total = 0.0
        e = self.edges
        for i in range(self.alpha.size):
            if e[i + 1] <= lo or e[i] >= hi:
                continue
            total = total + self.bucket_integral(i, weight, lo, hi, spec)
        return total


def _weighted_integral(prior: PriorDensity, weight, a: float, b: float, log_alpha: float, beta: float,
                       spec: QuadratureSpec):
    """``int_a^b weight(S) exp(log_alpha + beta S) p(S) dS``.

    ``weight`` maps an array of ``S`` to an array (or a stack of arrays).
    Intervals starting at 0 are integrated in ``x = ln S``; infinite upper
    limits use the rational tail map.
    """
    b = min(b, prior.support_hint)
    if not a < b:
        return 0.0
    if math.isinf(b) and beta >= prior.moment_bound:
        raise DomainError(f"tilt beta={beta:.6g} is outside the effective domain (beta* = {prior.moment_bound:.6g})")
    pieces = _pieces(prior, a, b)
    if len(pieces) > 1:
        return sum(_weighted_integral(prior, weight, lo, hi, log_alpha, beta, spec) for lo, hi in pieces)
    if a == 0.0 and math.isinf(b):
        mid = prior.scale
        return (_weighted_integral(prior, weight, 0.0, mid, log_alpha, beta, spec)
                + _weighted_integral(prior, weight, mid, b, log_alpha, beta, spec))

    if a == 0.0:
        shift = log_alpha + max(0.0, beta * b)

        def fx(x):
            S = np.exp(x)
            dens = prior.logprice_pdf(x) * np.exp(log_alpha + beta * S - shift)
            # far out in the left tail S underflows; the density factor is zero there
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.asarray(weight(S)) * dens
            return np.where(dens > 0, val, 0.0)

        return integrate(fx, -math.inf, math.log(b), spec).value * math.exp(shift)

    ref = a if (beta <= 0 or math.isinf(b)) else b
    shift = log_alpha + beta * ref

    # beta * (S - ref) rather than beta * S - beta * ref: the latter cancels for steep tilts
    def fs(S):
        return np.asarray(weight(S)) * np.exp(np.minimum(beta * (S - ref), _EXP_CAP)) * prior.pdf(S)

    return integrate(fs, a, b, spec).value * math.exp(shift)


def _one(S):
    return np.ones_like(S)


def pdf(q: TiltedDensity, S):
    """Density value; right-continuous at strikes, zero outside the prior's support."""
    return q.pdf(S)


def price_call(q: TiltedDensity, K: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Undiscounted call price ``int_K^inf (S - K) q(S) dS``."""
    if K < 0:
        raise DomainError("strike must be non-negative")
    return float(q.integrate(lambda S: S - K, lo=K, spec=spec))


def price_digital(q: TiltedDensity, K: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Undiscounted digital price ``int_K^inf q(S) dS``."""
    if K < 0:
        raise DomainError("strike must be non-negative")
    return float(q.integrate(_one, lo=K, spec=spec))


def total_mass(q: TiltedDensity, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    return float(q.integrate(_one, spec=spec))


def mean(q: TiltedDensity, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    return float(q.integrate(lambda S: S, spec=spec))


def entropy(q: TiltedDensity, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Shannon entropy ``-int q ln q`` of the price density."""
    total = 0.0
    prior = q.prior
    for i in range(q.alpha.size):
        la, b = q.log_alpha[i], q.beta[i]
        if prior.is_lebesgue:
            w = lambda S, la=la, b=b: la + b * S
        else:
            w = lambda S, la=la, b=b: la + b * S + _safe_log(prior.pdf(S))
        total += q.bucket_integral(i, w, spec=spec)
    return -float(total)


def relative_entropy(q: TiltedDensity, p: PriorDensity | None = None, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``int q ln(q / p)``; ``p`` defaults to the prior ``q`` was tilted from."""
    if p is None or p is q.prior:
        total = sum(q.bucket_integral(i, lambda S, la=q.log_alpha[i], b=q.beta[i]: la + b * S, spec=spec)
                    for i in range(q.alpha.size))
        return float(total)
    base = q.prior

    def w(S):
        return q.log_tilt(S) + _safe_log(base.pdf(S)) - _safe_log(p.pdf(S))

    return float(q.integrate(w, spec=spec))


def l1_distance(q: TiltedDensity, p: PriorDensity | None = None, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``int |q - p|``, used to check the Csiszar-Kullback bound."""
    p = q.prior if p is None else p
    if p is not q.prior:
        raise InputError("L1 distance is only provided against the density's own prior")
    return float(q.integrate(lambda S: np.abs(1.0 - np.exp(-np.minimum(q.log_tilt(S), _EXP_CAP))), spec=spec))


def _safe_log(v):
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(v > 0, np.log(np.where(v > 0, v, 1.0)), 0.0)


WEIGHTS = {
    "1": lambda S, beta: np.ones_like(S),
    "S": lambda S, beta: S,
    "S2": lambda S, beta: S * S,
    "lnS": lambda S, beta: np.log(S),
    "S_exp": lambda S, beta: S,
    "exp": lambda S, beta: np.ones_like(S),
    "S2_exp": lambda S, beta: S * S,
}
_EXPONENTIAL = {"S_exp", "exp", "S2_exp"}


def integrate_against(p: PriorDensity, a: float, b: float, weight: str = "1", beta: float = 0.0,
                      spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``int_a^b w(S) p(S) dS`` for one of the named weights in :data:`WEIGHTS`.

    Exponential weights carry the factor ``exp(beta S)``; an infinite upper
    limit with such a weight needs ``beta < p.moment_bound``.
    """
    if weight not in WEIGHTS:
        raise InputError(f"unknown weight {weight!r}; expected one of {sorted(WEIGHTS)}")
    if not a < b:
        raise InputError(f"need a < b, got ({a}, {b})")
    if a < 0:
        raise DomainError("priors live on [0, inf)")
    tilt = beta if weight in _EXPONENTIAL else 0.0
    if weight in _EXPONENTIAL and math.isinf(b) and math.isinf(p.support_hint) and tilt >= p.moment_bound:
        raise DomainError(f"exponential weight with beta={beta} >= beta*={p.moment_bound} diverges")
    fn = WEIGHTS[weight]
    return float(_weighted_integral(p, lambda S: fn(S, beta), a, b, 0.0, tilt, spec))

"""Per-bucket exponential tilts.

On each bucket ``[K_i, K_{i+1})`` the tilt ``alpha_i exp(beta_i S)`` is fixed by
two prices: the digital mass ``p_i`` and the conditional mean ``Kbar_i``. The
tilt exponent solves ``c_i'(beta) = Kbar_i`` where ``c_i`` is the cumulant
generating function of the prior restricted to the bucket; then
``alpha_i = p_i exp(-c_i(beta_i))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from entrofit.density import OptionChain, PriorDensity, TiltedDensity, _weighted_integral
from entrofit.errors import ArbitrageError, ConvergenceError, DomainError, NumericalError, QuadratureError
from entrofit.quadrature import QuadratureSpec

MAX_ITER = 100
ROOT_TOL = 1e-10
_TAYLOR = 1e-4
# beyond this many layer widths the adaptive cumulant integrates only the boundary layer
_STEEP = 1000.0
_LAYER = 750.0
# the mass sets the tolerance of the centred moments, which can integrate to zero
_SPEC = QuadratureSpec(rtol=1e-12, atol=1e-300, max_panels=20000, initial_panels=8, reference=0)


@dataclass(frozen=True)
class BucketTarget:
    index: int
    lower: float
    upper: float
    mass: float
    kbar: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ArbitrageError(f"bucket {self.index} has non-positive mass {self.mass:.6g}", index=self.index)
        if not self.lower < self.kbar < self.upper:
            raise ArbitrageError(
                f"bucket {self.index}: conditional mean {self.kbar:.10g} outside ({self.lower:.10g}, {self.upper:.10g})",
                index=self.index)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def tolerance(self, rtol: float = ROOT_TOL) -> float:
        scale = self.kbar if math.isinf(self.upper) else self.width
        return rtol * scale


@dataclass(frozen=True)
class CumulantEval:
    """``c``, ``c'`` and ``c''`` at one ``beta``."""

    c: float
    dc: float
    d2c: float


def bucket_targets(chain: OptionChain) -> list[BucketTarget]:
    """Targets for all ``n + 1`` buckets of a chain that carries digitals."""
    K, C, D = chain.ext_strikes, chain.ext_calls, chain.ext_digitals
    n = chain.n
    # asset-or-nothing prices C_i + K_i D_i; the sentinel at K = inf is zero
    aon = np.append(C[:-1] + K[:-1] * D[:-1], 0.0)
    out = []
    for i in range(n + 1):
        p = D[i] - D[i + 1]
        if not p > 0:
            raise ArbitrageError(f"digitals do not decrease at bucket {i}", index=i)
        out.append(BucketTarget(i, float(K[i]), float(K[i + 1]), float(p), float((aon[i] - aon[i + 1]) / p)))
    return out


def lebesgue_cumulant(bucket: tuple[float, float], beta: float) -> CumulantEval:
    """Closed-form cumulants of Lebesgue measure on ``bucket``."""
    a, b = bucket
    if math.isinf(b):
        if not beta < 0:
            raise DomainError(f"beta={beta:.6g} outside the effective domain (beta* = 0) of the last bucket")
        return CumulantEval(beta * a - math.log(-beta), a - 1.0 / beta, 1.0 / beta**2)
    w = b - a
    t = beta * w
    t2 = t * t
    if abs(t) < _TAYLOR:
        c = beta * a + math.log(w) + t / 2 + t2 / 24 - t2 * t2 / 2880
        m = 0.5 + t / 12 - t * t2 / 720 + t * t2 * t2 / 30240
    else:
        if t > 0:
            c = beta * b + math.log(-math.expm1(-t) / beta)
        else:
            c = beta * a + math.log(math.expm1(t) / beta)
        # 1/(1 - e^-t) rewritten as e^t/(e^t - 1) for t < 0 to avoid overflow
        m = (1.0 / (-math.expm1(-t)) if t > 0 else math.exp(t) / math.expm1(t)) - 1.0 / t
    if abs(t) < 0.25:
        # the closed forms cancel badly for small t
        m = 0.5 + t * (1 / 12 - t2 / 720 + t2**2 / 30240 - t2**3 / 1209600 + t2**4 / 47900160)
        v = 1 / 12 - t2 / 240 + t2**2 / 6048 - t2**3 / 172800 + t2**4 / 5322240
    else:
        half = 0.5 * abs(t)
        v = 1.0 / t2 - (1.0 / (4.0 * math.sinh(half) ** 2) if half < 350 else 0.0)
    return CumulantEval(c, a + w * m, w * w * v)


def _edges(p: PriorDensity, bucket):
    a, b = float(bucket[0]), float(bucket[1])
    b_eff = min(b, p.support_hint)
    if not a < b_eff:
        raise DomainError(f"bucket ({a:g}, {b:g}) lies beyond the prior's support ({p.support_hint:g})")
    return a, b, b_eff


def _check_domain(p: PriorDensity, b: float, beta: float):
    if math.isinf(b) and not beta < p.moment_bound:
        raise DomainError(f"beta={beta:.6g} outside the effective domain of the last bucket (beta* = {p.moment_bound:.6g})")


def cumulant(p: PriorDensity, bucket: tuple[float, float], beta: float, method: str = "auto") -> CumulantEval:
    """Cumulant ``c(beta) = ln int exp(beta S) p(S) dS`` over ``bucket`` with two derivatives.

    ``method`` is ``"adaptive"`` (fresh adaptive quadrature), ``"rule"``
    (the prior's cached discrete rule for the bucket) or ``"auto"``
    (closed forms for Lebesgue, otherwise adaptive).
    """
    if p.is_lebesgue:
        return lebesgue_cumulant(bucket, beta)
    a, b, b_eff = _edges(p, bucket)
    _check_domain(p, b, beta)
    if method == "rule":
        return _rule_cumulant(p, a, b_eff, beta)
    return _adaptive_cumulant(p, a, b_eff, beta)


def _adaptive_cumulant(p: PriorDensity, a: float, b: float, beta: float) -> CumulantEval:
    ref = a if (beta <= 0 or math.isinf(b)) else b
    if math.isinf(b):
        center, scale = a, max(a, 1.0)
    else:
        center, scale = 0.5 * (a + b), 0.5 * (b - a)
    if abs(beta) * (b - a) > _STEEP:
        # the tilt is a boundary layer of width 1/|beta| at ref; beyond exp(-750) nothing survives
        if ref == a:
            b = a + _LAYER / abs(beta)
        else:
            a = b - _LAYER / abs(beta)
        center, scale = ref, 1.0 / abs(beta)

    def w(S):
        z = (S - center) / scale
        return np.vstack([np.ones_like(S), z, z * z])

    try:
        m0, m1, m2 = _weighted_integral(p, w, a, b, -beta * ref, beta, _SPEC)
    except QuadratureError as exc:
        raise QuadratureError(f"cumulant on ({a:g}, {b:g}) at beta={beta:.6g}: {exc}", error=exc.error) from exc
    if not m0 > 0:
        raise NumericalError(f"prior has no mass on ({a:g}, {b:g})")
    mu = m1 / m0
    return CumulantEval(math.log(m0) + beta * ref, center + scale * mu, scale**2 * max(m2 / m0 - mu * mu, 0.0))


def _rule_cumulant(p: PriorDensity, a: float, b: float, beta: float) -> CumulantEval:
    nodes, masses = p.rule(a, b)
    if nodes.size == 0 or not masses.sum() > 0:
        raise NumericalError(f"prior has no mass on ({a:g}, {b:g})")
    pos = masses > 0
    nodes, masses = nodes[pos], masses[pos]
    e = beta * nodes + np.log(masses)
    top = e.max()
    w = np.exp(e - top)
    tot = w.sum()
    w /= tot
    mu = float(w @ nodes)
    var = float(w @ (nodes - mu) ** 2)
    return CumulantEval(float(top + math.log(tot)), mu, var)


@dataclass(frozen=True)
class BucketSolution:
    target: BucketTarget
    beta: float
    log_alpha: float
    cumulant: CumulantEval
    iterations: int


def solve_beta(p: PriorDensity, target: BucketTarget, method: str = "auto") -> float:
    """Root of ``c'(beta) = Kbar`` by bracketed Newton."""
    return _solve(p, target, method)[0]


def _solve(p: PriorDensity, target: BucketTarget, method: str = "auto", rtol: float = ROOT_TOL):
    bucket = (target.lower, target.upper)
    kbar, tol = target.kbar, target.tolerance(rtol)
    fast = method == "rule" or (method == "auto" and not p.is_lebesgue)
    ev = (lambda beta: cumulant(p, bucket, beta, "rule")) if fast else (lambda beta: cumulant(p, bucket, beta, "adaptive"))
    last = math.isinf(target.upper)
    if last:
        # the cumulant of the last bucket is finite only below beta*
        cap = p.moment_bound
        _, _, b_eff = _edges(p, bucket)
        unit = 1.0 / max(kbar - target.lower, 1e-12)
    else:
        cap = math.inf
        unit = 1.0 / target.width
    if p.is_lebesgue and last:
        beta0 = -unit
    else:
        beta0 = 0.0 if cap > 0 else -unit
    it = 0
    cur = ev(beta0)
    lo, hi = -math.inf, math.inf
    f_lo = f_hi = None
    if cur.dc < kbar:
        lo, f_lo = beta0, cur
    else:
        hi, f_hi = beta0, cur
    # geometric expansion until c' straddles kbar
    step = unit
    while f_lo is None or f_hi is None:
        it += 1
        if it > MAX_ITER:
            if fast and method == "auto":
                # kbar lies between a bucket edge and the rule's outermost node: only the
                # continuous cumulant can reach it
                return _solve(p, target, "adaptive", rtol)
            raise ConvergenceError(f"bucket {target.index}: no bracket for beta", residual=abs(cur.dc - kbar), iterations=it)
        if f_lo is None:
            trial = hi - step
        else:
            trial = lo + step
            if trial >= cap:
                trial = 0.5 * (lo + cap)
                if cap - lo < 1e-12 * max(1.0, abs(cap)):
                    raise DomainError(
                        f"bucket {target.index}: conditional mean {kbar:.10g} needs beta >= beta* = {cap:.6g}")
        step *= 2.0
        val = ev(trial)
        if val.dc < kbar:
            lo, f_lo = trial, val
        else:
            hi, f_hi = trial, val
    beta = lo if abs(f_lo.dc - kbar) < abs(f_hi.dc - kbar) else hi
    cur = f_lo if beta == lo else f_hi
    while abs(cur.dc - kbar) >= tol:
        it += 1
        if it > MAX_ITER:
            raise ConvergenceError(f"bucket {target.index}: beta iteration cap hit",
                                   residual=abs(cur.dc - kbar), iterations=it)
        if not cur.d2c > 0:
            raise NumericalError(f"bucket {target.index}: cumulant not strictly convex at beta={beta:.6g}")
        trial = beta - (cur.dc - kbar) / cur.d2c
        if not lo < trial < hi:
            trial = 0.5 * (lo + hi)
        if trial == beta or hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(beta)):
            break
        beta, cur = trial, ev(trial)
        if cur.dc < kbar:
            lo = beta
        else:
            hi = beta
    if fast:
        # polish with adaptive quadrature; the cached rule only targets the prior's own moments
        cur = cumulant(p, bucket, beta, "adaptive")
        for _ in range(5):
            if abs(cur.dc - kbar) < tol:
                break
            beta = beta - (cur.dc - kbar) / cur.d2c
            _check_domain(p, target.upper, beta)
            cur = cumulant(p, bucket, beta, "adaptive")
            it += 1
        else:
            if abs(cur.dc - kbar) >= tol:
                raise ConvergenceError(f"bucket {target.index}: polish did not converge",
                                       residual=abs(cur.dc - kbar), iterations=it)
    if abs(cur.dc - kbar) >= tol:
        raise ConvergenceError(f"bucket {target.index}: residual above tolerance",
                               residual=abs(cur.dc - kbar), iterations=it)
    return beta, cur, it


def solve_alpha(p: PriorDensity, target: BucketTarget, beta: float) -> float:
    """``alpha = p_i exp(-c_i(beta))``."""
    return math.exp(math.log(target.mass) - cumulant(p, (target.lower, target.upper), beta).c)


def solve_bucket(p: PriorDensity, target: BucketTarget, method: str = "auto",
                 rtol: float = ROOT_TOL) -> BucketSolution:
    beta, cur, it = _solve(p, target, method, rtol)
    return BucketSolution(target, beta, math.log(target.mass) - cur.c, cur, it)


def fit_with_digitals(p: PriorDensity, chain: OptionChain, method: str = "auto") -> TiltedDensity:
    """Tilt ``p`` bucket by bucket so the result reprices every call and digital."""
    return assemble(p, chain, [_solve_indexed(p, t, method) for t in bucket_targets(chain)])


def _solve_indexed(p, target, method, rtol=ROOT_TOL):
    try:
        return solve_bucket(p, target, method, rtol)
    except QuadratureError as exc:
        raise QuadratureError(f"bucket {target.index}: {exc}", bucket=target.index, error=exc.error) from exc
    except (DomainError, NumericalError) as exc:
        if f"bucket {target.index}" in str(exc):
            raise
        raise type(exc)(f"bucket {target.index}: {exc}") from exc


def assemble(p: PriorDensity, chain: OptionChain, sols: list[BucketSolution]) -> TiltedDensity:
    la = np.array([s.log_alpha for s in sols])
    return TiltedDensity(p, chain.strikes, None, np.array([s.beta for s in sols]), chain, log_coef=la)

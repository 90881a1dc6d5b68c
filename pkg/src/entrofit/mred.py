"""Calls-only fit: minimise the relative entropy over arbitrage-free digitals.

For a digital vector ``D`` inside the open rectangle of no-arbitrage bounds the
bucket solver yields a tilted density matching calls and digitals. Its
relative entropy ``H(D)`` is strictly convex in ``D`` with a closed-form
gradient (the log-jumps of the tilt at each strike) and a tridiagonal
Hessian, so a damped Newton iteration finds the unique minimiser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from entrofit.buckets import BucketSolution, assemble, bucket_targets, _solve_indexed
from entrofit.density import OptionChain, PriorDensity, TiltedDensity, digital_bounds_arrays, integrate_against
from entrofit.errors import ArbitrageError, ConvergenceError, DomainError, NumericalError, QuadratureError

GRAD_TOL = 1e-9
MAX_ITER = 200
FACE_MARGIN = 1e-12
# bucket roots are solved more tightly than the gradient target
_ROOT_RTOL = 1e-12


@dataclass(frozen=True)
class DigitalBounds:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, D, margin: float = 0.0) -> bool:
        D = np.asarray(D, dtype=float)
        return bool(np.all(D > self.lower + margin) and np.all(D < self.upper - margin))


@dataclass(frozen=True)
class ObjectiveEval:
    """``value`` of ``H``, its gradient and the tridiagonal Hessian ``(diag, off)``."""

    value: float
    gradient: np.ndarray
    diag: np.ndarray
    off: np.ndarray
    solutions: tuple[BucketSolution, ...]

    def hessian(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)


@dataclass(frozen=True)
class MinimizeResult:
    density: TiltedDensity
    digitals: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    history: tuple[float, ...] = ()

    def __iter__(self):
        return iter((self.density, self.digitals, self.value))


def digital_bounds(chain: OptionChain) -> DigitalBounds:
    """Open intervals of arbitrage-free digital prices, one per strike."""
    lo, hi = digital_bounds_arrays(chain)
    for i in range(lo.size):
        if not lo[i] < hi[i]:
            raise ArbitrageError(f"empty digital interval at strike {chain.strikes[i]:g}", index=i + 1)
    return DigitalBounds(lo, hi)


def evaluate(p: PriorDensity, chain: OptionChain, D, method: str = "auto") -> ObjectiveEval:
    """Relative entropy of the digital-consistent tilt of ``p`` at ``D`` with derivatives."""
    D = np.asarray(D, dtype=float)
    c = chain.with_digitals(D)
    sols = tuple(_solve_indexed(p, t, method, _ROOT_RTOL) for t in bucket_targets(c))
    mass = np.array([s.target.mass for s in sols])
    kbar = np.array([s.target.kbar for s in sols])
    beta = np.array([s.beta for s in sols])
    la = np.array([s.log_alpha for s in sols])
    cval = np.array([s.cumulant.c for s in sols])
    c2 = np.array([s.cumulant.d2c for s in sols])
    value = float(np.sum(mass * np.log(mass)) + np.sum(mass * (beta * kbar - cval)))
    K = chain.strikes
    grad = (la[1:] + beta[1:] * K) - (la[:-1] + beta[:-1] * K)
    # bucket j spans [K_j, K_{j+1}); K_j is strikes[j-1]
    right = K - kbar[:-1]
    diag = np.empty(K.size)
    off = np.empty(max(K.size - 1, 0))
    for i in range(K.size):
        j0, j1 = i, i + 1  # buckets on either side of strike K[i]
        diag[i] = (1.0 / mass[j0] + 1.0 / mass[j1] + right[i] ** 2 / (mass[j0] * c2[j0])
                   + (kbar[j1] - K[i]) ** 2 / (mass[j1] * c2[j1]))
    for i in range(K.size - 1):
        j = i + 1
        off[i] = -1.0 / mass[j] + (kbar[j] - K[i]) * (K[i + 1] - kbar[j]) / (mass[j] * c2[j])
    return ObjectiveEval(value, grad, diag, off, sols)


def tridiagonal_solve(diag, off, g) -> np.ndarray:
    """Solve ``H x = g`` for symmetric tridiagonal ``H`` by elimination without pivoting."""
    d = np.array(diag, dtype=float)
    e = np.asarray(off, dtype=float)
    x = np.array(g, dtype=float)
    n = d.size
    if x.size != n or e.size != max(n - 1, 0):
        raise NumericalError("tridiagonal system has inconsistent sizes")
    for i in range(n):
        if i > 0:
            m = e[i - 1] / d[i - 1]
            d[i] -= m * e[i - 1]
            x[i] -= m * x[i - 1]
        if not d[i] > 0:
            raise NumericalError(f"non-positive pivot {d[i]:.3g} at row {i}: Hessian not positive definite")
    x[n - 1] /= d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = (x[i] - e[i] * x[i + 1]) / d[i]
    return x


def _clamp(D, bounds: DigitalBounds):
    lo = bounds.lower + FACE_MARGIN * np.maximum(1.0, np.abs(bounds.lower))
    hi = bounds.upper - FACE_MARGIN * np.maximum(1.0, np.abs(bounds.upper))
    return np.clip(D, lo, hi)


def _prior_digitals(p, chain, bounds):
    """The prior's own digital prices pulled into the rectangle; the midpoint for Lebesgue measure."""
    if p.is_lebesgue:
        return bounds.midpoint
    D = np.array([integrate_against(p, float(k), math.inf, "1") for k in chain.strikes])
    w = bounds.upper - bounds.lower
    return np.clip(D, bounds.lower + 0.01 * w, bounds.upper - 0.01 * w)


def _start(p, chain, bounds, method):
    D = _prior_digitals(p, chain, bounds)
    for _ in range(60):
        try:
            return D, evaluate(p, chain, D, method)
        except DomainError:
            # the last bucket's mean is too far out for the prior's tail; move it in
            D = D.copy()
            D[-1] = 0.5 * (D[-1] + bounds.upper[-1])
    raise DomainError("no feasible starting point: the prior's tail cannot carry the last call")


def _beyond_domain(p, it):
    return DomainError(
        f"the minimiser needs a last-bucket tilt at or above beta* = {p.moment_bound:.6g} "
        f"(prior tail too thin for the last call); stopped after {it} iterations")


def minimize(p: PriorDensity, chain: OptionChain, method: str = "auto",
             tol: float = GRAD_TOL, max_iter: int = MAX_ITER) -> MinimizeResult:
    """Minimum relative-entropy density repricing the chain's calls."""
    bounds = digital_bounds(chain)
    D, ev = _start(p, chain, bounds, method)
    history = [ev.value]
    it = 0
    pinned = 0
    while True:
        gnorm = float(np.max(np.abs(ev.gradient)))
        if gnorm < tol:
            break
        if it >= max_iter:
            raise ConvergenceError(f"Newton stopped after {it} iterations with gradient {gnorm:.3g}",
                                   residual=gnorm, iterations=it)
        it += 1
        step = -tridiagonal_solve(ev.diag, ev.off, ev.gradient)
        t = 1.0
        accepted = blocked = False
        for _ in range(60):
            trial = D + t * step
            if bounds.contains(trial):
                trial = _clamp(trial, bounds)
                try:
                    ev_new = evaluate(p, chain, trial, method)
                except DomainError:
                    ev_new, blocked = None, True
                except (ArbitrageError, QuadratureError, ConvergenceError):
                    # within rounding of a face of the rectangle: treat as infeasible and backtrack
                    ev_new = None
                if ev_new is not None:
                    slack = 1e-13 * (1.0 + abs(ev.value))
                    gn = float(np.max(np.abs(ev_new.gradient)))
                    if ev_new.value < ev.value + slack or (ev_new.value <= ev.value + 1e3 * slack and gn < gnorm):
                        accepted = True
                        break
            t *= 0.5
        if not accepted:
            if blocked:
                raise _beyond_domain(p, it)
            raise ConvergenceError(f"line search failed at iteration {it} with gradient {gnorm:.3g}",
                                   residual=gnorm, iterations=it)
        # repeated tiny steps cut short by the tail bound: the optimum lies outside the domain
        pinned = pinned + 1 if (blocked and t < 1e-3) else 0
        if pinned >= 8:
            raise _beyond_domain(p, it)
        D, ev = trial, ev_new
        history.append(ev.value)
    q = assemble(p, chain.with_digitals(D), list(ev.solutions))
    return MinimizeResult(q, D, ev.value, it, float(np.max(np.abs(ev.gradient))), tuple(history))

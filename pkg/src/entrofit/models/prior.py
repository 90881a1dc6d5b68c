"""Model-implied prior densities for the relative-entropy fit.

Black-Scholes and Variance Gamma use closed-form densities. Stochastic
volatility models are inverted once onto a log-price grid and interpolated
with a cubic spline in ``ln p~``; beyond the region where the inversion is
reliable the log density is continued linearly.

Every prior is cut at the upper ``1 - cutoff`` quantile (``support_hint``)
and renormalised on what remains. ``moment_bound`` is the largest tilt the
last bucket may carry: minus the log-density secant over ``[S_max/10, S_max]``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from entrofit.density import PriorDensity
from entrofit.errors import DomainError, NumericalError
from entrofit.models.fourier import (
    InversionSpec,
    bs_logprice_pdf,
    invert_pdf,
    log_moments,
    vg_pdf_closed,
)
from entrofit.models.params import BlackScholes, MarketEnv, Model, VarianceGamma
from entrofit.quadrature import QuadratureSpec, integrate

DEFAULT_CUTOFF = 1e-12
_TABLE_INVERSION = InversionSpec(envelope=1e-15)
_TAIL_SPEC = QuadratureSpec(rtol=1e-12, atol=1e-300, max_panels=4000, initial_panels=8)


class _LogTable:
    """Spline of ``ln p~`` on a grid, with linear log tails."""

    def __init__(self, model: Model, env: MarketEnv, spacing: float = 1 / 50, floor: float = 1e-13):
        center, std = log_moments(model, env)
        h = std * spacing
        n = int(12.0 / spacing)
        x = center + h * np.arange(-n, n + 1)
        y = invert_pdf(model, env, x, _TABLE_INVERSION)
        peak = y.max()
        # grow each side until it falls below the floor
        while (y[0] >= floor * peak or y[-1] >= floor * peak) and x[-1] - x[0] < 200 * std:
            grow_l, grow_r = y[0] >= floor * peak, y[-1] >= floor * peak
            k = n // 2
            parts_x, parts_y = [x], [y]
            if grow_l:
                xl = x[0] - h * np.arange(k, 0, -1)
                parts_x.insert(0, xl)
                parts_y.insert(0, invert_pdf(model, env, xl, _TABLE_INVERSION))
            if grow_r:
                xr = x[-1] + h * np.arange(1, k + 1)
                parts_x.append(xr)
                parts_y.append(invert_pdf(model, env, xr, _TABLE_INVERSION))
            x, y = np.concatenate(parts_x), np.concatenate(parts_y)
        ipk = int(np.argmax(y))
        thr = floor * peak
        lo = ipk
        while lo > 0 and y[lo - 1] > thr:
            lo -= 1
        hi = ipk
        while hi < y.size - 1 and y[hi + 1] > thr:
            hi += 1
        if hi - lo < 20:
            raise NumericalError(f"inverted {model.kind} density is too narrow to tabulate")
        xs, ly = x[lo:hi + 1], np.log(y[lo:hi + 1])
        self.spline = CubicSpline(xs, ly)
        self.x_lo, self.x_hi = float(xs[0]), float(xs[-1])
        self.y_lo, self.y_hi = float(ly[0]), float(ly[-1])
        m = max(int(1.0 / spacing), 4)
        self.s_lo = self._slope(xs[:m], ly[:m], sign=1.0, std=std)
        self.s_hi = self._slope(xs[-m:], ly[-m:], sign=-1.0, std=std)

    @staticmethod
    def _slope(xs, ly, sign, std):
        s = float(np.polyfit(xs, ly, 1)[0])
        # the continuation must decay; fall back to a one-std e-fold
        return s if sign * s > 0 else sign / std

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        left, right = x < self.x_lo, x > self.x_hi
        mid = ~(left | right)
        out[mid] = self.spline(x[mid])
        out[left] = self.y_lo + self.s_lo * (x[left] - self.x_lo)
        out[right] = self.y_hi + self.s_hi * (x[right] - self.x_hi)
        return out


class ModelPrior(PriorDensity):
    """Density of ``S(T)`` under ``model``, truncated above at ``support_hint``."""

    def __init__(self, model: Model, env: MarketEnv, cutoff: float = DEFAULT_CUTOFF):
        if not 0 < cutoff < 1e-3:
            raise DomainError("cutoff must lie in (0, 1e-3)")
        self.model, self.env, self.cutoff = model, env, cutoff
        self.name = model.kind
        self._log_norm = 0.0
        if isinstance(model, BlackScholes):
            self._raw = lambda x: bs_logprice_pdf(model, env, x)
        elif isinstance(model, VarianceGamma):
            self._raw = lambda x: vg_pdf_closed(model, env, x)
            self.breakpoints = (math.exp(model.log_center(env)),)
        else:
            table = _LogTable(model, env)
            self._raw = lambda x: np.exp(table(x))
        self.support_hint = self._quantile_cut()
        mass = self._mass(-math.inf, math.log(self.support_hint))
        self._log_norm = -math.log(mass)
        # secant of the log density over the last decade of the support; since S >= 0 every
        # beta <= 0 is integrable, so a negative secant (left end in the left tail) means 0
        s_hi = self.support_hint
        lp = np.log(self.pdf(np.array([0.1 * s_hi, s_hi])))
        self.moment_bound = max(float(-(lp[1] - lp[0]) / (0.9 * s_hi)), 0.0)

    def __repr__(self):
        return f"ModelPrior({self.model!r}, {self.env!r})"

    @property
    def scale(self) -> float:
        return self.env.forward

    def _logcuts(self):
        return [math.log(b) for b in self.breakpoints]

    def _mass(self, a: float, b: float) -> float:
        cuts = [a] + [c for c in self._logcuts() if a < c < b] + [b]
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            total += integrate(self._raw, lo, hi, _TAIL_SPEC).value
        return total

    def _quantile_cut(self) -> float:
        center, std = log_moments(self.model, self.env)
        def log_tail(x):
            return math.log(max(self._mass(x, math.inf), 1e-300)) - math.log(self.cutoff)

        lo, hi = center, center + std
        while log_tail(hi) > 0:
            lo, hi = hi, hi + 2.0 * (hi - center)
            if hi - center > 400 * std:
                raise NumericalError("upper quantile not bracketed")
        return math.exp(brentq(log_tail, lo, hi, xtol=1e-10))

    def logprice_pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = self._raw(x) * math.exp(self._log_norm)
        return np.where(x <= math.log(self.support_hint), out, 0.0)


@lru_cache(maxsize=64)
def as_prior(model: Model, env: MarketEnv, cutoff: float = DEFAULT_CUTOFF) -> ModelPrior:
    """Cached :class:`ModelPrior` for ``(model, env)``."""
    return ModelPrior(model, env, cutoff)

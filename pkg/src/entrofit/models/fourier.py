"""Fourier inversion of characteristic functions: log-price densities,
in-the-money probabilities and European call / digital prices, plus the
closed-form Black-Scholes and Variance Gamma log-price densities."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from entrofit.errors import DomainError, InputError
from entrofit.models.params import BlackScholes, MarketEnv, Model, VarianceGamma
from entrofit.quadrature import QuadratureSpec, integrate

_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)


class TruncationWarning(RuntimeWarning):
    """The characteristic function did not decay below target before ``max_a``."""


@dataclass(frozen=True)
class InversionSpec:
    """``a`` fixes the truncation point; ``None`` extends it in doublings until
    the integrand envelope drops below ``envelope``."""

    a: float | None = None
    envelope: float = 1e-12
    max_a: float = 1e5
    panel_width: float | None = None

    def __post_init__(self):
        if self.a is not None and not self.a > 0:
            raise InputError("truncation point a must be positive")


DEFAULT_INVERSION = InversionSpec()


def log_moments(model: Model, env: MarketEnv, h: float = 1e-3) -> tuple[float, float]:
    """Mean and standard deviation of ``ln S(T)`` from finite differences of ``ln phi`` at 0."""
    lp = np.log(model.charfn(np.array([-h, 0.0, h], dtype=complex), env))
    mean = float(((lp[2] - lp[0]) / (2j * h)).real)
    var = float((-(lp[2] - 2 * lp[1] + lp[0]) / h**2).real)
    return mean, math.sqrt(max(var, 1e-12))


def truncation_point(model: Model, env: MarketEnv, spec: InversionSpec = DEFAULT_INVERSION,
                     shift: complex = 0.0, divide_by_u: bool = False) -> tuple[float, bool]:
    """Smallest doubling ``a`` with the envelope below target on ``[a, 2a]``.

    Returns ``(a, reached)``; ``reached`` is False when ``max_a`` was hit.
    """
    if spec.a is not None:
        return spec.a, True
    _, std = log_moments(model, env)
    a = 4.0 / std
    norm = abs(model.charfn(np.array([shift], dtype=complex), env)[0]) if shift else 1.0
    while a <= spec.max_a:
        u = np.linspace(a, 2 * a, 33)
        env_vals = np.abs(model.charfn(u + shift, env)) / norm
        if divide_by_u:
            env_vals = env_vals / u
        if env_vals.max() < spec.envelope:
            return a, True
        a *= 2.0
    return spec.max_a, False


def _u_rule(a: float, width: float):
    n = max(int(math.ceil(a / width)), 1)
    edges = np.linspace(0.0, a, n + 1)
    h = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + h[:, None] * _GL16_X).ravel()
    w = (h[:, None] * _GL16_W).ravel()
    return u, w


def invert_pdf(model: Model, env: MarketEnv, x, spec: InversionSpec = DEFAULT_INVERSION) -> np.ndarray:
    """Density of ``x = ln S(T)``: ``(1/pi) int_0^a Re[exp(-iux) phi(u)] du``.

    Values are real; tiny negative round-off (above ``-1e-12``) is clamped to 0.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    center, _ = log_moments(model, env)
    a, reached = truncation_point(model, env, spec)
    if not reached:
        warnings.warn(f"characteristic function of {model.kind} not below {spec.envelope} at a={a}",
                      TruncationWarning, stacklevel=2)
    reach = max(float(np.max(np.abs(x - center))), 1.0)
    # a 16-point Gauss panel resolves up to ~6 radians of phase to round-off
    width = spec.panel_width or min(6.0 / reach, a / 16.0)
    u, w = _u_rule(a, width)
    phi = model.charfn(u, env) * np.exp(-1j * u * center) * w
    re, im = phi.real, phi.imag
    out = np.empty(x.size)
    chunk = max(1, 4_000_000 // u.size)
    for s in range(0, x.size, chunk):
        theta = np.outer(x[s:s + chunk] - center, u)
        out[s:s + chunk] = (np.cos(theta) @ re + np.sin(theta) @ im) / math.pi
    out[(out < 0) & (out > -1e-12)] = 0.0
    return out


def cdf_bar(model: Model, env: MarketEnv, K, measure: str = "bond",
            spec: InversionSpec = DEFAULT_INVERSION) -> np.ndarray | float:
    """In-the-money probability ``P(S(T) > K)`` under the bond (Pi_2) or stock (Pi_1) numeraire."""
    if measure not in ("bond", "stock"):
        raise InputError("measure must be 'bond' or 'stock'")
    Karr = np.atleast_1d(np.asarray(K, dtype=float))
    if np.any(Karr <= 0):
        raise DomainError("strikes must be positive")
    k = np.log(Karr)
    shift = -1j if measure == "stock" else 0.0
    a, reached = truncation_point(model, env, spec, shift=shift, divide_by_u=True)
    if not reached:
        warnings.warn(f"Pi integrand of {model.kind} not below {spec.envelope} at a={a}",
                      TruncationWarning, stacklevel=2)
    norm = model.charfn(np.array([-1j]), env)[0] if measure == "stock" else 1.0
    center, _ = log_moments(model, env)

    def f(u):
        phi = model.charfn(u + shift, env) / norm
        # exp(-iuk) phi(u) / (iu), written so the u -> 0 limit stays finite
        z = np.exp(-1j * np.outer(k - center, u)) * (phi * np.exp(-1j * u * center))[None, :]
        return (z / (1j * u)).real

    res = integrate(f, 0.0, a, QuadratureSpec(rtol=1e-12, atol=1e-14, max_panels=20000, initial_panels=32))
    p = 0.5 + np.asarray(res.value) / math.pi
    p = np.clip(p, 0.0, 1.0)
    return p if np.ndim(K) else float(p[0])


def price_call_cf(model: Model, env: MarketEnv, K, spec: InversionSpec = DEFAULT_INVERSION):
    """Discounted call ``e^{-dT} S Pi_1 - e^{-rT} K Pi_2``."""
    pi1 = cdf_bar(model, env, K, "stock", spec)
    pi2 = cdf_bar(model, env, K, "bond", spec)
    T = env.maturity
    return math.exp(-env.dividend * T) * env.spot * pi1 - math.exp(-env.rate * T) * np.asarray(K) * pi2


def price_digital_cf(model: Model, env: MarketEnv, K, spec: InversionSpec = DEFAULT_INVERSION):
    """Discounted cash-or-nothing digital ``e^{-rT} Pi_2``."""
    return math.exp(-env.rate * env.maturity) * cdf_bar(model, env, K, "bond", spec)


def bs_logprice_pdf(model: BlackScholes, env: MarketEnv, x):
    x = np.asarray(x, dtype=float)
    s2 = model.sigma**2 * env.maturity
    return np.exp(-((x - model.log_mean(env)) ** 2) / (2.0 * s2)) / math.sqrt(2.0 * math.pi * s2)


def _log_kv(order: float, z):
    """``log K_order(z)``; the uniform large-order expansion takes over where ``kve`` overflows."""
    z = np.asarray(z, dtype=float)
    if order < 50.0:
        return np.log(special.kve(order, z)) - z
    t = z / order
    r = np.sqrt(1.0 + t * t)
    p = 1.0 / r
    eta = r + np.log(t / (1.0 + r))
    u1 = (3 * p - 5 * p**3) / 24
    u2 = (81 * p**2 - 462 * p**4 + 385 * p**6) / 1152
    u3 = (30375 * p**3 - 369603 * p**5 + 765765 * p**7 - 425425 * p**9) / 414720
    series = 1 - u1 / order + u2 / order**2 - u3 / order**3
    return 0.5 * math.log(math.pi / (2 * order)) - order * eta - 0.5 * np.log(r) + np.log(series)


def vg_pdf_closed(model: VarianceGamma, env: MarketEnv, x):
    """Closed-form VG log-price density (gamma-time-changed Brownian motion).

    At ``x~ = 0`` the removable singularity is replaced by its limit when
    ``T/nu > 1/2``; for ``T/nu <= 1/2`` the density is infinite there and
    :class:`DomainError` is raised if that point is requested.
    """
    x = np.asarray(x, dtype=float)
    T, th, sig, nu = env.maturity, model.theta, model.sigma, model.nu
    xt = x - model.log_center(env)
    order = T / nu - 0.5
    c = 2.0 * sig**2 / nu + th**2
    log_pref = (math.log(2.0) - (T / nu) * math.log(nu) - 0.5 * math.log(2.0 * math.pi)
                - math.log(sig) - special.gammaln(T / nu))
    ax = np.abs(xt)
    small = ax < 1e-300
    axs = np.where(small, 1.0, ax)
    z = axs * math.sqrt(c) / sig**2
    log_body = th * xt / sig**2 + (T / (2 * nu) - 0.25) * np.log(axs**2 / c) + _log_kv(abs(order), z)
    out = np.exp(log_pref + log_body)
    if np.any(small):
        if order <= 0:
            raise DomainError("VG density is infinite at x~=0 when T/nu <= 1/2")
        limit = math.exp(log_pref + special.gammaln(order) - math.log(2.0) + order * math.log(2 * sig**2 / c))
        out = np.where(small, limit, out)
    return out

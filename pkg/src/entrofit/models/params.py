"""Market environment and model parameter sets, each with its characteristic
function of the log-price ``x = ln S(T)``."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from entrofit.errors import InputError


@dataclass(frozen=True)
class MarketEnv:
    spot: float
    rate: float = 0.0
    dividend: float = 0.0
    maturity: float = 1.0

    def __post_init__(self):
        if not self.spot > 0:
            raise InputError("spot must be positive")
        if not self.maturity > 0:
            raise InputError("maturity must be positive")

    @property
    def forward(self) -> float:
        return self.spot * math.exp((self.rate - self.dividend) * self.maturity)

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.maturity)

    @property
    def drift(self) -> float:
        """``ln S(0) + (r - d) T``."""
        return math.log(self.spot) + (self.rate - self.dividend) * self.maturity


class Model:
    kind: str = ""
    # positive parameters, used by calibration transforms
    positive: tuple[str, ...] = ()
    correlations: tuple[str, ...] = ()

    def charfn(self, u, env: MarketEnv):
        raise NotImplementedError

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **kw):
        d = self.as_dict()
        d.update(kw)
        return type(self)(**d)


@dataclass(frozen=True)
class BlackScholes(Model):
    sigma: float

    kind = "bs"
    positive = ("sigma",)

    def __post_init__(self):
        if not self.sigma > 0:
            raise InputError("BS sigma must be positive")

    def log_mean(self, env: MarketEnv) -> float:
        return env.drift - 0.5 * self.sigma**2 * env.maturity

    def charfn(self, u, env: MarketEnv):
        u = np.asarray(u, dtype=complex)
        return np.exp(1j * u * self.log_mean(env) - 0.5 * self.sigma**2 * u * u * env.maturity)


@dataclass(frozen=True)
class Heston(Model):
    """Square-root variance; ``lam`` (market price of volatility risk) stays 0 for pricing."""

    kappa: float
    theta: float
    rho: float
    sigma: float
    v0: float
    lam: float = 0.0

    kind = "heston"
    positive = ("kappa", "theta", "sigma", "v0")
    correlations = ("rho",)

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise InputError("Heston rho must lie in [-1, 1]")
        if not self.sigma > 0:
            raise InputError("Heston sigma must be positive")
        if self.v0 < 0 or self.theta < 0 or self.kappa < 0:
            raise InputError("Heston kappa, theta, v0 must be non-negative")

    def charfn(self, u, env: MarketEnv):
        u = np.asarray(u, dtype=complex)
        T = env.maturity
        k, th, rho, sig = self.kappa, self.theta, self.rho, self.sigma
        b = k + self.lam
        a = b - 1j * rho * sig * u
        # the root with non-positive real part keeps ln(...) on its principal branch
        d2 = -np.sqrt(a * a + sig * sig * (1j * u + u * u))
        g = (a + d2) / (a - d2)
        e = np.exp(d2 * T)
        C = (env.rate - env.dividend) * 1j * u * T + k * th / sig**2 * (
            (a + d2) * T - 2.0 * np.log((1.0 - g * e) / (1.0 - g)))
        D = (a + d2) / sig**2 * (1.0 - e) / (1.0 - g * e)
        return np.exp(C + D * self.v0 + 1j * u * math.log(env.spot))


# Gauss-Legendre nodes for the time integral inside the Schobel-Zhu exponent.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class SchobelZhu(Model):
    """Ornstein-Uhlenbeck volatility ``v`` with mean level ``theta``."""

    kappa: float
    theta: float
    rho: float
    sigma: float
    v0: float

    kind = "sz"
    positive = ("kappa", "sigma")
    correlations = ("rho",)

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise InputError("SZ rho must lie in [-1, 1]")
        if not self.sigma > 0:
            raise InputError("SZ sigma must be positive")
        if not self.kappa > 0:
            raise InputError("SZ kappa must be positive")

    def _coefficients(self, u, tau):
        """``(D, B, g, gamma, b)`` solving the Riccati system at time-to-go ``tau``.

        ``ln phi = iu x0 + D v0^2 / 2 + B v0 + C``; ``D`` and ``B`` are closed
        form in the decaying exponential ``exp(-gamma tau)`` with Re gamma >= 0.
        """
        k, th, rho, sig = self.kappa, self.theta, self.rho, self.sigma
        b = k - 1j * u * rho * sig
        c = u * u + 1j * u
        gam = np.sqrt(b * b + sig * sig * c)
        g = (b - gam) / (b + gam)
        e1 = np.exp(-gam * tau)
        e2 = e1 * e1
        D = (b - gam) / sig**2 * (1.0 - e2) / (1.0 - g * e2)
        B = -k * th * c * (1.0 - e1) ** 2 / (gam * ((b + gam) + (gam - b) * e2))
        return D, B, g, gam, b

    def charfn(self, u, env: MarketEnv):
        u = np.asarray(u, dtype=complex)
        T = env.maturity
        k, th, sig = self.kappa, self.theta, self.sigma
        D, B, g, gam, b = self._coefficients(u, T)
        # constant term: closed-form log part plus a graded quadrature of
        # kappa*theta*B + sigma^2 B^2 / 2 over time-to-go
        log_part = -0.5 * ((gam - b) * T + np.log((1.0 - g * np.exp(-2.0 * gam * T)) / (1.0 - g)))
        edges = T * np.concatenate([[0.0], 2.0 ** np.arange(-14, 1)])
        acc = np.zeros_like(u)
        for lo, hi in zip(edges[:-1], edges[1:]):
            h = 0.5 * (hi - lo)
            for xg, wg in zip(_GL_X, _GL_W):
                _, Bs, _, _, _ = self._coefficients(u, lo + h * (xg + 1.0))
                acc = acc + wg * h * (k * th * Bs + 0.5 * sig * sig * Bs * Bs)
        C = (env.rate - env.dividend) * 1j * u * T + log_part + acc
        return np.exp(C + 0.5 * D * self.v0**2 + B * self.v0 + 1j * u * math.log(env.spot))


@dataclass(frozen=True)
class VarianceGamma(Model):
    theta: float
    sigma: float
    nu: float

    kind = "vg"
    positive = ("sigma", "nu")

    def __post_init__(self):
        if not (self.sigma > 0 and self.nu > 0):
            raise InputError("VG sigma and nu must be positive")
        if not 1.0 - self.theta * self.nu - 0.5 * self.sigma**2 * self.nu > 0:
            raise InputError("VG parameters make the martingale correction undefined")

    @property
    def omega(self) -> float:
        return math.log(1.0 - self.theta * self.nu - 0.5 * self.sigma**2 * self.nu) / self.nu

    def log_center(self, env: MarketEnv) -> float:
        return env.drift + self.omega * env.maturity

    def charfn(self, u, env: MarketEnv):
        u = np.asarray(u, dtype=complex)
        base = 1.0 - 1j * self.theta * self.nu * u + 0.5 * self.sigma**2 * self.nu * u * u
        # exp(-T/nu * Log(base)) is the principal power; safe for this form
        return np.exp(1j * u * self.log_center(env) - env.maturity / self.nu * np.log(base))


MODELS = {cls.kind: cls for cls in (BlackScholes, Heston, SchobelZhu, VarianceGamma)}


def make_model(kind: str, **params) -> Model:
    try:
        cls = MODELS[kind.lower()]
    except KeyError:
        raise InputError(f"unknown model {kind!r}; expected one of {sorted(MODELS)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for {kind}: {exc}") from None


def charfn(model: Model, env: MarketEnv, u):
    """``E[exp(i u ln S(T))]`` for real or complex ``u``."""
    return model.charfn(u, env)

"""Model calibration to implied volatilities by Levenberg-Marquardt."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from entrofit.errors import ConvergenceError, DomainError, EntrofitError, InputError, NumericalError
from entrofit.models.fourier import price_call_cf
from entrofit.models.params import MODELS, MarketEnv, Model, make_model

MAX_ITER = 500
VOL_TOL = 1e-10
# box in transformed coordinates: positive parameters in [1e-6, 1e3], correlations within +-0.9999
_LOG_BOX = (math.log(1e-6), math.log(1e3))
_CORR_BOX = 4.95
_FREE_BOX = 5.0
# largest LM step in transformed coordinates
MAX_STEP = 1.0


def bs_call(env: MarketEnv, K, sigma):
    """Discounted Black-Scholes call."""
    K = np.asarray(K, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    F, T = env.forward, env.maturity
    sd = sigma * math.sqrt(T)
    d1 = (np.log(F / K) + 0.5 * sd * sd) / sd
    return env.discount * (F * ndtr(d1) - K * ndtr(d1 - sd))


def bs_vega(env: MarketEnv, K, sigma):
    F, T = env.forward, env.maturity
    sd = sigma * math.sqrt(T)
    d1 = (math.log(F / K) + 0.5 * sd * sd) / sd
    return env.discount * F * math.sqrt(T) * math.exp(-0.5 * d1 * d1) / math.sqrt(2 * math.pi)


def implied_vol(price: float, env: MarketEnv, K: float, kind: str = "call") -> float:
    """Black-Scholes volatility reproducing a discounted call price to ``1e-10``."""
    if kind != "call":
        raise InputError("only calls are supported")
    if not K > 0:
        raise DomainError("strike must be positive")
    lo_b = env.discount * max(env.forward - K, 0.0)
    hi_b = env.discount * env.forward
    if not lo_b < price < hi_b:
        raise DomainError(f"price {price:.10g} outside the no-arbitrage range ({lo_b:.10g}, {hi_b:.10g}) at K={K:g}")
    lo, hi = 1e-8, 10.0
    if not float(bs_call(env, K, hi)) > price:
        raise DomainError(f"implied vol above {hi} at K={K:g}")
    # Brenner-Subrahmanyam style start, clipped into the bracket
    sig = min(max(math.sqrt(2 * math.pi / env.maturity) * price / (env.discount * env.forward), 0.05), 2.0)
    tol = VOL_TOL * max(price, 1e-300) if price < 1e-6 else VOL_TOL
    for _ in range(200):
        f = float(bs_call(env, K, sig)) - price
        if abs(f) < tol:
            return sig
        if f > 0:
            hi = sig
        else:
            lo = sig
        v = bs_vega(env, K, sig)
        nxt = sig - f / v if v > 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if hi - lo < 1e-15:
            return nxt
        sig = nxt
    raise ConvergenceError(f"implied vol did not converge at K={K:g}", residual=abs(f))


@dataclass(frozen=True)
class Quote:
    strike: float
    vol: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.strike > 0:
            raise InputError("quote strike must be positive")
        if not 0 < self.vol < 5:
            raise InputError(f"quote vol {self.vol} outside (0, 5)")
        if not self.weight > 0:
            raise InputError("quote weight must be positive")

    @classmethod
    def from_price(cls, strike: float, price: float, env: MarketEnv, weight: float = 1.0) -> "Quote":
        return cls(strike, implied_vol(price, env, strike), weight)


@dataclass(frozen=True)
class FitReport:
    model: Model
    sse: float
    iterations: int
    converged: bool
    relative_entropy: float | None = None
    model_vols: np.ndarray = field(default=None, repr=False)


def model_vols(model: Model, env: MarketEnv, strikes) -> np.ndarray:
    K = np.asarray(strikes, dtype=float)
    prices = np.atleast_1d(price_call_cf(model, env, K))
    return np.array([implied_vol(float(c), env, float(k)) for c, k in zip(prices, K)])


class _Transform:
    """Unconstrained coordinates: log for positive parameters, atanh for correlations."""

    def __init__(self, kind: str):
        cls = MODELS[kind]
        self.kind = kind
        self.names = [f for f in cls.__dataclass_fields__ if f != "lam"]
        self.positive = set(cls.positive)
        self.corr = set(cls.correlations)

    def to_z(self, params: dict) -> np.ndarray:
        z = []
        for n in self.names:
            v = float(params[n])
            if n in self.positive:
                z.append(math.log(max(v, 1e-12)))
            elif n in self.corr:
                z.append(math.atanh(min(max(v, -0.999999), 0.999999)))
            else:
                z.append(v)
        return np.array(z)

    def clamp(self, z) -> np.ndarray:
        z = np.array(z, dtype=float)
        for k, n in enumerate(self.names):
            if n in self.positive:
                z[k] = min(max(z[k], _LOG_BOX[0]), _LOG_BOX[1])
            elif n in self.corr:
                z[k] = min(max(z[k], -_CORR_BOX), _CORR_BOX)
            else:
                z[k] = min(max(z[k], -_FREE_BOX), _FREE_BOX)
        return z

    def to_params(self, z) -> dict:
        out = {}
        for n, v in zip(self.names, z):
            if n in self.positive:
                out[n] = math.exp(min(v, 50.0))
            elif n in self.corr:
                out[n] = math.tanh(v)
            else:
                out[n] = float(v)
        return out


DEFAULT_STARTS = {
    "bs": [{"sigma": 0.2}, {"sigma": 0.4}, {"sigma": 0.1}],
    "heston": [dict(kappa=1.0, theta=0.04, rho=-0.5, sigma=0.4, v0=0.04),
               dict(kappa=2.0, theta=0.06, rho=-0.7, sigma=0.6, v0=0.03),
               dict(kappa=0.5, theta=0.03, rho=-0.3, sigma=0.3, v0=0.05)],
    "sz": [dict(kappa=1.5, theta=0.2, rho=-0.7, sigma=0.3, v0=0.2),
           dict(kappa=1.0, theta=0.15, rho=-0.5, sigma=0.2, v0=0.15),
           dict(kappa=3.0, theta=0.25, rho=-0.8, sigma=0.4, v0=0.25)],
    "vg": [dict(theta=-0.2, sigma=0.15, nu=0.3),
           dict(theta=-0.1, sigma=0.2, nu=0.2),
           dict(theta=-0.3, sigma=0.12, nu=0.5)],
}


def _residuals(tr: _Transform, z, env, K, target, sw):
    try:
        model = make_model(tr.kind, **tr.to_params(z))
        r = sw * (model_vols(model, env, K) - target)
    except (EntrofitError, FloatingPointError, ValueError, ZeroDivisionError, OverflowError):
        return None
    return r if np.all(np.isfinite(r)) else None


def _lm(tr, z, env, K, target, sw, max_iter):
    r = _residuals(tr, z, env, K, target, sw)
    if r is None:
        raise InputError("model undefined at the starting parameters")
    lam, nu = 1e-3, 2.0
    sse = float(r @ r)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        J = np.empty((r.size, z.size))
        for j in range(z.size):
            h = 1e-6 * max(1.0, abs(z[j]))
            zh = z.copy()
            zh[j] += h
            rh = _residuals(tr, zh, env, K, target, sw)
            if rh is None:
                zh[j] = z[j] - h
                rh = _residuals(tr, zh, env, K, target, sw)
                if rh is None:
                    raise NumericalError("Jacobian column undefined on both sides")
                h = -h
            J[:, j] = (rh - r) / h
        g = J.T @ r
        A = J.T @ J
        if np.max(np.abs(g)) < 1e-14 or sse < 1e-24:
            converged = True
            break
        while True:
            M = A + lam * np.diag(np.maximum(np.diag(A), 1e-12))
            try:
                step = -np.linalg.solve(M, g)
                big = float(np.max(np.abs(step)))
                if big > MAX_STEP:
                    step *= MAX_STEP / big
                step = tr.clamp(z + step) - z
            except np.linalg.LinAlgError:
                step = None
            r_new = None if step is None else _residuals(tr, z + step, env, K, target, sw)
            sse_new = float(r_new @ r_new) if r_new is not None else math.inf
            if sse_new < sse:
                pred = float(-(step @ g) - 0.5 * step @ A @ step)
                rho = (sse - sse_new) / (2 * pred) if pred > 0 else 1.0
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                small = np.max(np.abs(step)) < 1e-10 * (1.0 + np.max(np.abs(z)))
                rel = (sse - sse_new) < 1e-12 * sse
                z, r, sse = z + step, r_new, sse_new
                if small or rel:
                    converged = True
                break
            lam *= nu
            nu *= 2.0
            if lam > 1e16:
                converged = True  # no descent direction left: a local minimum
                break
        if converged:
            break
    return z, sse, it, converged


def calibrate(kind: str, env: MarketEnv, quotes: list[Quote], starts: list[dict] | None = None,
              max_iter: int = MAX_ITER) -> FitReport:
    """Least-squares fit of ``sum w_i (vol_i - model_vol_i)^2`` from up to three starting points."""
    kind = kind.lower()
    if kind not in MODELS:
        raise InputError(f"unknown model {kind!r}")
    tr = _Transform(kind)
    if len(quotes) < len(tr.names):
        raise InputError(f"need at least {len(tr.names)} quotes to fit {kind}")
    K = np.array([q.strike for q in quotes])
    target = np.array([q.vol for q in quotes])
    sw = np.sqrt(np.array([q.weight for q in quotes]))
    best = None
    for start in (starts or DEFAULT_STARTS[kind])[:3]:
        try:
            z, sse, it, ok = _lm(tr, tr.clamp(tr.to_z(start)), env, K, target, sw, max_iter)
        except (InputError, NumericalError):
            continue
        if best is None or sse < best[1]:
            best = (z, sse, it, ok)
    if best is None:
        raise ConvergenceError("no starting point produced a valid model")
    z, sse, it, ok = best
    model = make_model(kind, **tr.to_params(z))
    if not ok:
        raise ConvergenceError(f"Levenberg-Marquardt hit {max_iter} iterations (sse {sse:.3g})",
                               residual=sse, iterations=it)
    return FitReport(model, sse, it, ok, None, model_vols(model, env, K))


def fit_quality(model: Model, env: MarketEnv, chain, quotes: list[Quote] | None = None) -> tuple[float, float]:
    """``(sse of vols, relative entropy of the calls-only fit against the model prior)``."""
    from entrofit.mred import minimize
    from entrofit.models.prior import as_prior

    if quotes is None:
        disc = chain.discount_factor
        quotes = [Quote.from_price(k, c * disc, env) for k, c in zip(chain.strikes, chain.calls)]
    K = np.array([q.strike for q in quotes])
    target = np.array([q.vol for q in quotes])
    w = np.array([q.weight for q in quotes])
    d = model_vols(model, env, K) - target
    sse = float(np.sum(w * d * d))
    H = minimize(as_prior(model, env), chain).value
    return sse, float(max(H, 0.0))

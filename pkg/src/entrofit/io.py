"""Option-chain CSV parsing and result serialisation.

Input layout (see ``docs/FORMAT.md``)::

    # forward=100, T=1, r=0, d=0
    # discounted=true
    strike,call[,digital]
    60,40.49,0.98
    ...

Outputs are CSV tables or a JSON bundle. Floats in tables are written with 10
significant digits. Fitted coefficients are written with 17 so that a bundle
re-loaded from disk reprices identically.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from entrofit.density import LebesguePrior, OptionChain, PriorDensity, TiltedDensity, price_call, price_digital
from entrofit.errors import ArbitrageError, EntrofitError, InputError
from entrofit.models.params import MarketEnv, make_model
from entrofit.models.prior import as_prior
from entrofit.quadrature import QuadratureSpec

SIG = 10
FORMAT_VERSION = 1

_META_ALIASES = {"forward": "forward", "f": "forward", "s0": "spot", "spot": "spot", "t": "maturity",
                 "maturity": "maturity", "r": "rate", "rate": "rate", "d": "dividend", "q": "dividend",
                 "dividend": "dividend", "discounted": "discounted"}


def fmt(x: float) -> str:
    """10 significant digits, no trailing noise."""
    x = float(x)
    if x == 0.0:
        return "0"
    return f"{x:.{SIG}g}"


def _round(x: float) -> float:
    return float(fmt(x))


def _parse_bool(s: str, line: int) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise InputError(f"line {line}: expected true/false, got {s!r}")


def _parse_float(s: str, what: str, line: int) -> float:
    try:
        v = float(s)
    except ValueError:
        raise InputError(f"line {line}: malformed {what} {s!r}") from None
    if not math.isfinite(v):
        raise InputError(f"line {line}: non-finite {what}")
    return v


@dataclass(frozen=True)
class ParsedChain:
    chain: OptionChain
    discounted: bool
    rows: tuple[int, ...]  # file line number of each strike

    @property
    def env(self) -> MarketEnv:
        c = self.chain
        return MarketEnv(c.forward * math.exp(-(c.rate - c.dividend) * c.maturity), c.rate, c.dividend, c.maturity)


def parse_chain_text(text: str | bytes) -> ParsedChain:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8-sig")
        except UnicodeDecodeError:
            raise InputError("chain file is not UTF-8") from None
    meta: dict[str, float | bool] = {}
    header = None
    rows: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            items = [p.strip() for p in line[1:].split(",") if p.strip()]
            # a metadata line starts with a known key; anything else is a free comment
            if not items or _META_ALIASES.get(items[0].split("=", 1)[0].strip().lower()) is None \
                    or "=" not in items[0]:
                continue
            for item in items:
                if "=" not in item:
                    raise InputError(f"line {lineno}: metadata item {item!r} is not key=value")
                key, val = (s.strip() for s in item.split("=", 1))
                name = _META_ALIASES.get(key.lower())
                if name is None:
                    raise InputError(f"line {lineno}: unknown metadata key {key!r}")
                meta[name] = _parse_bool(val, lineno) if name == "discounted" else _parse_float(val, key, lineno)
            continue
        cells = [c.strip() for c in next(csv.reader([line]))]
        if header is None:
            header = [c.lower() for c in cells]
            if header[:2] != ["strike", "call"] or len(header) > 3 or (len(header) == 3 and header[2] != "digital"):
                raise InputError(f"line {lineno}: header must be 'strike,call[,digital]', got {line!r}")
            continue
        if len(cells) != len(header):
            raise InputError(f"line {lineno}: expected {len(header)} fields, got {len(cells)}")
        rows.append((lineno, cells))
    if header is None:
        raise InputError("no header row 'strike,call[,digital]'")
    if not rows:
        raise InputError("chain has no rows")
    T = float(meta.get("maturity", 1.0))
    r = float(meta.get("rate", 0.0))
    d = float(meta.get("dividend", 0.0))
    if not T > 0:
        raise InputError("metadata T must be positive")
    if "forward" in meta:
        F = float(meta["forward"])
        if "spot" in meta:
            implied = float(meta["spot"]) * math.exp((r - d) * T)
            if abs(implied - F) > 1e-9 * F:
                raise InputError(f"forward={F} disagrees with S0*exp((r-d)T)={implied:.10g}")
    elif "spot" in meta:
        F = float(meta["spot"]) * math.exp((r - d) * T)
    else:
        raise InputError("metadata must give forward= or S0=")
    disc = bool(meta.get("discounted", False))
    scale = math.exp(r * T) if disc else 1.0
    lines = [ln for ln, _ in rows]
    K = np.array([_parse_float(c[0], "strike", ln) for ln, c in rows])
    C = np.array([_parse_float(c[1], "call", ln) for ln, c in rows]) * scale
    D = None
    if len(header) == 3:
        D = np.array([_parse_float(c[2], "digital", ln) for ln, c in rows]) * scale
    for i in range(1, K.size):
        if K[i] == K[i - 1]:
            raise InputError(f"line {lines[i]}: duplicate strike {K[i]:g}")
        if K[i] < K[i - 1]:
            raise InputError(f"line {lines[i]}: strikes not increasing ({K[i]:g} after {K[i - 1]:g})")
    try:
        chain = OptionChain(F, K, C, D, T, r, d)
    except ArbitrageError as exc:
        row = lines[exc.index - 1] if exc.index and 1 <= exc.index <= len(lines) else None
        where = f"line {row}: " if row is not None else ""
        raise ArbitrageError(f"{where}{exc}", index=exc.index, row=row) from None
    return ParsedChain(chain, disc, tuple(lines))


def parse_chain(text: str | bytes) -> OptionChain:
    """Validated chain with undiscounted prices."""
    return parse_chain_text(text).chain


def read_chain(path) -> ParsedChain:
    try:
        with open(path, "rb") as fh:
            return parse_chain_text(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def chain_to_csv(chain: OptionChain, discounted: bool = False, digits: int = 17) -> str:
    df = chain.discount_factor if discounted else 1.0
    out = [f"# forward={chain.forward!r}, T={chain.maturity!r}, r={chain.rate!r}, d={chain.dividend!r}"]
    if discounted:
        out.append("# discounted=true")
    has_d = chain.digitals is not None
    out.append("strike,call,digital" if has_d else "strike,call")
    for i in range(chain.n):
        cells = [f"{chain.strikes[i]:.{digits}g}", f"{chain.calls[i] * df:.{digits}g}"]
        if has_d:
            cells.append(f"{chain.digitals[i] * df:.{digits}g}")
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


# --- priors -----------------------------------------------------------------

def parse_prior(spec: str) -> tuple[str, dict]:
    """``"lebesgue"`` or ``"kind:name=value,..."``, e.g. ``"bs:sigma=0.3"``."""
    spec = spec.strip()
    if spec.lower() in ("lebesgue", "med", "none"):
        return "lebesgue", {}
    kind, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        if "=" not in item:
            raise InputError(f"prior parameter {item!r} is not name=value")
        k, v = (s.strip() for s in item.split("=", 1))
        try:
            params[k] = float(v)
        except ValueError:
            raise InputError(f"prior parameter {k}={v!r} is not a number") from None
    make_model(kind, **params)  # validates completeness
    return kind.lower(), params


def prior_spec_string(kind: str, params: dict) -> str:
    if kind == "lebesgue":
        return "lebesgue"
    return kind + ":" + ",".join(f"{k}={params[k]!r}" for k in params)


def build_prior(kind: str, params: dict, env: MarketEnv) -> PriorDensity:
    if kind == "lebesgue":
        return LebesguePrior()
    return as_prior(make_model(kind, **params), env)


# --- outputs ----------------------------------------------------------------

@dataclass(frozen=True)
class ResultBundle:
    command: str
    prior: str
    env: dict
    strikes: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha: np.ndarray = field(default_factory=lambda: np.empty(0))
    beta: np.ndarray = field(default_factory=lambda: np.empty(0))
    prices: list[tuple[float, float, float]] = field(default_factory=list)
    discounted: bool = False
    grid: list[tuple[float, float]] | None = None
    varswap: dict | None = None
    calibration: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    log_alpha: np.ndarray | None = None

    def __post_init__(self):
        if self.log_alpha is None:
            with np.errstate(divide="ignore"):
                object.__setattr__(self, "log_alpha", np.log(np.asarray(self.alpha, dtype=float)))

    def coefficient_rows(self):
        e = np.concatenate([[0.0], self.strikes, [np.inf]])
        return [(i, e[i], e[i + 1], self.alpha[i], self.log_alpha[i], self.beta[i]) for i in range(self.alpha.size)]

    def to_json(self) -> str:
        payload = {
            "format": FORMAT_VERSION,
            "command": self.command,
            "prior": self.prior,
            "env": {k: _num(v) for k, v in self.env.items()},
            "discounted": self.discounted,
            "diagnostics": {k: _num(v) for k, v in self.diagnostics.items()},
        }
        if self.alpha.size:
            payload["coefficients"] = [
                {"bucket": i, "lower": repr(float(lo)), "upper": repr(float(hi)),
                 "alpha": repr(float(a)), "log_alpha": repr(float(la)), "beta": repr(float(b))}
                for i, lo, hi, a, la, b in self.coefficient_rows()
            ]
        if self.prices:
            payload["prices"] = [{"strike": _num(k), "call": _num(c), "digital": _num(d)} for k, c, d in self.prices]
        if self.varswap is not None:
            payload["varswap"] = {k: _num(v) for k, v in self.varswap.items()}
        if self.calibration is not None:
            payload["calibration"] = {k: (_num(v) if not isinstance(v, dict) else {a: _num(b) for a, b in v.items()})
                                      for k, v in self.calibration.items()}
        if self.grid is not None:
            payload["grid"] = [[_num(s), _num(q)] for s, q in self.grid]
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """The main table of the command as CSV."""
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.grid is not None:
            w.writerow(["S", "q"])
            w.writerows([fmt(s), fmt(q)] for s, q in self.grid)
        elif self.varswap is not None:
            w.writerow(["quantity", "value"])
            w.writerows([k, fmt(v)] for k, v in sorted(self.varswap.items()))
        elif self.calibration is not None:
            w.writerow(["quantity", "value"])
            for k, v in sorted(self.calibration.items()):
                if isinstance(v, dict):
                    w.writerows([f"{k}.{a}", fmt(b)] for a, b in sorted(v.items()))
                elif isinstance(v, str):
                    w.writerow([k, v])
                else:
                    w.writerow([k, fmt(v)])
        elif self.prices:
            w.writerow(["strike", "call", "digital"])
            w.writerows([fmt(k), fmt(c), fmt(d)] for k, c, d in self.prices)
        else:
            w.writerows(self._coefficient_lines())
        return buf.getvalue()

    def coefficients_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerows(self._coefficient_lines())
        return buf.getvalue()

    def _coefficient_lines(self):
        yield ["bucket", "lower", "upper", "alpha", "log_alpha", "beta"]
        for i, lo, hi, a, la, b in self.coefficient_rows():
            yield [str(i), repr(float(lo)), repr(float(hi)), repr(float(a)), repr(float(la)), repr(float(b))]


def _num(v):
    if isinstance(v, (bool, str)) or v is None:
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return _round(v)


def load_bundle(text: str) -> tuple[TiltedDensity, dict, bool]:
    """Density, env dict and discounting flag from a JSON bundle."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"bundle is not valid JSON: {exc}") from None
    if data.get("format") != FORMAT_VERSION or "coefficients" not in data:
        raise InputError("bundle has no fitted coefficients (or an unknown format)")
    env = data["env"]
    kind, params = parse_prior(data["prior"])
    menv = MarketEnv(float(env["spot"]), float(env["rate"]), float(env["dividend"]), float(env["maturity"]))
    coef = sorted(data["coefficients"], key=lambda r: r["bucket"])
    strikes = np.array([float(r["lower"]) for r in coef[1:]])
    beta = np.array([float(r["beta"]) for r in coef])
    if all("log_alpha" in r for r in coef):
        la = np.array([float(r["log_alpha"]) for r in coef])
    else:
        la = np.log([float(r["alpha"]) for r in coef])
    q = TiltedDensity(build_prior(kind, params, menv), strikes, None, beta, log_coef=la)
    return q, env, bool(data.get("discounted", False))


def price_table(q: TiltedDensity, strikes, discount: float = 1.0, spec: QuadratureSpec | None = None):
    spec = spec or QuadratureSpec.from_env()
    return [(float(k), discount * price_call(q, float(k), spec), discount * price_digital(q, float(k), spec))
            for k in strikes]


def upper_quantile(q: TiltedDensity, mass: float = 1e-8, spec: QuadratureSpec | None = None) -> float:
    """A point beyond which ``q`` carries less than ``mass``."""
    spec = spec or QuadratureSpec.from_env()
    lo = float(q.strikes[-1])
    step = max(lo, 1.0) * 0.25
    hi = lo + step
    while q.integrate(lambda S: np.ones_like(S), lo=hi, spec=spec) > mass:
        lo, step = hi, 2 * step
        hi = lo + step
        if hi > q.prior.support_hint:
            return float(q.prior.support_hint)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if q.integrate(lambda S: np.ones_like(S), lo=mid, spec=spec) > mass:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6 * hi:
            break
    return hi


def _grid_nodes(q: TiltedDensity, n: int, upper: float) -> np.ndarray:
    # node density ~ |q''|^(1/3) equidistributes the trapezoid error; the floor keeps the tails covered
    fine = np.linspace(0.0, upper, 20001)
    h = fine[1] - fine[0]
    v = q.pdf(fine)
    d2 = np.abs(np.gradient(np.gradient(v, h), h))
    w = np.cbrt(d2)
    w = w + 0.01 * w.mean() + 1e-300
    W = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * h)])
    return np.interp(np.linspace(0.0, W[-1], n), W, fine)


def density_grid(q: TiltedDensity, n: int = 256, upper: float | None = None,
                 even: bool = False) -> list[tuple[float, float]]:
    """``(S, q(S))`` at ``n`` points of ``[0, upper]``.

    Points are concentrated where the density bends, so the trapezoid rule on
    the output integrates to one closely; ``even=True`` gives a uniform grid.
    Each strike inside the range is added twice, with the left and the right
    limit of the density, so the trapezoid rule and plots see any jumps.
    """
    if n < 2:
        raise InputError("grid needs at least 2 points")
    upper = upper_quantile(q) if upper is None else float(upper)
    if not upper > 0:
        raise InputError("grid upper limit must be positive")
    S = np.linspace(0.0, upper, n) if even else _grid_nodes(q, n, upper)
    rows = [(float(s), float(v)) for s, v in zip(S, q.pdf(S))]
    for i, k in enumerate(q.strikes):
        if not 0 < k < upper:
            continue
        left = float(q.tilt(k, bucket=i) * q.prior.pdf(k))
        right = float(q.pdf(k))
        rows = [r for r in rows if r[0] != k]
        rows += [(float(k), left), (float(k), right)]
    # stable sort keeps left before right at each strike
    rows.sort(key=lambda r: r[0])
    return rows


def trapezoid(grid) -> float:
    S = np.array([r[0] for r in grid])
    v = np.array([r[1] for r in grid])
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(S)))


def atomic_write(path, text: str):
    """Write via a temporary file so a failure never leaves a partial output."""
    import os
    import tempfile

    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".entrofit-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


__all__ = ["ParsedChain", "ResultBundle", "EntrofitError", "parse_chain", "parse_chain_text", "read_chain",
           "chain_to_csv", "parse_prior", "prior_spec_string", "build_prior", "load_bundle", "price_table",
           "density_grid", "trapezoid", "atomic_write", "fmt"]

"""Command-line front end.

Each command reads one chain CSV and writes a JSON bundle (full diagnostics)
or a CSV table. Failures exit with the code of the raised error class and
never leave a partial output file.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import math
import os
import sys
from dataclasses import dataclass, field

from entrofit import __version__
from entrofit.buckets import fit_with_digitals
from entrofit.calibration import Quote, calibrate, fit_quality
from entrofit.density import entropy, relative_entropy
from entrofit.errors import EntrofitError, InputError
from entrofit.io import (ResultBundle, atomic_write, build_prior, density_grid, load_bundle, parse_prior,
                         price_table, prior_spec_string, read_chain)
from entrofit.models.params import MarketEnv
from entrofit.mred import minimize
from entrofit.quadrature import ENV_TOL, QuadratureSpec
from entrofit.varswap import DriftSpec, fair_rate

COMMANDS = ("fit-med", "fit-mred", "fit-digitals", "price", "varswap", "calibrate", "density")


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str | None = None
    prior: str = "lebesgue"
    subset: tuple[float, ...] | None = None
    strikes: tuple[float, ...] = ()
    bundle: str | None = None
    model: str | None = None
    grid: int = 256
    grid_max: float | None = None
    drift: float | None = None
    quad_tol: float | None = None
    output: str | None = None
    fmt: str = "json"
    env_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        if self.fmt not in ("json", "csv"):
            raise InputError("format must be json or csv")
        if self.command == "price" and self.input is None and self.bundle is None:
            raise InputError("price needs a chain to fit or --bundle")
        if self.command != "price" and self.input is None:
            raise InputError(f"{self.command} needs an input chain")
        for p in (self.input, self.bundle):
            if p is not None and not os.path.isfile(p):
                raise InputError(f"no such file: {p}")
        if self.command == "calibrate" and not self.model:
            raise InputError("calibrate needs --model")
        if self.command == "fit-mred" and self.prior == "lebesgue":
            raise InputError("fit-mred needs --prior kind:params (use fit-med for the Lebesgue case)")
        parse_prior(self.prior)

    def quad_spec(self) -> QuadratureSpec:
        if self.quad_tol is not None:
            return QuadratureSpec(rtol=self.quad_tol)
        return QuadratureSpec.from_env()


def _env_dict(chain, env: MarketEnv) -> dict:
    return {"forward": chain.forward, "spot": env.spot, "rate": env.rate, "dividend": env.dividend,
            "maturity": env.maturity}


def _fit(cfg: RunConfig):
    parsed = read_chain(cfg.input)
    chain = parsed.chain
    if cfg.subset:
        chain = chain.subset(cfg.subset)
    env = parsed.env
    kind, params = parse_prior(cfg.prior)
    prior = build_prior(kind, params, env)
    diag = {}
    if cfg.command == "fit-digitals":
        if chain.digitals is None:
            raise InputError("fit-digitals needs a 'digital' column")
        q = fit_with_digitals(prior, chain)
    else:
        res = minimize(prior, chain.without_digitals())
        q = res.density
        diag.update(iterations=res.iterations, grad_norm=res.grad_norm)
    spec = cfg.quad_spec()
    if prior.is_lebesgue:
        diag["entropy"] = entropy(q, spec)
    else:
        diag["relative_entropy"] = relative_entropy(q, spec=spec)
    return parsed, chain, env, kind, params, q, diag


def run(cfg: RunConfig) -> ResultBundle:
    spec = cfg.quad_spec()
    if cfg.command == "price" and cfg.bundle is not None:
        with open(cfg.bundle) as fh:
            q, env_d, disc = load_bundle(fh.read())
        df = math.exp(-float(env_d["rate"]) * float(env_d["maturity"])) if disc else 1.0
        strikes = cfg.strikes or tuple(q.strikes)
        return ResultBundle("price", prior_spec_string(*parse_prior(_prior_of(cfg.bundle))), env_d,
                            q.strikes, q.alpha, q.beta, price_table(q, strikes, df, spec), disc,
                            log_alpha=q.log_alpha)

    if cfg.command == "calibrate":
        parsed = read_chain(cfg.input)
        chain = parsed.chain.subset(cfg.subset) if cfg.subset else parsed.chain
        env = parsed.env
        quotes = [Quote.from_price(k, c * env.discount, env) for k, c in zip(chain.strikes, chain.calls)]
        rep = calibrate(cfg.model, env, quotes)
        sse, H = fit_quality(rep.model, env, chain.without_digitals(), quotes)
        params = {k: v for k, v in rep.model.as_dict().items() if k != "lam"}
        cal = {"model": rep.model.kind, "params": params, "sse": sse, "relative_entropy": H,
               "iterations": rep.iterations, "converged": rep.converged}
        return ResultBundle("calibrate", prior_spec_string(rep.model.kind, params), _env_dict(chain, env),
                            calibration=cal, discounted=parsed.discounted,
                            diagnostics={"iterations": rep.iterations})

    parsed, chain, env, kind, params, q, diag = _fit(cfg)
    df = chain.discount_factor if parsed.discounted else 1.0
    strikes = sorted(set(map(float, chain.strikes)) | set(cfg.strikes))
    bundle = dict(command=cfg.command, prior=prior_spec_string(kind, params), env=_env_dict(chain, env),
                  strikes=q.strikes, alpha=q.alpha, beta=q.beta, log_alpha=q.log_alpha,
                  discounted=parsed.discounted, diagnostics=diag)
    if cfg.command == "varswap":
        drift = DriftSpec(cfg.drift) if cfg.drift is not None else DriftSpec.risk_neutral(env.rate, env.dividend)
        vs = fair_rate(q, drift, env.spot, env.maturity)
        bundle["varswap"] = {"variance": vs.variance, "vol": vs.vol, "log_contract": vs.log_contract,
                             "entropy": vs.entropy, "log_entropy": vs.log_entropy,
                             "variance_entropy_route": vs.variance_entropy_route}
    elif cfg.command == "density":
        bundle["grid"] = density_grid(q, cfg.grid, cfg.grid_max)
    bundle["prices"] = price_table(q, strikes, df, spec)
    return ResultBundle(**bundle)


def _prior_of(path: str) -> str:
    import json

    with open(path) as fh:
        return json.load(fh)["prior"]


def _floats(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in s.replace(" ", "").split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="entrofit", description="Entropy-based risk-neutral densities from option chains.")
    ap.add_argument("--version", action="version", version=f"entrofit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("input", help="chain CSV")
        p.add_argument("--subset", type=_floats, help="use only these strikes, e.g. 60,100,140")
        p.add_argument("--quad-tol", type=float, help=f"quadrature rtol (overrides ${ENV_TOL})")
        p.add_argument("-o", "--output", help="output file (default stdout)")
        p.add_argument("--format", dest="fmt", choices=("json", "csv"), default="json")

    p = sub.add_parser("fit-med", help="maximum-entropy fit to calls")
    common(p)
    p = sub.add_parser("fit-mred", help="minimum relative-entropy fit to calls against a model prior")
    common(p)
    p.add_argument("--prior", required=True, help="e.g. bs:sigma=0.2 or heston:kappa=1,theta=0.04,...")
    p = sub.add_parser("fit-digitals", help="fit to calls and digitals")
    common(p)
    p.add_argument("--prior", default="lebesgue")
    p = sub.add_parser("price", help="call and digital prices from a fit")
    p.add_argument("input", nargs="?", help="chain CSV to fit (omit with --bundle)")
    common(p, needs_input=False)
    p.add_argument("--bundle", help="JSON bundle from a previous fit")
    p.add_argument("--prior", default="lebesgue")
    p.add_argument("--strikes", type=_floats, default=(), help="strikes to price")
    p = sub.add_parser("varswap", help="fair variance swap rate")
    common(p)
    p.add_argument("--prior", default="lebesgue")
    p.add_argument("--drift", type=float, help="drift term; default 2(r - d)")
    p = sub.add_parser("calibrate", help="Levenberg-Marquardt fit of a model to implied vols")
    common(p)
    p.add_argument("--model", required=True, choices=("bs", "heston", "sz", "vg"))
    p = sub.add_parser("density", help="density on a grid for plotting")
    common(p)
    p.add_argument("--prior", default="lebesgue")
    p.add_argument("--grid", type=int, default=256, help="number of grid points")
    p.add_argument("--grid-max", type=float, help="upper end of the grid")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=ns.command, input=ns.input, prior=getattr(ns, "prior", "lebesgue"), subset=ns.subset,
        strikes=getattr(ns, "strikes", ()) or (), bundle=getattr(ns, "bundle", None),
        model=getattr(ns, "model", None), grid=getattr(ns, "grid", 256), grid_max=getattr(ns, "grid_max", None),
        drift=getattr(ns, "drift", None), quad_tol=ns.quad_tol, output=ns.output, fmt=ns.fmt,
    )


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        bundle = run(cfg)
        text = bundle.to_json() if cfg.fmt == "json" else bundle.to_csv()
        if cfg.output:
            atomic_write(cfg.output, text)
            # timestamps live in a sidecar so the payload stays byte-identical across runs
            stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
            atomic_write(cfg.output + ".log", f"{stamp} entrofit {__version__} {' '.join(sys.argv[1:] if argv is None else argv)}\n")
        else:
            sys.stdout.write(text)
    except EntrofitError as exc:
        print(f"entrofit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface: ``socchain <subcommand> ...``."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import harness
from .charfn import phi_n
from .density import (QuadratureControl, TiltPlan, conditional_density_shifted,
                      default_tilt, tail_parts)
from .errors import ConvergenceError, DomainError, RangeError, UnknownRegime
from .limit_laws import limit_for_regime
from .samplers import mcmc_run, sample_magnetization
from .spectrum import compute_spectrum, validate_params


def _grid(text: str) -> np.ndarray:
    try:
        a, b, k = text.split(":")
        return np.linspace(float(a), float(b), int(k))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like a:b:k, got {text!r}")


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(v)
    return format(float(v), ".17g")


def _write_csv(path, header, columns):
    lines = [",".join(header)]
    lines += [",".join(_cell(v) for v in row) for row in zip(*columns)]
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def infer_regime(n: int, r: int) -> str:
    """Regime tag from ``a = log r / log n`` (used when none is given)."""
    a = math.log(r) / math.log(n) if r > 1 else 0.0
    if a < 0.5:
        return "finite"
    if a < 0.7:
        return "intermediate"
    if a <= 0.8:
        return "threshold"
    return "long"


def cmd_spectrum(args):
    spec = compute_spectrum(validate_params(args.n, args.r), method=args.method)
    j = np.arange(1, args.n + 1)
    beta = np.append(spec.betas, 0.0)
    _write_csv(args.out, ["j", "alpha", "beta"], [j, spec.alphas, beta])


def cmd_charfn(args):
    spec = compute_spectrum(validate_params(args.n, args.r))
    u = np.linspace(args.u_min, args.u_max, args.points)
    phi = phi_n(spec, u)
    cf = np.exp(phi)
    _write_csv(args.out, ["u", "re_phi", "im_phi", "re_cf", "im_cf"],
               [u, phi.real, phi.imag, cf.real, cf.imag])


def cmd_density(args):
    p = validate_params(args.n, args.r)
    spec = compute_spectrum(p)
    plan = default_tilt(p, args.regime)
    q = QuadratureControl(abs_tol=args.abs_tol)
    x = args.grid
    shifted = conditional_density_shifted(spec, plan, x, q)
    log_pref, scaled_tail = tail_parts(spec, plan, q)
    # sub-probability density of (n - A_n)/w_n; may underflow for tiny P(A_n < n)
    with np.errstate(divide="ignore"):
        dens = np.exp(np.log(shifted) + log_pref)
    _write_csv(args.out, ["x", "density", "normalized"], [x, dens, shifted / scaled_tail])


def cmd_limits(args):
    if args.regime == "threshold" and args.lam is None:
        raise SystemExit("limits: threshold regime needs --lambda")
    if args.regime == "finite" and args.r is None:
        raise SystemExit("limits: finite regime needs --r")
    law = limit_for_regime(args.regime, lam=args.lam, r=args.r)
    _write_csv(args.out, ["x", "pdf"], [args.grid, law.pdf(args.grid)])


def cmd_sample(args):
    p = validate_params(args.n, args.r)
    rng = np.random.default_rng(args.seed)
    if args.method == "mcmc":
        tr = mcmc_run(p, args.samples * args.thin, 1.0, rng, burn_in=args.burn_in, thin=args.thin)
        _write_csv(args.out, ["value", "weight"], [tr.S, np.ones_like(tr.S)])
        return
    spec = compute_spectrum(p)
    if args.method == "exact":
        plan = TiltPlan(0.0)
    else:
        plan = default_tilt(p, args.regime or infer_regime(p.n, p.r))
    ws = sample_magnetization(spec, plan, rng, args.samples)
    _write_csv(args.out, ["value", "weight"], [ws.values, ws.weights])


def cmd_verify(args):
    overrides = {}
    if args.samples is not None:
        overrides["samples"] = args.samples
    cfg = harness.load_config(args.config, overrides)
    rep = harness.verify(args.suite, args.seed, cfg, args.out, workers=args.workers)
    failed = [r for r in rep.rows if r.verdict != "pass"]
    print(f"{len(rep.rows) - len(failed)}/{len(rep.rows)} checks passed")
    for r in failed:
        print(f"  {r.verdict}: {r.regime} n={r.n} r={r.r} stat={r.ks}")
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="socchain",
                                 description="Gaussian spin chain with self-adjusted temperature")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", help="write alpha_j, beta_j as CSV")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--method", choices=["auto", "direct", "fast"], default="auto")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("charfn", help="log-CF of n - A_n on a u grid")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--u-min", type=float, required=True)
    s.add_argument("--u-max", type=float, required=True)
    s.add_argument("--points", type=int, required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_charfn)

    s = sub.add_parser("density", help="density of (n - A_n)/w_n on {A_n < n}")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--regime", required=True,
                   choices=["long", "threshold", "finite", "intermediate"])
    s.add_argument("--grid", type=_grid, required=True, help="a:b:k")
    s.add_argument("--abs-tol", type=float, default=1e-10)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("limits", help="limit-law density on a grid")
    s.add_argument("--regime", required=True,
                   choices=["long", "threshold", "finite", "intermediate"])
    g = s.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--r", type=int)
    s.add_argument("--grid", type=_grid, required=True, help="a:b:k")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_limits)

    s = sub.add_parser("sample", help="draw magnetization samples")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--method", choices=["exact", "tilted", "mcmc"], required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--regime", choices=["long", "threshold", "finite", "intermediate"],
                   help="tilt for --method tilted (inferred from n, r if omitted)")
    s.add_argument("--thin", type=int, default=10, help="mcmc: sweeps between records")
    s.add_argument("--burn-in", type=int, default=100_000, help="mcmc: burn-in sweeps")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("verify", help="run a verification suite")
    s.add_argument("--suite", choices=["algebra", "cf", "regimes", "all"], default="all")
    s.add_argument("--config", help="key=value file")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--samples", type=int)
    s.add_argument("--workers", type=int, help="default: $SOCCHAIN_WORKERS or 1")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except (RangeError, UnknownRegime, DomainError, ConvergenceError, ValueError) as exc:
        print(f"socchain {args.command}: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point ``orbitlab``."""

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, OrbitLabError
from .expansion import build_bundle, residual
from .harness import (CLAIMS, ClaimContext, ClaimReport, RunConfig, fit_slope, parse_class,
                      parse_grid, run_claims, write_manifest)
from .loops import energy, find_geodesic, manifold_loop, write_loop_csv
from .orbit import adiabatic_sweep, attractive_correct, correct_orbit
from .periodic_ode import estimate_audit, write_audit_csv
from .reduction import reduction_sweep, write_reduction_csv

log = logging.getLogger("orbitlab")


def _params(args):
    out = {}
    for key in ("b0", "cubic", "R", "r"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if getattr(args, "b_grad", None):
        out["b_grad"] = [float(v) for v in args.b_grad.split(",")]
    if getattr(args, "potential", None):
        out["potential"] = args.potential
    return out


def _config(args, **extra):
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
    else:
        fields = dict(scenario=args.scenario, params=_params(args), N=args.N,
                      out=args.out, seed=args.seed)
        if getattr(args, "cls", None) is not None:
            fields["cls"] = args.cls
        fields.update({k: v for k, v in extra.items() if v is not None})
        cfg = RunConfig(**fields)
    return cfg


def _geodesic(cfg, scenario):
    seed = scenario.seed_loop(cfg.cls, cfg.N)
    if cfg.scenario == "sphere":
        return manifold_loop(scenario, seed)
    return find_geodesic(scenario, seed, cfg.cls).loop


def cmd_geodesic(args):
    cfg = _config(args)
    sc = cfg.make_scenario()
    x0 = _geodesic(cfg, sc)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_loop_csv(out / "geodesic.csv", x0)
    print(f"L0 = {energy(x0):.12g}")
    return cfg, ["geodesic.csv"], []


def cmd_expand(args):
    cfg = _config(args, eps=args.eps, quotient_symmetries=args.quotient_symmetries)
    sc = cfg.make_scenario()
    bundle = build_bundle(sc, _geodesic(cfg, sc), cfg.quotient_symmetries)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle.write_csv(out / "bundle.csv")
    eps = cfg.eps_grid()
    files = ["bundle.csv"]
    if eps:
        with open(out / "residuals.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "dual", "l2", "sup"])
            for e in eps:
                r = residual(sc, bundle.assemble(e), e)
                w.writerow([repr(e), repr(r.dual), repr(r.l2), repr(r.sup)])
        files.append("residuals.csv")
    return cfg, files, []


def cmd_solve(args):
    cfg = _config(args, eps=args.eps, quotient_symmetries=args.quotient_symmetries)
    sc = cfg.make_scenario()
    bundle = build_bundle(sc, _geodesic(cfg, sc), cfg.quotient_symmetries)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for e in cfg.eps_grid() or [1e-3]:
        res = correct_orbit(sc, bundle.assemble(e), e, bundle)
        name = f"orbit_eps_{e:.3e}.csv"
        write_loop_csv(out / name, res.solution)
        files.append(name)
        print(f"eps = {e:.3e}: {res.newton_iters} Newton steps, |y| = {res.correction_sup:.3e}")
    return cfg, files, []


def cmd_sweep(args):
    cfg = _config(args, T=args.T, eps=args.eps, quotient_symmetries=args.quotient_symmetries)
    sc = cfg.make_scenario()
    bundle = build_bundle(sc, _geodesic(cfg, sc), cfg.quotient_symmetries)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if sc.sign == "attractive":
        ks = [int(k) for k in (args.k or cfg.k_range or parse_grid("10:100:lin8"))]
        rows = []
        for k in ks:
            r = attractive_correct(sc, bundle, k)
            rows.append((r.eps ** -2, r.eps, float(np.max(np.abs(r.solution.samples - bundle.x0.samples)))))
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "eps", "dist_C0"])
            w.writerows([[repr(v) for v in row] for row in rows])
        pairs = [(T, d) for T, _, d in rows]
    else:
        rep = adiabatic_sweep(sc, bundle, eps_list=cfg.eps_grid() or parse_grid("1e-1:1e-3:logx8"))
        rep.write_csv(out / "sweep.csv")
        pairs = list(zip(rep.column("T"), rep.column("dist_C0")))
    fit = fit_slope(pairs)
    print(f"C0 slope vs T: {fit.slope:.4f} (r2 = {fit.r2:.5f})")
    ok = abs(fit.slope + 0.5) <= 0.1
    status = "inconclusive" if not fit.conclusive else ("pass" if ok else "fail")
    claim = ClaimReport("adiabatic-limit-rate", CLAIMS["adiabatic-limit-rate"][0],
                        fit.slope, "slope in [-0.6, -0.4]", status)
    return cfg, ["sweep.csv"], [claim]


def cmd_reduce(args):
    cfg = _config(args, eps=args.eps)
    sc = cfg.make_scenario()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = reduction_sweep(sc, cfg.cls, cfg.eps_grid() or [1e-2, 1e-3, 1e-4], N=cfg.N,
                           loop_dir=out)
    write_reduction_csv(out / "reduction.csv", rows)
    for r in rows:
        print(f"eps = {r.eps:.3e}: L_eps = {r.value:.10g}, |L_eps - L0(x0)| = {r.error:.3e}")
    files = ["reduction.csv"] + sorted(p.name for p in out.glob("minimizer_eps_*.csv"))
    return cfg, files, []


def cmd_green_audit(args):
    lams = parse_grid(args.lam)
    rows = estimate_audit(args.mode, lams, trials=args.trials, N=args.N, rng=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_audit_csv(out / "audit.csv", rows)
    for r in rows:
        print(f"lambda0 = {r.lam0:.6g}: observed {r.observed:.6g} <= bound {r.bound:.6g}")
    cfg = {"mode": args.mode, "lambda": lams, "trials": args.trials, "N": args.N, "seed": args.seed}
    return cfg, ["audit.csv"], []


def cmd_claims(args):
    ids = args.only.split(",") if args.only else None
    for i in ids or []:
        if i not in CLAIMS:
            raise ConfigError(f"unknown claim {i!r}; choose from {sorted(CLAIMS)}")
    reports = []
    ctx = ClaimContext(N=args.N, seed=args.seed)
    for r in run_claims(ids, ctx):
        print(r.line(), flush=True)
        reports.append(r)
    return {"N": args.N, "seed": args.seed, "claims": ids or sorted(CLAIMS)}, [], reports


def _common(p, scenario=True):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--N", type=int, default=256, help="samples per loop")
    p.add_argument("--seed", type=int, default=0)
    if scenario:
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--scenario", default="circle", choices=["circle", "sphere", "torus"])
        p.add_argument("--b0", type=float)
        p.add_argument("--b-grad", dest="b_grad", help="comma separated gradient of b")
        p.add_argument("--cubic", type=float)
        p.add_argument("--potential", choices=["quadratic", "quartic"])
        p.add_argument("--R", type=float)
        p.add_argument("--r", type=float)
        p.add_argument("--class", dest="cls", type=parse_class, help="winding data, e.g. 1,0")


def build_parser():
    parser = argparse.ArgumentParser(prog="orbitlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geodesic", help="closed geodesic in a class")
    _common(p)
    p.set_defaults(func=cmd_geodesic)

    p = sub.add_parser("expand", help="second-order expansion along the geodesic")
    _common(p)
    p.add_argument("--eps", help="eps grid for residual reports")
    p.add_argument("--quotient-symmetries", action="store_true")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("solve", help="Newton-corrected orbits")
    _common(p)
    p.add_argument("--eps", help="eps grid")
    p.add_argument("--quotient-symmetries", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="adiabatic-limit sweep")
    _common(p)
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--T", help="period grid, e.g. 1e2:1e6:logx8")
    grid.add_argument("--eps", help="eps grid")
    p.add_argument("--k", type=parse_grid, help="attractive grid indices")
    p.add_argument("--quotient-symmetries", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reduce", help="minimize the reduced functional")
    _common(p)
    p.add_argument("--eps", help="eps grid")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("green-audit", help="periodic Green kernel bounds")
    _common(p, scenario=False)
    p.add_argument("--mode", choices=["repulsive", "attractive"], required=True)
    p.add_argument("--lambda", dest="lam", required=True, help="lambda0 grid (2 pi time)")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_green_audit, N=1024)

    p = sub.add_parser("claims", help="run the built-in claims")
    _common(p, scenario=False)
    p.add_argument("--only", help="comma separated claim ids")
    p.set_defaults(func=cmd_claims)
    return parser


_VALUE_FLAGS = ("--lambda", "--eps", "--T", "--k", "--b0", "--b-grad", "--cubic")


def _attach_negative_values(argv):
    """Rewrite ``--lambda -1:-1e4:logx8`` as ``--lambda=-1:-1e4:logx8``;
    argparse would otherwise read the value as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUE_FLAGS:
            nxt = next(it, None)
            if nxt is not None and nxt[:1] == "-" and nxt[1:2].isdigit():
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_attach_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg, files, reports = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OrbitLabError as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if hasattr(cfg, "__dataclass_fields__"):
        cfg = asdict(cfg)
    write_manifest(cfg.get("out", args.out), args.command, reports, files, cfg)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: solve, simulate, check-dpp, verify."""
import argparse
import csv
import json
import sys
import time

import numpy as np

from . import io
from .exceptions import QVIError
from .mc import (GridPolicy, allowance, calibrate_allowance, check_dpp, parse_stop_rule,
                 simulate_many, summarize)
from .problem import to_elliptic
from .solver import solve
from .supersolution import build_strict_supersolution
from .verify import run_suite


def _parse_grid(text, problem):
    parts = [int(p) for p in text.split(",") if p.strip()]
    d = problem.dim_x
    if problem.parabolic:
        if len(parts) not in (d, d + 1):
            raise SystemExit(f"--grid needs {d} node counts plus optionally N_t")
        return tuple(parts[:d]), (parts[d] if len(parts) > d else None)
    if len(parts) != d:
        raise SystemExit(f"--grid needs {d} node counts")
    return tuple(parts), None


def _parse_kv(text):
    out = {}
    for item in text.split(","):
        k, _, v = item.partition("=")
        out[k.strip()] = float(v)
    return out


def _parse_points(items, d):
    pts = []
    for it in items:
        vals = [float(v) for v in it.split(",")]
        if len(vals) != d:
            raise SystemExit(f"point {it!r} needs {d} coordinates")
        pts.append(vals)
    return np.array(pts)


def cmd_solve(args):
    cfg = io.load_config(args.config)
    problem, levy = cfg.problem, cfg.levy
    raw = dict(cfg.raw)
    if args.elliptic and problem.parabolic:
        if "preset" in raw:
            raise SystemExit("--elliptic needs an explicit (non-preset) config")
        problem = to_elliptic(problem, rho=args.rho)
        raw["horizon"] = {"rho": problem.rho}
        raw.get("grid", {}).pop("steps", None)
    nodes, steps = cfg.grid_nodes, cfg.grid_steps
    if args.grid:
        nodes, steps = _parse_grid(args.grid, problem)
        raw.setdefault("grid", {})["nodes"] = list(nodes)
        if steps is not None:
            raw["grid"]["steps"] = steps
    opts = cfg.solver
    if args.tol is not None:
        opts.tol = args.tol
        raw.setdefault("solver", {})["tol"] = args.tol
    from .grid import Grid
    grid = Grid.build(problem, nodes, steps)
    if args.dump_quad:
        levy.dump_quad(args.dump_quad)
    t0 = time.perf_counter()
    sol = solve(problem, levy, grid, opts)
    timings = {"solve_seconds": time.perf_counter() - t0}
    sup = None
    if args.certify_supersolution:
        kv = _parse_kv(args.certify_supersolution)
        t1 = time.perf_counter()
        sup = build_strict_supersolution(problem, levy, grid, kv["q"], kv["kappa"],
                                         opts, raise_on_failure=False)
        timings["supersolution_seconds"] = time.perf_counter() - t1
        print(sup.line())
    io.save_run(args.out, sol, raw, timings=timings, supersolution=sup)
    rep = sol.report
    print(f"solved {problem.name}: {rep['kind']}, grid {grid.shape}, "
          f"max residual {rep['max_residual']:.3e}, kappa~ {rep['kappa_tilde']:.4g}, "
          f"{timings['solve_seconds']:.2f}s -> {args.out}")
    return 0 if sup is None or sup.certified else 1


def _load_policy(args):
    art = io.load_run(args.policy)
    cfg = io.load_config(args.config) if args.config else art.config
    if cfg is None:
        raise SystemExit("no config: pass --config or use a run directory with config.toml")
    sol = art.solution(cfg.problem, cfg.levy)
    return cfg, sol


def _dt(args, cfg, sol):
    if args.dt is not None:
        return args.dt
    if cfg.mc.get("dt"):
        return cfg.mc["dt"]
    if sol.grid.times is not None:
        return float(np.diff(sol.grid.times).max())
    raise SystemExit("--dt is required")


def cmd_simulate(args):
    cfg, sol = _load_policy(args)
    if not cfg.problem.parabolic:
        raise SystemExit("simulation needs a finite horizon; set horizon.lift_T in the config")
    dt = _dt(args, cfg, sol)
    pts = _parse_points(args.x0 or [",".join(["0"] * cfg.problem.dim_x)], cfg.problem.dim_x)
    seed = cfg.mc["seed"] if args.seed is None else args.seed
    paths = cfg.mc["paths"] if args.paths is None else args.paths
    if paths < 100:
        raise SystemExit("need at least 100 paths")
    rows = []
    writer = None
    if args.paths_csv:
        fh = open(args.paths_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["x0", "path", "payoff", "running", "terminal", "costs", "n_impulses",
                         "exit_time", "aborted"])
    for x in pts:
        res = simulate_many(cfg.problem, cfg.levy, GridPolicy(sol), args.t0, x, paths, dt,
                            seed, args.workers)
        est = summarize(res)
        v = float(sol.evaluate(args.t0, x[None, :])[0])
        rows.append({"x0": x.tolist(), "J": est.mean, "se": est.se, "v": v,
                     "aborted_fraction": est.aborted_fraction,
                     "mean_impulses": est.mean_impulses, **est.parts})
        print(f"x0={x.tolist()} J={est.mean:.6f} SE={est.se:.2e} v={v:.6f} "
              f"impulses/path={est.mean_impulses:.3f}")
        if writer is not None:
            for i in range(paths):
                writer.writerow([";".join(map(repr, x.tolist())), i, repr(res.payoff[i]),
                                 repr(res.running[i]), repr(res.terminal[i]), repr(res.costs[i]),
                                 int(res.n_impulses[i]), repr(res.exit_time[i]),
                                 int(res.aborted[i])])
    if writer is not None:
        fh.close()
    if args.json:
        print(json.dumps(rows, indent=2))
    return 0


def cmd_check_dpp(args):
    cfg, sol = _load_policy(args)
    if not cfg.problem.parabolic:
        raise SystemExit("the DPP check needs a finite horizon; set horizon.lift_T in the config")
    dt = _dt(args, cfg, sol)
    pts = _parse_points(args.x0 or [",".join(["0"] * cfg.problem.dim_x)], cfg.problem.dim_x)
    seed = cfg.mc["seed"] if args.seed is None else args.seed
    paths = cfg.mc["paths"] if args.paths is None else args.paths
    if args.allowance == "auto":
        C, _ = calibrate_allowance(seed=seed)
    else:
        C = float(args.allowance)
    allow = allowance(C, dt, float(np.max(sol.grid.h)))
    rule = parse_stop_rule(args.stop_rule)
    ok = True
    for x in pts:
        rep = check_dpp(cfg.problem, cfg.levy, sol, args.t0, x, rule, paths, dt, seed,
                        allowance=allow, workers=args.workers)
        ok &= rep.passed
        print(f"x0={x.tolist()} " + rep.line())
    return 0 if ok else 1


def cmd_verify(args):
    rep = run_suite(args.run, with_supersolution=args.with_supersolution,
                    comparison=not args.no_comparison)
    for line in rep.lines():
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(rep.to_json())
    print("ALL PASS" if rep.passed else "SOME CHECKS FAILED")
    return 0 if rep.passed else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="impulse-qvi", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve the QVI and write a run directory")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", help="N_x1,...,N_xd[,N_t] (overrides the config)")
    s.add_argument("--out", required=True)
    s.add_argument("--elliptic", action="store_true",
                   help="solve the stationary problem (time-independent data)")
    s.add_argument("--rho", type=float, help="discount rate for --elliptic")
    s.add_argument("--tol", type=float)
    s.add_argument("--certify-supersolution", metavar="q=...,kappa=...")
    s.add_argument("--dump-quad", metavar="CSV", help="write the jump quadrature nodes")
    s.set_defaults(func=cmd_solve)

    def mc_args(p):
        p.add_argument("--policy", required=True, help="run directory of a solved problem")
        p.add_argument("--config", help="config (default: the run's config.toml)")
        p.add_argument("--paths", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--t0", type=float, default=0.0)
        p.add_argument("--x0", action="append", help="start point x1,...,xd (repeatable)")
        p.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("simulate", help="estimate the payoff of the solved policy")
    mc_args(s)
    s.add_argument("--paths-csv", help="write per-path results")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("check-dpp", help="dynamic programming check along simulated paths")
    mc_args(s)
    s.add_argument("--stop-rule", required=True, help="time:t or box:w")
    s.add_argument("--allowance", default="auto",
                   help="allowance constant C, or 'auto' to calibrate on closed-form toys")
    s.set_defaults(func=cmd_check_dpp)

    s = sub.add_parser("verify", help="recompute the property suite of a run")
    s.add_argument("--run", required=True)
    s.add_argument("--with-supersolution", action="store_true")
    s.add_argument("--no-comparison", action="store_true",
                   help="skip the re-solve needed by the comparison check")
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (QVIError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

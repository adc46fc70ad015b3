"""Acceptance criteria, each at its stated tolerance and runtime limit.

Every test prints one ``PASS``/``FAIL`` line; the lines are repeated in the
terminal summary (see conftest.py).
"""
import dataclasses
import math
import time

import numpy as np
import pytest

from helpers import enumerate_chains, lattice_walk, scalar_problem
from impulse_qvi import catalogue as cat
from impulse_qvi import io, toys
from impulse_qvi.grid import Grid, ValueField
from impulse_qvi.impulse import ImpulseTable, iterate_M_terminal
from impulse_qvi.mc import (BoxExit, FixedTime, GridPolicy, allowance, calibrate_allowance,
                            check_dpp, estimate_value, simulate_many)
from impulse_qvi.problem import to_parabolic
from impulse_qvi.solver import level_operator, solve
from impulse_qvi.supersolution import build_strict_supersolution, perturbed_residuals

RESULTS = []


def report(n, title, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {n} {title}: {detail} [{elapsed:.1f}s < {limit:g}s]"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_intervention_algebra():
    t0 = time.perf_counter()
    p = scalar_problem(impulse=cat.impulse_toward([0.25, 0.5, 1.0], 0.2, 0.1), L=2.0)
    table = ImpulseTable(Grid.build(p, 64, 0), p, 0.0)
    rng = np.random.default_rng(20240601)
    worst = dict(monotone=-np.inf, convex=-np.inf, anticonvex=-np.inf, translation=0.0)
    for _ in range(100):
        u, v = rng.normal(size=(2, 64))
        Mu, _ = table.apply(u)
        Mv, _ = table.apply(v)
        Mup, _ = table.apply(u + np.abs(v))
        worst["monotone"] = max(worst["monotone"], np.max(Mu - Mup))
        lam = rng.uniform()
        Mmix, _ = table.apply(lam * u + (1 - lam) * v)
        worst["convex"] = max(worst["convex"], np.max(Mmix - lam * Mu - (1 - lam) * Mv))
        lam = rng.uniform(0, 2)
        Manti, _ = table.apply(-lam * u + (1 + lam) * v)
        worst["anticonvex"] = max(worst["anticonvex"], np.max(-lam * Mu + (1 + lam) * Mv - Manti))
        c = rng.normal()
        Mc, _ = table.apply(u + c)
        worst["translation"] = max(worst["translation"], np.max(np.abs(Mc - Mu - c)))
    ok = all(w <= 1e-12 for w in worst.values())
    detail = ", ".join(f"{k} {v:+.1e}" for k, v in worst.items())
    report(1, "M algebra on 100 pairs", ok, detail, time.perf_counter() - t0, 1.0)


def test_criterion_2_terminal_iteration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    n_cases, mismatches, sweep_excess = 0, 0, -np.inf
    for k0 in (0.5, 1.0, 2.5):
        p = scalar_problem(impulse=lattice_walk(k0, 0.2, reset=False))
        grid = Grid.build(p, 11, 0)
        for _ in range(3):
            vals = rng.uniform(0, 3, 11)
            g = ValueField(grid, vals, 0.0)
            out = iterate_M_terminal(g, p)
            bound = math.ceil((vals.max() - vals.min()) / k0) + 1
            sweep_excess = max(sweep_excess, out.meta["sweeps"] - bound)
            oracle = [enumerate_chains(lambda y: g.evaluate(y, p), x, p, bound) for x in grid.nodes]
            mismatches += int(not np.array_equal(out.values, oracle))
            n_cases += 1
    ok = mismatches == 0 and sweep_excess <= 0
    report(2, "terminal impulse iteration", ok,
           f"{n_cases} cases, {mismatches} enumeration mismatches, sweeps - bound <= {sweep_excess}",
           time.perf_counter() - t0, 1.0)


def test_criterion_3_closed_form_limits():
    t0 = time.perf_counter()
    p, lv = toys.constant_elliptic(rho=1.0, c=1.0)
    ea = float(np.max(np.abs(solve(p, lv, Grid.build(p, 41)).fields[0].values[1:-1] - 1.0)))

    p, lv = toys.frozen(T=2.0)
    grid = Grid.build(p, 21, 20)
    sol = solve(p, lv, grid)
    eb = max(float(np.max(np.abs(f.values - (p.T - t)))) for f, t in zip(sol.fields, grid.times))

    p, lv = toys.heat(L=6.0)
    errs, steps = [], []
    for n in (10, 20, 40, 80):
        g = Grid.build(p, 481, n)
        x = g.nodes[:, 0]
        u = solve(p, lv, g).fields[0].values
        errs.append(float(np.max(np.abs(u - toys.heat_exact(0.0, x))[np.abs(x) <= 2])))
        steps.append(p.T / n)
    h = float(np.max(g.h))
    ratios = [e / (dt + h * h) for e, dt in zip(errs, steps)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    C = max(ratios)
    ok_c = all(0.8 <= q <= 1.2 for q in orders) and max(ratios) <= 2 * min(ratios)
    ok = ea <= 1e-6 and eb <= 1e-8 and ok_c
    report(3, "closed-form limits", ok,
           f"(a) {ea:.1e} (b) {eb:.1e} (c) C = {C:.3f}, orders "
           + ", ".join(f"{q:.3f}" for q in orders), time.perf_counter() - t0, 30.0)


def certificate(sol):
    """Worst |residual| inside S, outside S / at T, and worst Mu - u."""
    grid, p = sol.grid, sol.problem
    w_in = w_out = w_gap = 0.0
    n_levels = 1 if sol.elliptic else len(grid.times) - 1
    for k in range(n_levels):
        op, extra = level_operator(sol, k)
        res, parts = op.residual(sol.fields[k].values, extra)
        w_in = max(w_in, np.abs(res[grid.inside]).max(initial=0.0))
        w_out = max(w_out, np.abs(res[~grid.inside]).max(initial=0.0))
        w_gap = max(w_gap, float(np.max(-parts["gap"])))
    if not sol.elliptic:
        T = grid.times[-1]
        u = sol.fields[-1].values
        Mu, _ = ImpulseTable(grid, p, T).apply(u)
        gT = np.asarray(p.g(T, grid.nodes), dtype=float)
        w_out = max(w_out, float(np.max(np.abs(np.minimum(u - gT, u - Mu)))))
        w_gap = max(w_gap, float(np.max(Mu - u)))
    return w_in, w_out, w_gap


def test_criterion_4_residual_certificate():
    t0 = time.perf_counter()
    rows, ok = [], True
    for name, p, lv, nodes, steps in toys.battery():
        sol = solve(p, lv, Grid.build(p, nodes, steps))
        w_in, w_out, w_gap = certificate(sol)
        good = w_in <= 1e-8 and w_out <= 1e-8 and w_gap <= 1e-8
        ok &= good
        rows.append(f"{name} {max(w_in, w_out, w_gap):.1e}")
    report(4, "QVI residual certificate", ok and len(rows) >= 5,
           f"{len(rows)} toys, worst per toy: " + "; ".join(rows), time.perf_counter() - t0, 60.0)


def lowered(problem, rng):
    a, b, c = rng.uniform(0.0, 1.0, 3)
    shift = rng.uniform(0.0, 0.5)

    def bump(x):
        return a * (1 + np.sin(4 * b * x[:, 0] + 6 * c)) + shift

    f0, g0 = problem.f, problem.g
    return dataclasses.replace(problem, f=lambda t, x, be: f0(t, x, be) - bump(x),
                               g=lambda t, x: g0(t, x) - bump(x))


def test_criterion_5_discrete_comparison():
    t0 = time.perf_counter()
    bases = [(toys.compound_poisson_band(), 41, 10), (toys.exit_band(), 41, 10),
             (toys.fixed_cost_diffusion(), 61, None), (toys.gbm_injection(), 61, None)]
    rng = np.random.default_rng(99)
    violations, worst = 0, -np.inf
    for i in range(20):
        (p, lv), nodes, steps = bases[i % len(bases)]
        grid = Grid.build(p, nodes, steps)
        v1 = solve(lowered(p, rng), lv, grid).values_array()
        v2 = solve(p, lv, grid).values_array()
        excess = float(np.max(v1 - v2))
        worst = max(worst, excess)
        violations += int(np.sum(v1 > v2 + 1e-9))
    report(5, "discrete comparison", violations == 0,
           f"20 ordered pairs, {violations} violations, max(v1 - v2) = {worst:+.2e}",
           time.perf_counter() - t0, 120.0)


def test_criterion_6_strict_supersolution():
    t0 = time.perf_counter()
    p, lv = toys.fixed_cost_diffusion()
    grid = Grid.build(p, 121)
    sol = solve(p, lv, grid)
    sup = build_strict_supersolution(p, lv, grid, q=4.0, kappa=0.1, raise_on_failure=False)
    checks = perturbed_residuals(sol, sup, ms=(2, 10, 100), tol=1e-8)
    ok = sup.certified and sup.min_margin >= sup.kappa > 0 and all(c.passed for c in checks)
    detail = (f"margin {sup.min_margin:.3g} >= kappa {sup.kappa:g}; "
              + ", ".join(f"m={c.m} {c.min_shifted:+.1e}" for c in checks))
    report(6, "strict supersolution and perturbations", ok, detail, time.perf_counter() - t0, 30.0)


def test_criterion_7_monte_carlo_cross_validation():
    t0 = time.perf_counter()
    p, lv = toys.compound_poisson_band()
    grid = Grid.build(p, 201, 200)
    sol = solve(p, lv, grid)
    dt = p.T / 200
    C, _ = calibrate_allowance(seed=0)
    allow = allowance(C, dt, float(np.max(grid.h)))
    policy = GridPolicy(sol)
    probes = np.linspace(-2.25, 2.25, 10)
    misses, worst = 0, -np.inf
    for i, x in enumerate(probes):
        est = estimate_value(p, lv, policy, 0.0, [x], 100_000, dt, seed=1000 + i)
        v = float(sol.evaluate(0.0, np.array([[x]]))[0])
        lo, hi = v - (3 * est.se + allow), v + 3 * est.se
        misses += int(not lo <= est.mean <= hi)
        # distance to the nearer end of the window, negative inside
        worst = max(worst, lo - est.mean, est.mean - hi)
    dpp = [check_dpp(p, lv, sol, 0.0, [0.3], rule, 100_000, dt, seed=77, allowance=allow)
           for rule in (FixedTime(0.5), BoxExit(1.0))]
    ok = misses == 0 and all(r.passed for r in dpp)
    detail = (f"C = {C:.3f}, allowance {allow:.3e}, {misses}/10 probes outside "
              f"(worst {worst:+.2e}); DPP " + ", ".join(
                  f"{r.stop_rule} {r.residual:+.2e} vs {3 * r.se + r.allowance:.2e}" for r in dpp))
    report(7, "Monte Carlo cross-validation", ok, detail, time.perf_counter() - t0, 120.0)


def test_criterion_8_elliptic_parabolic_consistency():
    t0 = time.perf_counter()
    pe, lv = toys.gbm_injection()
    ve = solve(pe, lv, Grid.build(pe, 161)).fields[0].values
    T = 20.0
    pp = to_parabolic(pe, T)
    coarse = solve(pp, lv, Grid.build(pp, 161, 400)).fields[0].values
    fine = solve(pp, lv, Grid.build(pp, 161, 800)).fields[0].values
    # first order in dt: the error of the fine solve is about |coarse - fine|,
    # plus the horizon truncation e^{-rho T} sup|v|
    est = float(np.max(np.abs(coarse - fine))) + math.exp(-pe.rho * T) * float(np.max(np.abs(ve)))
    gap = float(np.max(np.abs(fine - ve)))
    report(8, "elliptic vs lifted parabolic", gap <= 2 * est,
           f"max gap {gap:.3e}, estimated error {est:.3e}, ratio {gap / est:.2f}",
           time.perf_counter() - t0, 60.0)


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = io.load_config(f"{__file__.rsplit('/', 2)[0]}/configs/compound_poisson_band.toml")
    raw = dict(cfg.raw, grid={"nodes": [101], "steps": 50})
    blobs = []
    for k in range(2):
        c = io.config_from_dict(raw)
        sol = solve(c.problem, c.levy, c.build_grid(), c.solver)
        io.save_run(tmp_path / f"r{k}", sol, raw)
        blobs.append((tmp_path / f"r{k}" / "value.qvif").read_bytes())
    same_grid = blobs[0] == blobs[1]
    runs = [simulate_many(cfg.problem, cfg.levy, GridPolicy(sol), 0.0, [0.7], 20_000, 0.02,
                          seed=cfg.mc["seed"], workers=w) for w in (1, 1, 4)]
    same_mc = all(r.payoff.tobytes() == runs[0].payoff.tobytes() for r in runs)
    means = {float(np.mean(r.payoff)) for r in runs}
    report(9, "determinism", same_grid and same_mc and len(means) == 1,
           f"value grids identical: {same_grid}, MC payoffs identical (workers 1, 1, 4): {same_mc}",
           time.perf_counter() - t0, 60.0)

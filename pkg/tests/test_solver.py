"""Backward stepping and policy iteration for the discrete QVI."""
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_level, reset_to_origin, scalar_problem
from impulse_qvi import catalogue as cat
from impulse_qvi import toys
from impulse_qvi.exceptions import ProblemError
from impulse_qvi.grid import CONTINUE, INTERVENE, Grid, ValueField
from impulse_qvi.impulse import iterate_M_terminal
from impulse_qvi.levy import LevyModel
from impulse_qvi.problem import Elliptic, Parabolic
from impulse_qvi.solver import SolverOptions, level_operator, solve, step_parabolic


def test_constant_payoff_is_a_solution():
    p = scalar_problem(f=0.0, g=2.5, impulse=reset_to_origin(0.5))
    grid = Grid.build(p, 21, 10)
    sol = solve(p, LevyModel(), grid)
    # exact up to the rounding of the sparse LU solve
    assert np.max(np.abs(sol.values_array() - 2.5)) <= 1e-12
    assert all(np.all(pol.region != INTERVENE) for pol in sol.policies)


def test_frozen_dynamics_time_to_go():
    p, lv = toys.frozen(T=2.0)
    grid = Grid.build(p, 21, 20)
    sol = solve(p, lv, grid)
    for f, t in zip(sol.fields, grid.times):
        assert np.max(np.abs(f.values - (2.0 - t))) <= 1e-12


def test_heat_step_error_small():
    p, lv = toys.heat(L=5.0)
    grid = Grid.build(p, 201, 100)
    sol = solve(p, lv, grid)
    x = grid.nodes[:, 0]
    err = np.max(np.abs(sol.fields[0].values - toys.heat_exact(0.0, x))[np.abs(x) <= 2])
    # implicit Euler: O(dt) dominates, dt = 0.01
    assert err < 5e-3


def test_zero_steps_returns_terminal_iterate():
    p, lv = toys.exchange_rate_band(k0=0.1)
    grid = Grid.build(p, 41, 0)
    sol = solve(p, lv, grid)
    g = ValueField(grid, p.g(p.T, grid.nodes), p.T)
    assert np.array_equal(sol.fields[0].values, iterate_M_terminal(g, p).values)


def small_instance():
    # 5 nodes, 2 controls, 2 impulse candidates, 1 time step
    imp = cat.impulse_reset([[0.0], [0.5]], 0.15, 0.2)
    p = scalar_problem(mu=0.0, vol=0.6, f=cat.running_quadratic(1.0, 0.0, 0.3),
                       g=cat.terminal_quadratic(1.0), impulse=imp, B=[[-0.5], [0.5]],
                       control_gain=1.0, growth_p=2.0)
    return p, Grid.build(p, 5, 1)


def test_one_step_matches_brute_force():
    p, grid = small_instance()
    sol = solve(p, LevyModel(), grid)
    op, extra = level_operator(sol, 0)
    found = brute_force_level(p, LevyModel(), grid, 0.0, op.lam, extra)
    assert found, "brute force found no fixed point"
    for u in found:
        assert np.max(np.abs(u - sol.fields[0].values)) <= 1e-10


def band_regions(k0_values):
    out = []
    for k0 in k0_values:
        p, lv = toys.exchange_rate_band(k0=k0, L=2.0)
        p = dataclasses.replace(p, B=np.zeros((1, 1)))
        grid = Grid.build(p, 11, 1)
        sol = solve(p, lv, grid)
        op, extra = level_operator(sol, 0)
        found = brute_force_level(p, lv, grid, 0.0, op.lam, extra)
        assert found
        for u in found:
            assert np.max(np.abs(u - sol.fields[0].values)) <= 1e-10
        out.append((grid.nodes[:, 0], sol.policies[0].region))
    return out


def test_band_region_shrinks_with_fixed_cost():
    regions = band_regions([0.05, 0.2, 0.6])
    prev = None
    for x, region in regions:
        imp = region == INTERVENE
        # a centered band: intervention exactly at |x| >= threshold
        if imp.any():
            thr = np.min(np.abs(x[imp]))
            assert np.array_equal(imp, np.abs(x) >= thr - 1e-12)
        if prev is not None:
            assert not np.any(imp & ~prev)
        prev = imp
    assert regions[0][1][0] == INTERVENE and regions[0][1][5] == CONTINUE


def test_elliptic_constant_profit():
    p, lv = toys.constant_elliptic(rho=1.0, c=1.0)
    sol = solve(p, lv, Grid.build(p, 41))
    assert np.max(np.abs(sol.fields[0].values[1:-1] - 1.0)) <= 1e-6


@pytest.mark.parametrize("rho", [1.0, 10.0, 1e3, 1e5])
def test_elliptic_constant_over_rho(rho):
    p, lv = toys.constant_elliptic(rho=rho, c=3.0)
    sol = solve(p, lv, Grid.build(p, 21))
    v = sol.fields[0].values
    assert np.allclose(v, 3.0 / rho, rtol=1e-10)


def test_rho_below_growth_rate_rejected():
    p, lv = toys.fixed_cost_diffusion()
    fast = dataclasses.replace(p, B=np.array([[-1.0], [0.0], [1.0]]), horizon=Elliptic(0.5))
    with pytest.raises(ProblemError, match="kappa~"):
        solve(fast, lv, Grid.build(fast, 61))
    with pytest.raises(ProblemError, match="positive discount"):
        solve(dataclasses.replace(p, horizon=Elliptic(0.0)), lv, Grid.build(p, 61))


def test_howard_and_lagged_agree():
    p, lv = toys.compound_poisson_band(k0=0.2)
    grid = Grid.build(p, 61, 10)
    a = solve(p, lv, grid)
    b = solve(p, lv, grid, SolverOptions(method="lagged", tol=1e-12))
    assert np.max(np.abs(a.values_array() - b.values_array())) <= 1e-9
    assert b.report["max_residual"] <= 1e-8


def test_step_parabolic_matches_sweep():
    p, lv = toys.exchange_rate_band()
    grid = Grid.build(p, 41, 4)
    sol = solve(p, lv, grid)
    u, _ = step_parabolic(sol.fields[2], p, lv, grid, grid.times[1])
    assert np.max(np.abs(u.values - sol.fields[1].values)) <= 1e-12


def test_evaluate_at_nodes_returns_field():
    p, lv = toys.exchange_rate_band()
    grid = Grid.build(p, 41, 4)
    sol = solve(p, lv, grid)
    k = 2
    assert np.array_equal(sol.evaluate(grid.times[k], grid.nodes), sol.fields[k].values)


def test_residual_certificate_on_jump_toy():
    p, lv = toys.compound_poisson_band()
    grid = Grid.build(p, 101, 20)
    sol = solve(p, lv, grid)
    for k in range(len(grid.times) - 1):
        op, extra = level_operator(sol, k)
        res, parts = op.residual(sol.fields[k].values, extra)
        assert np.max(np.abs(res)) <= 1e-8
        assert np.all(parts["gap"] >= -1e-8)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_comparison_for_ordered_payoffs(seed):
    rng = np.random.default_rng(seed)
    base, lv = toys.compound_poisson_band(k0=0.2)
    a, b, c = rng.uniform(0, 1, 3)

    def lower(x):
        return a * (1 + np.sin(3 * b * x[:, 0] + c))

    f0, g0 = base.f, base.g
    low = dataclasses.replace(base, f=lambda t, x, be: f0(t, x, be) - lower(x),
                              g=lambda t, x: g0(t, x) - lower(x))
    grid = Grid.build(base, 41, 10)
    v1 = solve(low, lv, grid).values_array()
    v2 = solve(base, lv, grid).values_array()
    assert np.all(v1 <= v2 + 1e-9)

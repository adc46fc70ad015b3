"""Strict supersolution search and the perturbed-field residual."""
import dataclasses

import numpy as np
import pytest

from helpers import reset_to_origin, scalar_problem
from impulse_qvi import catalogue as cat
from impulse_qvi import toys
from impulse_qvi.exceptions import ProblemError
from impulse_qvi.grid import Grid
from impulse_qvi.levy import LevyModel
from impulse_qvi.problem import Elliptic
from impulse_qvi.solver import solve
from impulse_qvi.supersolution import (SupersolutionError, build_strict_supersolution,
                                       perturbed_residuals, supersolution_values)


def diffusion(rho=1.0, vol=0.7, k0=1.0):
    f = cat.running_quadratic(0.0, 0.0, 0.0, offset=0.5)  # bounded: f = 0.5
    return scalar_problem(horizon=Elliptic(rho), vol=vol, f=f, g=0.0,
                          impulse=reset_to_origin(k0), growth_p=1.0, L=2.0)


def test_pure_diffusion_quadratic_certifies():
    p = diffusion()
    grid = Grid.build(p, 41)
    sup = build_strict_supersolution(p, LevyModel(), grid, q=2.0, kappa=0.1)
    assert sup.certified and sup.min_margin >= 0.1
    w1, w2 = sup.params["w1"], sup.params["w2"]
    x = grid.nodes[:, 0]
    # direct evaluation on the quadratic: rho w - sigma^2 w1 - f, and
    # w - Mw = w(x) - (w(0) - k0) = w1 x^2 + k0
    pde = 1.0 * (w1 * x ** 2 + w2) - 0.7 ** 2 * w1 - 0.5
    gap = w1 * x ** 2 + 1.0
    inner = slice(1, -1)
    assert np.allclose(sup.margins[0][inner], np.minimum(pde, gap)[inner], atol=1e-9)


def test_reset_margin_is_growth_plus_fixed_cost():
    p = diffusion(k0=0.8)
    grid = Grid.build(p, 41)
    sup = build_strict_supersolution(p, LevyModel(), grid, q=3.0, kappa=0.05)
    w = sup.value(0).values
    w1 = sup.params["w1"]
    x = grid.nodes[:, 0]
    from impulse_qvi.impulse import ImpulseTable
    Mw, _ = ImpulseTable(grid, p, 0.0).apply(w)
    assert np.allclose(w - Mw, w1 * np.abs(x) ** 3 + 0.8, atol=1e-12)


def test_supersolution_values_closed_form():
    nodes = np.array([[0.0], [1.0], [-2.0]])
    v = supersolution_values(nodes, 0.5, 2.0, 3.0, 2.0, 1.0)
    assert np.allclose(v, np.exp(-0.5) * (2.0 * np.array([0.0, 1.0, 4.0]) + 3.0))


def test_zero_discount_fails():
    p = dataclasses.replace(diffusion(), horizon=Elliptic(0.0))
    grid = Grid.build(p, 41)
    with pytest.raises(SupersolutionError) as info:
        build_strict_supersolution(p, LevyModel(), grid, q=2.0, kappa=0.1)
    assert info.value.best_margin < 0.1
    sup = build_strict_supersolution(p, LevyModel(), grid, q=2.0, kappa=0.1,
                                     raise_on_failure=False)
    assert not sup.certified


def test_preconditions():
    p = diffusion()
    grid = Grid.build(p, 21)
    with pytest.raises(ProblemError, match="exceed"):
        build_strict_supersolution(p, LevyModel(), grid, q=1.0, kappa=0.1)
    with pytest.raises(ProblemError, match="kappa"):
        build_strict_supersolution(p, LevyModel(), grid, q=2.0, kappa=0.0)
    with pytest.raises(ProblemError, match="fixed costs"):
        build_strict_supersolution(dataclasses.replace(p, fixed_cost=None), LevyModel(), grid,
                                   q=2.0, kappa=0.1)


def test_fixed_cost_toy_perturbation():
    p, lv = toys.fixed_cost_diffusion()
    grid = Grid.build(p, 121)
    sol = solve(p, lv, grid)
    sup = build_strict_supersolution(p, lv, grid, q=4.0, kappa=0.1)
    assert sup.certified
    for chk in perturbed_residuals(sol, sup):
        assert chk.passed, chk.line()


def test_parabolic_jump_toy_perturbation():
    p, lv = toys.compound_poisson_band()
    grid = Grid.build(p, 61, 20)
    sol = solve(p, lv, grid)
    sup = build_strict_supersolution(p, lv, grid, q=4.0, kappa=0.05)
    assert sup.certified and len(sup.fields) == len(grid.times)
    for chk in perturbed_residuals(sol, sup):
        assert chk.passed, chk.line()

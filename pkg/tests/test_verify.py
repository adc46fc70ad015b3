"""The property suite over persisted runs."""
import json
import shutil

import numpy as np
import pytest

from impulse_qvi import io, toys
from impulse_qvi.grid import Grid
from impulse_qvi.solver import solve
from impulse_qvi.supersolution import build_strict_supersolution
from impulse_qvi.verify import run_suite


@pytest.fixture(scope="module")
def band_run(tmp_path_factory):
    cfg = io.load_config(f"{__file__.rsplit('/', 2)[0]}/configs/compound_poisson_band.toml")
    grid = Grid.build(cfg.problem, 61, 20)
    raw = dict(cfg.raw, grid={"nodes": [61], "steps": 20})
    sol = solve(cfg.problem, cfg.levy, grid, cfg.solver)
    sup = build_strict_supersolution(cfg.problem, cfg.levy, grid, q=4.0, kappa=0.05)
    run = tmp_path_factory.mktemp("band")
    io.save_run(run, sol, raw, supersolution=sup)
    return run


def test_suite_passes_on_solved_run(band_run):
    rep = run_suite(band_run, with_supersolution=True)
    assert rep.passed, "\n".join(rep.lines())
    names = [r.name for r in rep.results]
    assert names[0] == "artifact checksums"
    assert "QVI residual inside S" in names and "v >= Mv" in names
    assert any(n.startswith("M convex") for n in names)
    assert any("supersolution" in n for n in names)
    assert any("perturbed" in n for n in names)
    assert json.loads(rep.to_json())["passed"] is True


def test_suite_detects_tampering(band_run, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(band_run, copy)
    vals = io.read_qvif(copy / "value.qvif")
    vals[3, 30] += 1e-3
    io.write_qvif(copy / "value.qvif", vals)  # valid file, stale manifest
    rep = run_suite(copy)
    assert not rep.passed
    assert rep.results[0].name == "artifact checksums" and not rep.results[0].passed


def test_suite_flags_a_wrong_value_grid(band_run, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(band_run, copy)
    art = io.load_run(copy)
    sol = art.solution()
    sol.fields[5].values[30] += 1e-3
    io.save_run(copy, sol, art.config.raw)  # re-hashed, so only the residual can catch it
    rep = run_suite(copy, comparison=False)
    assert rep["artifact checksums"].passed
    assert not rep["QVI residual inside S"].passed


def test_elliptic_run_with_supersolution(tmp_path):
    p, lv = toys.fixed_cost_diffusion()
    grid = Grid.build(p, 121)
    sol = solve(p, lv, grid)
    sup = build_strict_supersolution(p, lv, grid, q=4.0, kappa=0.1)
    raw = {"schema_version": 1, "preset": "fixed-cost-diffusion", "horizon": {"rho": 1.0},
           "grid": {"nodes": [121]}}
    io.save_run(tmp_path, sol, raw, supersolution=sup)
    rep = run_suite(tmp_path, with_supersolution=True)
    assert rep.passed, "\n".join(rep.lines())
    assert np.isfinite(rep["QVI residual inside S"].margin)

"""Configs, QVIF grids and run directories."""
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from impulse_qvi import io, toys
from impulse_qvi.exceptions import ChecksumError, ConfigError
from impulse_qvi.grid import Grid
from impulse_qvi.solver import solve

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

MINIMAL = """
schema_version = 1
name = "bm"
[horizon]
T = 1.0
[domain]
lower = [-2.0]
upper = [2.0]
[drift]
kind = "constant"
value = 0.0
[volatility]
kind = "constant"
value = 1.0
[running]
kind = "constant"
value = 1.0
[terminal]
kind = "constant"
value = 0.0
[impulse]
kind = "reset"
targets = [[0.0]]
k0 = 0.5
[grid]
nodes = [41]
steps = 10
"""


def test_minimal_config_builds():
    cfg = io.loads_config(MINIMAL)
    p = cfg.problem
    assert p.parabolic and p.T == 1.0 and p.dim_x == 1
    assert p.fixed_cost == 0.5
    assert cfg.grid_nodes == (41,) and cfg.grid_steps == 10
    assert cfg.mc["seed"] == 0
    grid = cfg.build_grid()
    assert grid.size == 41 and len(grid.times) == 11


def test_ambiguous_horizon():
    text = MINIMAL.replace("T = 1.0", "T = 1.0\nrho = 0.1")
    with pytest.raises(ConfigError) as info:
        io.loads_config(text)
    assert any("horizon ambiguous" in e for e in info.value.problems)


def test_all_schema_problems_reported_together():
    text = MINIMAL.replace("value = 1.0\n[running]", "value = 1.0\nwobble = 3\n[running]")
    text = text.replace("[grid]", "[gadget]\nx = 1\n[grid]")
    text = text.replace('kind = "reset"', 'kind = "teleport"')
    with pytest.raises(ConfigError) as info:
        io.loads_config(text)
    probs = info.value.problems
    assert "unknown key volatility.wobble" in probs
    assert "unknown section [gadget]" in probs
    assert any("impulse.kind = 'teleport'" in e for e in probs)
    assert len(probs) == 3


def test_wrong_types_and_missing_sections():
    raw = io.tomli.loads(MINIMAL)
    raw["grid"]["steps"] = "ten"
    del raw["drift"]
    errs = io.check_schema(raw)
    assert "grid.steps: wrong type str" in errs
    assert "missing section [drift]" in errs


def test_toml_parse_error_is_config_error():
    with pytest.raises(ConfigError):
        io.loads_config("schema_version = = 1")


def test_grid_dimension_mismatch():
    with pytest.raises(ConfigError, match="state dimension"):
        io.loads_config(MINIMAL.replace("nodes = [41]", "nodes = [41, 41]"))


def test_hash_ignores_key_order_and_survives_round_trip():
    raw = io.tomli.loads(MINIMAL)
    shuffled = {k: (dict(reversed(list(v.items()))) if isinstance(v, dict) else v)
                for k, v in reversed(list(raw.items()))}
    assert io.canonical_hash(raw) == io.canonical_hash(shuffled)
    back = io.tomli.loads(io.dumps_config(raw))
    assert io.canonical_hash(back) == io.canonical_hash(raw)
    changed = io.tomli.loads(MINIMAL.replace("k0 = 0.5", "k0 = 0.6"))
    assert io.canonical_hash(changed) != io.canonical_hash(raw)


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIGS)))
def test_shipped_configs_load(name):
    cfg = io.load_config(os.path.join(CONFIGS, name))
    assert cfg.problem.dim_x == len(cfg.grid_nodes)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float64, np.int64]),
                  hnp.array_shapes(min_dims=1, max_dims=5, max_side=4)))
def test_qvif_round_trip(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("q") / "a.qvif"
    io.write_qvif(path, a)
    b = io.read_qvif(path)
    assert b.shape == a.shape and b.dtype == a.dtype
    assert b.tobytes() == a.tobytes()


def test_qvif_corruption(tmp_path):
    path = tmp_path / "a.qvif"
    io.write_qvif(path, np.arange(12.0).reshape(3, 4))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(ChecksumError, match="payload"):
        io.read_qvif(path)
    flipped = bytearray(blob)
    flipped[-1] ^= 0x01
    path.write_bytes(bytes(flipped))
    with pytest.raises(ChecksumError, match="crc32"):
        io.read_qvif(path)
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ChecksumError, match="magic"):
        io.read_qvif(path)
    path.write_bytes(blob[:10])
    with pytest.raises(ChecksumError, match="truncated"):
        io.read_qvif(path)
    with pytest.raises(ValueError):
        io.write_qvif(path, np.zeros((1,) * 6))


@pytest.fixture(scope="module")
def saved(tmp_path_factory):
    cfg = io.loads_config(MINIMAL)
    sol = solve(cfg.problem, cfg.levy, cfg.build_grid(), cfg.solver)
    run = tmp_path_factory.mktemp("run")
    man = io.save_run(run, sol, cfg.raw, seeds={"mc": 3})
    return cfg, sol, run, man


def test_run_round_trip_is_bitwise(saved):
    cfg, sol, run, man = saved
    art = io.load_run(run)
    assert art.values.tobytes() == sol.values_array().tobytes()
    assert man.config_hash == cfg.hash == art.config.hash
    assert art.manifest.seeds == {"mc": 3}
    back = art.solution()
    for a, b in zip(back.fields, sol.fields):
        assert a.values.tobytes() == b.values.tobytes()
    for a, b in zip(back.policies, sol.policies):
        assert np.array_equal(a.region, b.region) and np.array_equal(a.zeta_index, b.zeta_index)
    X = np.array([[0.13], [-1.7]])
    assert np.array_equal(back.evaluate(0.0, X), sol.evaluate(0.0, X))


def test_csv_matches_binary(saved):
    cfg, sol, run, man = saved
    csv_vals = io.read_value_csv(run / "value.csv", sol.grid)
    assert np.max(np.abs(csv_vals - sol.values_array())) <= 1e-15


def test_layout(saved):
    cfg, sol, run, man = saved
    names = set(os.listdir(run))
    assert {"config.toml", "manifest.json", "value.qvif", "policy.qvif", "value.csv",
            "policy.csv", "report.json"} <= names
    assert set(man.artifacts) == names - {"manifest.json"}


def test_tampered_artifact_is_detected(saved, tmp_path):
    cfg, sol, run, man = saved
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(run, copy)
    with open(copy / "value.csv", "a") as fh:
        fh.write("\n")
    with pytest.raises(ChecksumError, match="value.csv"):
        io.load_run(copy)
    assert io.load_run(copy, verify_checksums=False).values.shape == sol.values_array().shape
    os.remove(copy / "policy.qvif")
    with pytest.raises(FileNotFoundError):
        io.load_run(copy)


def test_elliptic_run_round_trip(tmp_path):
    p, lv = toys.constant_elliptic()
    sol = solve(p, lv, Grid.build(p, 21))
    io.save_run(tmp_path, sol)
    art = io.load_run(tmp_path)
    assert art.grid.times is None and art.config is None
    assert art.values[0].tobytes() == sol.values_array().tobytes()

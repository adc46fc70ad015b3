"""Config ingestion, run-directory persistence and export.

Config files are TOML (schema below, ``docs`` in the README). A run
directory holds::

    config.toml        the config that produced the run (canonical dump)
    manifest.json      RunManifest: hashes, grid, options, seeds, timings
    value.qvif         value grid, f64 little-endian, axes (t, x1, ..., xd)
    policy.qvif        int64 (t, field, x1, ..., xd), field = region, beta, zeta
    value.csv          t, x1..xd, value (17 significant digits)
    policy.csv         t, x1..xd, region, beta index, zeta index
    report.json        solver report (residuals, iterations, kappa~, ...)
    supersolution.json / supersolution.qvif / margin.qvif   when certified

QVIF layout: a 64-byte header (magic ``QVIF``, u16 version, u16 ndim,
u8 dtype code, 3 pad bytes, 5 x u64 dims, u32 crc32 of the payload,
8 reserved bytes) followed by the row-major payload.
"""
import csv
import hashlib
import json
import math
import os
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import tomli
import tomli_w

from . import catalogue as cat
from . import toys
from .exceptions import ChecksumError, ConfigError, ProblemError
from .grid import Grid, Policy, ValueField
from .kernels import BACKEND
from .levy import DoubleExponentialJumps, GaussianJumps, LevyModel, TemperedStable
from .problem import Domain, Elliptic, Parabolic, Problem, to_parabolic
from .solver import Solution, SolverOptions

SCHEMA_VERSION = 1
QVIF_MAGIC = b"QVIF"
QVIF_VERSION = 1
QVIF_MAX_DIMS = 5
_HEADER = struct.Struct("<4sHHB3x5QI8x")
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8")}
DTYPE_CODES = {np.dtype("<f8"): 1, np.dtype("<i8"): 2}
assert _HEADER.size == 64

# ---------------------------------------------------------------------------
# schema

_NUM = (int, float)
_ANY_LIST = list

# section -> {key: expected type(s)}; "kind" selects a catalogue entry
_SCHEMA = {
    "": {"schema_version": int, "name": str, "preset": str},
    "horizon": {"T": _NUM, "rho": _NUM, "lift_T": _NUM},
    "preset_params": None,  # free-form keyword arguments of the preset builder
    "domain": {"lower": list, "upper": list, "s_lower": list, "s_upper": list,
               "growth_p": _NUM},
    "controls": {"values": list},
    "drift": {"kind": str, "value": (list, *_NUM), "rate": (list, *_NUM),
              "speed": (list, *_NUM), "mean": (list, *_NUM), "control_gain": (list, *_NUM),
              "breaks": list, "coeffs": list},
    "volatility": {"kind": str, "value": (list, *_NUM), "breaks": list, "coeffs": list},
    "running": {"kind": str, "value": _NUM, "state_weight": _NUM, "center": (list, *_NUM),
                "control_weight": _NUM, "offset": _NUM, "slope": (list, *_NUM),
                "breaks": list, "coeffs": list},
    "terminal": {"kind": str, "value": _NUM, "weight": _NUM, "center": (list, *_NUM),
                 "offset": _NUM, "slope": (list, *_NUM), "breaks": list, "coeffs": list},
    "impulse": {"kind": str, "penalty": _NUM, "targets": list, "shifts": list,
                "fractions": list, "center": (list, *_NUM), "target": _NUM, "levels": int,
                "k0": _NUM, "k1": _NUM},
    "jumps": {"kind": str, "map": str, "direction": list, "atoms": list, "intensity": _NUM,
              "mean": _NUM, "std": _NUM, "p_up": _NUM, "eta_up": _NUM, "eta_down": _NUM,
              "C": _NUM, "G": _NUM, "M": _NUM, "Y": _NUM, "delta": _NUM, "quad_nodes": int,
              "radius": _NUM, "eps_sim": _NUM},
    "grid": {"nodes": list, "steps": int},
    "solver": {"tol": _NUM, "max_iter": int, "max_outer": int, "drift_mode": str,
               "method": str, "terminal_max_iter": int},
    "mc": {"seed": int, "paths": int, "dt": _NUM, "workers": int},
}

_KINDS = {
    "drift": {"constant": ("value",), "linear": ("rate",), "mean_reverting": ("speed", "mean"),
              "piecewise": ("breaks", "coeffs")},
    "volatility": {"constant": ("value",), "linear": ("value",), "piecewise": ("breaks", "coeffs")},
    "running": {"constant": ("value",), "quadratic": (), "linear": ("slope",),
                "piecewise": ("breaks", "coeffs")},
    "terminal": {"constant": ("value",), "quadratic": (), "linear": ("slope",),
                 "piecewise": ("breaks", "coeffs")},
    "impulse": {"none": (), "reset": ("targets", "k0"), "shift": ("shifts", "k0"),
                "toward": ("fractions", "k0"), "inject": ("target", "k0")},
    "jumps": {"none": (), "atoms": ("atoms",), "gaussian": ("intensity", "mean", "std"),
              "double_exponential": ("intensity", "p_up", "eta_up", "eta_down"),
              "tempered_stable": ("C", "G", "M", "Y")},
}

PRESETS = {
    "frozen": (toys.frozen, "T"),
    "heat": (toys.heat, "T"),
    "constant-elliptic": (toys.constant_elliptic, "rho"),
    "exchange-rate-band": (toys.exchange_rate_band, "T"),
    "compound-poisson-band": (toys.compound_poisson_band, "T"),
    "gbm-injection": (toys.gbm_injection, "rho"),
    "fixed-cost-diffusion": (toys.fixed_cost_diffusion, "rho"),
    "exit-band": (toys.exit_band, "T"),
}

_EXPLICIT_SECTIONS = ("domain", "controls", "drift", "volatility", "running", "terminal",
                      "impulse", "jumps")


@dataclass
class Config:
    problem: Problem
    levy: LevyModel
    grid_nodes: tuple
    grid_steps: object
    solver: SolverOptions
    mc: dict
    raw: dict
    hash: str

    def build_grid(self):
        return Grid.build(self.problem, self.grid_nodes, self.grid_steps)


def _type_ok(v, types):
    if not isinstance(types, tuple):
        types = (types,)
    if isinstance(v, bool):
        return bool in types
    return isinstance(v, types)


def check_schema(raw):
    """List every schema violation (empty list when valid)."""
    errs = []
    for key, val in raw.items():
        if isinstance(val, dict):
            if key not in _SCHEMA or key == "":
                errs.append(f"unknown section [{key}]")
                continue
            spec = _SCHEMA[key]
            if spec is None:
                continue
            for k, v in val.items():
                if k not in spec:
                    errs.append(f"unknown key {key}.{k}")
                elif not _type_ok(v, spec[k]):
                    errs.append(f"{key}.{k}: wrong type {type(v).__name__}")
        else:
            spec = _SCHEMA[""]
            if key not in spec:
                errs.append(f"unknown key {key}")
            elif not _type_ok(val, spec[key]):
                errs.append(f"{key}: wrong type {type(val).__name__}")
    ver = raw.get("schema_version")
    if ver is None:
        errs.append("missing schema_version")
    elif ver != SCHEMA_VERSION:
        errs.append(f"schema_version {ver} is not supported (expected {SCHEMA_VERSION})")
    hz = raw.get("horizon", {})
    if not isinstance(hz, dict):
        hz = {}
    if "T" in hz and "rho" in hz:
        errs.append("horizon ambiguous: set exactly one of horizon.T and horizon.rho")
    elif "T" not in hz and "rho" not in hz:
        errs.append("missing horizon: set horizon.T or horizon.rho")
    if "lift_T" in hz and "rho" not in hz:
        errs.append("horizon.lift_T needs horizon.rho")
    for sec, kinds in _KINDS.items():
        s = raw.get(sec)
        if not isinstance(s, dict):
            continue
        kind = s.get("kind")
        if kind is None:
            errs.append(f"{sec}.kind is required")
        elif kind not in kinds:
            errs.append(f"{sec}.kind = {kind!r} is not one of {sorted(kinds)}")
        else:
            for req in kinds[kind]:
                if req not in s:
                    errs.append(f"{sec}.{req} is required for kind {kind!r}")
    if "preset" in raw:
        if raw["preset"] not in PRESETS:
            errs.append(f"preset {raw['preset']!r} is not one of {sorted(PRESETS)}")
        for sec in _EXPLICIT_SECTIONS:
            if sec in raw:
                errs.append(f"[{sec}] cannot be combined with a preset")
    else:
        if "preset_params" in raw:
            errs.append("[preset_params] needs a preset")
        for sec in ("domain", "drift", "volatility", "running", "terminal", "impulse"):
            if sec not in raw:
                errs.append(f"missing section [{sec}]")
        dom = raw.get("domain", {})
        if isinstance(dom, dict):
            for k in ("lower", "upper"):
                if k not in dom:
                    errs.append(f"domain.{k} is required")
    grid = raw.get("grid")
    if not isinstance(grid, dict) or "nodes" not in grid:
        errs.append("grid.nodes is required")
    return errs


def canonical_hash(raw):
    """sha256 of the canonical JSON form (sorted keys, fixed separators)."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path):
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def loads_config(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_dict(raw)


def dumps_config(raw):
    return tomli_w.dumps(raw)


def config_from_dict(raw):
    errs = check_schema(raw)
    if errs:
        raise ConfigError(errs)
    try:
        problem, levy = _build(raw)
    except (ProblemError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    grid = raw["grid"]
    nodes = tuple(int(n) for n in grid["nodes"])
    if len(nodes) != problem.dim_x:
        raise ConfigError(f"grid.nodes has {len(nodes)} entries, state dimension is {problem.dim_x}")
    steps = grid.get("steps")
    if steps is not None and not problem.parabolic:
        raise ConfigError("grid.steps is only meaningful with a finite horizon")
    sopts = SolverOptions(**raw.get("solver", {}))
    mc = {"seed": 0, "paths": 10000, "dt": None, "workers": 1}
    mc.update(raw.get("mc", {}))
    return Config(problem, levy, nodes, steps, sopts, mc, raw, canonical_hash(raw))


def _arr(v):
    return np.asarray(v, dtype=float)


def _build(raw):
    hz = raw["horizon"]
    if "preset" in raw:
        builder, kind = PRESETS[raw["preset"]]
        params = dict(raw.get("preset_params", {}))
        if kind == "T":
            if "T" not in hz:
                raise ConfigError(f"preset {raw['preset']!r} has a finite horizon: set horizon.T")
            params["T"] = hz["T"]
        else:
            if "rho" not in hz:
                raise ConfigError(f"preset {raw['preset']!r} is discounted: set horizon.rho")
            params["rho"] = hz["rho"]
        problem, levy = builder(**params)
    else:
        problem, levy = _build_explicit(raw, hz)
    if "lift_T" in hz:
        problem = to_parabolic(problem, float(hz["lift_T"]))
    return problem, levy


def _piecewise(sec):
    return cat.PiecewisePolynomial(sec["breaks"], sec["coeffs"])


def _build_explicit(raw, hz):
    dom = raw["domain"]
    lower, upper = _arr(dom["lower"]), _arr(dom["upper"])
    d = len(lower)
    if "s_lower" in dom or "s_upper" in dom:
        S = Domain.box(lower, upper, _arr(dom.get("s_lower", [-math.inf] * d)),
                       _arr(dom.get("s_upper", [math.inf] * d)))
    else:
        S = Domain.whole(lower, upper)
    B = _arr(raw.get("controls", {}).get("values", [[0.0]]))
    if B.ndim == 1:
        B = B[:, None]
    db = B.shape[1]

    s = raw["drift"]
    gain = s.get("control_gain", 0.0)
    mu = {
        "constant": lambda: cat.drift_constant(s["value"], d, gain, db),
        "linear": lambda: cat.drift_linear(s["rate"], d, gain, db),
        "mean_reverting": lambda: cat.drift_mean_reverting(s["speed"], s["mean"], d, gain, db),
        "piecewise": lambda: cat.drift_piecewise(_piecewise(s), gain, db),
    }[s["kind"]]()
    s = raw["volatility"]
    sigma = {
        "constant": lambda: cat.vol_constant(s["value"], d),
        "linear": lambda: cat.vol_linear(s["value"], d),
        "piecewise": lambda: cat.vol_piecewise(_piecewise(s)),
    }[s["kind"]]()
    s = raw["running"]
    f = {
        "constant": lambda: cat.running_constant(s["value"]),
        "quadratic": lambda: cat.running_quadratic(s.get("state_weight", 1.0), _arr(s.get("center", 0.0)),
                                                   s.get("control_weight", 0.0), s.get("offset", 0.0)),
        "linear": lambda: cat.running_linear(s["slope"], s.get("offset", 0.0)),
        "piecewise": lambda: cat.running_piecewise(_piecewise(s), s.get("control_weight", 0.0)),
    }[s["kind"]]()
    s = raw["terminal"]
    g = {
        "constant": lambda: cat.terminal_constant(s["value"]),
        "quadratic": lambda: cat.terminal_quadratic(s.get("weight", 1.0), _arr(s.get("center", 0.0)),
                                                    s.get("offset", 0.0)),
        "linear": lambda: cat.terminal_linear(s["slope"], s.get("offset", 0.0)),
        "piecewise": lambda: cat.terminal_piecewise(_piecewise(s)),
    }[s["kind"]]()
    s = raw["impulse"]
    k1 = s.get("k1", 0.0)
    Z, Gamma, K, k0 = {
        "none": lambda: cat.impulse_none(d, s.get("penalty", 1e6)),
        "reset": lambda: cat.impulse_reset(s["targets"], s["k0"], k1),
        "shift": lambda: cat.impulse_shift(s["shifts"], s["k0"], k1),
        "toward": lambda: cat.impulse_toward(s["fractions"], s["k0"], k1, _arr(s.get("center", 0.0))),
        "inject": lambda: cat.impulse_inject(s["target"], s["k0"], s.get("k1", 1.0), s.get("levels", 1)),
    }[s["kind"]]()

    ell = None
    levy = LevyModel()
    s = raw.get("jumps")
    if s is not None and s["kind"] != "none":
        density = {
            "atoms": lambda: None,
            "gaussian": lambda: GaussianJumps(s["intensity"], s["mean"], s["std"]),
            "double_exponential": lambda: DoubleExponentialJumps(s["intensity"], s["p_up"],
                                                                 s["eta_up"], s["eta_down"]),
            "tempered_stable": lambda: TemperedStable(s["C"], s["G"], s["M"], s["Y"]),
        }[s["kind"]]()
        atoms = [(a[0], a[1]) for a in s.get("atoms", [])]
        opts = {k: s[k] for k in ("delta", "quad_nodes", "radius", "eps_sim") if k in s}
        levy = LevyModel(atoms=atoms, density=density, **opts)
        m = s.get("map", "additive")
        if m == "additive":
            ell = cat.jumps_additive(d, s.get("direction"))
        elif m == "proportional":
            ell = cat.jumps_proportional(d)
        elif m == "linear":
            ell = cat.jumps_linear(d)
        else:
            raise ConfigError(f"jumps.map = {m!r} is not one of ['additive', 'linear', 'proportional']")
    horizon = Parabolic(float(hz["T"])) if "T" in hz else Elliptic(float(hz["rho"]))
    return Problem(horizon=horizon, dim_x=d, mu=mu, sigma=sigma, f=f, g=g, K=K, Gamma=Gamma,
                   Z=Z, B=B, S=S, growth_p=float(dom.get("growth_p", 0.0)), ell=ell,
                   fixed_cost=k0 if k0 > 0 else None, static_payoff=True,
                   dim_z=levy.dim_z, name=raw.get("name", "problem")), levy


# ---------------------------------------------------------------------------
# QVIF binary grids


def write_qvif(path, array):
    a = np.asarray(array)
    dt = np.dtype(a.dtype).newbyteorder("<")
    if dt not in DTYPE_CODES:
        raise ValueError(f"unsupported dtype {a.dtype}")
    if a.ndim > QVIF_MAX_DIMS or a.ndim == 0:
        raise ValueError(f"QVIF holds 1..{QVIF_MAX_DIMS} dimensions, got {a.ndim}")
    payload = np.ascontiguousarray(a, dtype=dt).tobytes()
    dims = list(a.shape) + [0] * (QVIF_MAX_DIMS - a.ndim)
    header = _HEADER.pack(QVIF_MAGIC, QVIF_VERSION, a.ndim, DTYPE_CODES[dt], *dims,
                          zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_qvif(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ChecksumError(f"{path}: truncated header")
    magic, ver, ndim, code, *rest = _HEADER.unpack_from(blob)
    dims, crc = rest[:QVIF_MAX_DIMS], rest[QVIF_MAX_DIMS]
    if magic != QVIF_MAGIC:
        raise ChecksumError(f"{path}: bad magic {magic!r}")
    if ver != QVIF_VERSION or code not in DTYPES or not 1 <= ndim <= QVIF_MAX_DIMS:
        raise ChecksumError(f"{path}: unsupported header (version {ver}, dtype {code}, ndim {ndim})")
    shape = tuple(int(n) for n in dims[:ndim])
    dt = DTYPES[code]
    payload = blob[_HEADER.size:]
    if len(payload) != int(np.prod(shape)) * dt.itemsize:
        raise ChecksumError(f"{path}: payload has {len(payload)} bytes, header expects "
                            f"{int(np.prod(shape)) * dt.itemsize}")
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: crc32 mismatch")
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()


# ---------------------------------------------------------------------------
# run directories


@dataclass
class RunManifest:
    config_hash: str
    grid: dict
    solver: dict
    seeds: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # file name -> sha256
    timings: dict = field(default_factory=dict)
    kind: str = "parabolic"
    backend: str = BACKEND
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _grid_spec(grid):
    spec = grid.spec()
    spec["inside"] = grid.inside.astype(int).tolist()
    return spec


def grid_from_spec(spec):
    return Grid(spec["axes"], np.asarray(spec["inside"], dtype=bool), spec.get("times"))


def _fmt(v):
    return repr(float(v))


def _write_csv(path, grid, arrays, times, header_extra, fmt_row):
    d = grid.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + header_extra)
        for k, t in enumerate(times):
            tt = "" if t is None else _fmt(t)
            for i in range(grid.size):
                w.writerow([tt] + [_fmt(c) for c in grid.nodes[i]] + fmt_row(arrays[k], i))


def save_run(run_dir, solution, config_raw=None, seeds=None, timings=None, supersolution=None):
    """Persist a solved run; returns the manifest."""
    os.makedirs(run_dir, exist_ok=True)
    grid = solution.grid
    t0 = time.perf_counter()
    files = []
    if config_raw is not None:
        with open(os.path.join(run_dir, "config.toml"), "w") as fh:
            fh.write(tomli_w.dumps(config_raw))
        files.append("config.toml")
    values = solution.values_array()
    if solution.elliptic:
        values = values[None]
    write_qvif(os.path.join(run_dir, "value.qvif"), values)
    pol = np.stack([np.stack([p.region.astype(np.int64), p.beta_index.astype(np.int64),
                              p.zeta_index.astype(np.int64)]).reshape((3,) + grid.shape)
                    for p in solution.policies])
    write_qvif(os.path.join(run_dir, "policy.qvif"), pol)
    times = [None] if solution.elliptic else list(grid.times)
    _write_csv(os.path.join(run_dir, "value.csv"), grid, [f.values for f in solution.fields],
               times, ["value"], lambda a, i: [_fmt(a[i])])
    _write_csv(os.path.join(run_dir, "policy.csv"), grid, solution.policies, times,
               ["region", "beta_index", "zeta_index"],
               lambda p, i: [int(p.region[i]), int(p.beta_index[i]), int(p.zeta_index[i])])
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        json.dump(_jsonable(solution.report), fh, indent=2, sort_keys=True, allow_nan=True)
    files += ["value.qvif", "policy.qvif", "value.csv", "policy.csv", "report.json"]
    if supersolution is not None:
        sup = supersolution
        write_qvif(os.path.join(run_dir, "supersolution.qvif"), np.stack([f.values for f in sup.fields]).reshape(
            (len(sup.fields),) + grid.shape))
        write_qvif(os.path.join(run_dir, "margin.qvif"), np.stack(sup.margins).reshape(
            (len(sup.margins),) + grid.shape))
        with open(os.path.join(run_dir, "supersolution.json"), "w") as fh:
            json.dump(_jsonable({"params": sup.params, "kappa": sup.kappa,
                                 "min_margin": sup.min_margin, "certified": sup.certified,
                                 "tried": sup.tried, "descriptor": sup.descriptor}),
                      fh, indent=2, sort_keys=True)
        files += ["supersolution.qvif", "margin.qvif", "supersolution.json"]
    timings = dict(timings or {})
    timings["save_seconds"] = time.perf_counter() - t0
    opts = solution.opts or SolverOptions()
    manifest = RunManifest(
        config_hash=canonical_hash(config_raw) if config_raw is not None else "",
        grid=_grid_spec(grid), solver=opts.as_dict(), seeds=dict(seeds or {}),
        artifacts={name: _sha256(os.path.join(run_dir, name)) for name in files},
        timings=timings, kind="elliptic" if solution.elliptic else "parabolic",
        meta={"problem": solution.problem.name if solution.problem is not None else None})
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    return manifest


@dataclass
class RunArtifacts:
    run_dir: str
    manifest: RunManifest
    grid: Grid
    values: np.ndarray  # (levels, *shape)
    policy: np.ndarray  # (levels, 3, *shape)
    report: dict
    config: object = None  # Config when config.toml is present
    supersolution: dict = None  # params + fields + margins

    def solution(self, problem=None, levy=None, opts=None):
        """Rebuild a Solution object from the stored arrays."""
        if problem is None and self.config is not None:
            problem, levy = self.config.problem, self.config.levy
        if opts is None:
            opts = SolverOptions(**self.manifest.solver)
        grid = self.grid
        elliptic = grid.times is None
        times = [None] if elliptic else list(grid.times)
        fields, policies = [], []
        for k, t in enumerate(times):
            fields.append(ValueField(grid, self.values[k].ravel(), t))
            p = self.policy[k].reshape(3, grid.size)
            policies.append(Policy(p[0].astype(np.int8), p[1], p[2], t))
        return Solution(grid, fields, policies, self.report, problem, levy, opts)


REQUIRED = ("manifest.json", "value.qvif", "policy.qvif", "report.json")


def load_run(run_dir, verify_checksums=True):
    for name in REQUIRED:
        if not os.path.exists(os.path.join(run_dir, name)):
            raise FileNotFoundError(f"run directory {run_dir} is missing {name}")
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = RunManifest.from_json(fh.read())
    if verify_checksums:
        for name, digest in manifest.artifacts.items():
            path = os.path.join(run_dir, name)
            if not os.path.exists(path):
                raise ChecksumError(f"artifact {name} listed in the manifest is missing")
            if _sha256(path) != digest:
                raise ChecksumError(f"checksum mismatch for {name}")
    grid = grid_from_spec(manifest.grid)
    values = read_qvif(os.path.join(run_dir, "value.qvif"))
    policy = read_qvif(os.path.join(run_dir, "policy.qvif"))
    with open(os.path.join(run_dir, "report.json")) as fh:
        report = json.load(fh)
    config = None
    cpath = os.path.join(run_dir, "config.toml")
    if os.path.exists(cpath):
        config = load_config(cpath)
    sup = None
    spath = os.path.join(run_dir, "supersolution.json")
    if os.path.exists(spath):
        with open(spath) as fh:
            sup = json.load(fh)
        sup["values"] = read_qvif(os.path.join(run_dir, "supersolution.qvif"))
        sup["margins"] = read_qvif(os.path.join(run_dir, "margin.qvif"))
    return RunArtifacts(run_dir, manifest, grid, values, policy, report, config, sup)


def read_value_csv(path, grid):
    """Values from value.csv as (levels, *shape)."""
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            rows.append(float(row[-1]))
    a = np.asarray(rows)
    return a.reshape((-1,) + grid.shape)

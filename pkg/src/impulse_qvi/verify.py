"""Property harness over a persisted run.

Everything is recomputed from the run directory (value and policy grids,
manifest, config): residual certificates, the necessary conditions at
boundary rows, the algebra of the discrete intervention operator on the
stored fields, discrete comparison against a re-solved lower problem and,
when stored, the strict-supersolution margin and its perturbations.
"""
import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ChecksumError, MonotonicityError, ProblemError
from .grid import INTERVENE, STOPPED, growth_weight
from .impulse import ImpulseTable
from .io import load_run
from .scheme import assemble_all
from .solver import LevelOperator, SolverOptions, _static, solve
from .supersolution import Supersolution, perturbed_residuals


@dataclass
class PropertyResult:
    name: str
    passed: bool
    margin: float
    tol: float
    detail: str = ""

    def __post_init__(self):
        # numpy scalars would not serialize
        self.passed = bool(self.passed)
        self.margin = float(self.margin)
        self.tol = float(self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: margin {self.margin:+.3e} tol {self.tol:g}{extra}"


@dataclass
class Report:
    run_dir: str
    results: list

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def lines(self):
        return [r.line() for r in self.results]

    def to_json(self):
        return json.dumps({"run_dir": self.run_dir, "passed": self.passed,
                           "results": [dataclasses.asdict(r) for r in self.results]},
                          indent=2, allow_nan=True)


class _Levels:
    """Level operators of a run, assembled once when nothing depends on t."""

    def __init__(self, solution):
        self.sol = solution
        self.problem = solution.problem
        self.levy = solution.levy
        self.grid = solution.grid
        self.opts = solution.opts or SolverOptions()
        self._cache = {}

    def parts(self, t):
        key = "all" if _static(self.problem) else float(t)
        if key not in self._cache:
            self._cache[key] = (assemble_all(self.problem, self.levy, self.grid, t, self.opts.drift_mode),
                                ImpulseTable(self.grid, self.problem, t))
        return self._cache[key]

    def op(self, k):
        g = self.grid
        if self.sol.elliptic:
            ops, table = self.parts(0.0)
            return LevelOperator(self.problem, self.levy, g, 0.0, self.problem.rho, self.opts,
                                 ops, table), np.zeros(g.size)
        t = g.times[k]
        ops, table = self.parts(t)
        lam = 1.0 / (g.times[k + 1] - t)
        return (LevelOperator(self.problem, self.levy, g, t, lam, self.opts, ops, table),
                self.sol.fields[k + 1].values * lam)

    def table(self, k):
        t = 0.0 if self.sol.elliptic else self.grid.times[k]
        return self.parts(t)[1]

    @property
    def n_pde_levels(self):
        return 1 if self.sol.elliptic else len(self.grid.times) - 1


def _worst(values):
    return float(np.max(values)) if len(values) else 0.0


def run_suite(run_dir, problem=None, levy=None, opts=None, with_supersolution=False,
              comparison=True, tol=1e-8, comparison_tol=1e-9, seed=0, n_algebra=20):
    """Recompute every property from the artifacts in ``run_dir``."""
    run_dir = str(run_dir)
    results = []
    try:
        art = load_run(run_dir)
    except ChecksumError as exc:
        return Report(run_dir, [PropertyResult("artifact checksums", False, np.inf, 0.0, str(exc))])
    results.append(PropertyResult("artifact checksums", True, 0.0, 0.0,
                                  f"{len(art.manifest.artifacts)} files"))
    sol = art.solution(problem, levy, opts)
    if sol.problem is None:
        raise ProblemError("run has no config.toml; pass the problem explicitly")
    grid, prob = sol.grid, sol.problem
    levels = _Levels(sol)
    inside = grid.inside

    # monotone scheme certificate
    try:
        mins = []
        for k in range(levels.n_pde_levels):
            for op in levels.op(k)[0].ops:
                off = op.A.copy()
                off.setdiag(0.0)
                mins.append(off.data.min() if off.nnz else 0.0)
        results.append(PropertyResult("monotone scheme (off-diagonals >= 0)", min(mins) >= 0,
                                      float(min(mins)), 0.0))
    except MonotonicityError as exc:
        results.append(PropertyResult("monotone scheme (off-diagonals >= 0)", False, -np.inf, 0.0,
                                      str(exc)))

    # residual certificates, v >= Mv, boundary conditions, policy labels
    res_in, res_out, gap_neg, stop_neg, lab_imp, lab_stop = [], [], [], [], [], []
    for k in range(levels.n_pde_levels):
        op, extra = levels.op(k)
        u = sol.fields[k].values
        res, parts = op.residual(u, extra)
        res_in.append(np.abs(res[inside]).max(initial=0.0))
        res_out.append(np.abs(res[~inside]).max(initial=0.0))
        gap_neg.append(np.max(-parts["gap"], initial=-np.inf))
        stop_neg.append(np.max(-parts["stop"][~inside], initial=-np.inf))
        pol = sol.policies[k]
        lab_imp.append(np.abs(parts["gap"][pol.region == INTERVENE]).max(initial=0.0))
        lab_stop.append(np.abs(parts["stop"][pol.region == STOPPED]).max(initial=0.0))
    if not sol.elliptic:
        T = grid.times[-1]
        u = sol.fields[-1].values
        Mu, _ = levels.table(len(grid.times) - 1).apply(u)
        gT = np.asarray(prob.g(T, grid.nodes), dtype=float)
        term = np.minimum(u - gT, u - Mu)
        res_out.append(np.abs(term).max())
        gap_neg.append(np.max(Mu - u))
        stop_neg.append(np.max(gT - u))
        pol = sol.policies[-1]
        lab_imp.append(np.abs((u - Mu)[pol.region == INTERVENE]).max(initial=0.0))
        lab_stop.append(np.abs((u - gT)[pol.region == STOPPED]).max(initial=0.0))
    r = _worst(res_in)
    results.append(PropertyResult("QVI residual inside S", r <= tol, tol - r, tol, f"max {r:.3e}"))
    r = _worst(res_out)
    results.append(PropertyResult("QVI residual outside S / at T", r <= tol, tol - r, tol,
                                  f"max {r:.3e}"))
    r = _worst(gap_neg)
    results.append(PropertyResult("v >= Mv", r <= tol, -r, tol))
    r = _worst(stop_neg) if stop_neg else -np.inf
    results.append(PropertyResult("boundary rows: v >= g outside S", r <= tol,
                                  -r if np.isfinite(r) else 0.0, tol))
    r = max(_worst(lab_imp), _worst(lab_stop))
    results.append(PropertyResult("policy labels (v = Mv on intervention, v = g on stopped)",
                                  r <= tol, tol - r, tol))

    # growth class
    p = prob.growth_p
    C = max(float(np.max(np.abs(f.values) / growth_weight(grid.nodes, p))) for f in sol.fields)
    Crep = art.report.get("growth_constant")
    ok = Crep is None or C <= Crep * (1 + 1e-12) + 1e-300
    results.append(PropertyResult(f"growth |v| <= C (1 + |x|^{p:g})", ok,
                                  (Crep - C) if Crep is not None else 0.0, 1e-12,
                                  f"C = {C:.4g}"))

    results += _algebra(sol, levels, seed, n_algebra)

    if comparison:
        results.append(_comparison(sol, seed, comparison_tol))

    if with_supersolution:
        results += _supersolution_checks(art, sol, levels, tol)
    return Report(run_dir, results)


def _algebra(sol, levels, seed, n_pairs):
    """M properties on the stored fields plus seeded perturbations."""
    rng = np.random.default_rng(seed)
    ks = sorted({0, len(sol.fields) // 2, len(sol.fields) - 1})
    worst = {"M monotone": -np.inf, "M convex": -np.inf, "M anticonvex": -np.inf,
             "M translation invariant": 0.0, "M adjacent-node modulus": -np.inf}
    # rounding scales with the operands, including large penalty costs
    mag = 1.0
    for k in ks:
        table = levels.table(k)
        u = sol.fields[k].values
        scale = 1.0 + np.max(np.abs(u))
        for _ in range(n_pairs):
            b = u + scale * rng.standard_normal(u.shape)
            Mu, _ = table.apply(u)
            Mb, _ = table.apply(b)
            up = u + scale * np.abs(rng.standard_normal(u.shape))
            Mup, _ = table.apply(up)
            mag = max(mag, _finite_max(np.abs(Mb)), _finite_max(np.abs(b)), _finite_max(np.abs(up)))
            worst["M monotone"] = max(worst["M monotone"], _finite_max(Mu - Mup))
            lam = rng.uniform()
            Mmix, _ = table.apply(lam * u + (1 - lam) * b)
            worst["M convex"] = max(worst["M convex"], _finite_max(Mmix - (lam * Mu + (1 - lam) * Mb)))
            lam = rng.uniform(0, 2)
            Manti, _ = table.apply(-lam * u + (1 + lam) * b)
            worst["M anticonvex"] = max(worst["M anticonvex"],
                                        _finite_max((-lam * Mu + (1 + lam) * Mb) - Manti))
            c = scale * rng.standard_normal()
            Mc, _ = table.apply(u + c)
            worst["M translation invariant"] = max(worst["M translation invariant"],
                                                   _finite_max(np.abs(Mc - (Mu + c))))
        worst["M adjacent-node modulus"] = max(worst["M adjacent-node modulus"],
                                               _modulus_excess(table, u, sol.grid))
    out = []
    tol = 1e-12 * 4 * mag
    for name, v in worst.items():
        out.append(PropertyResult(name, v <= tol, -v, tol))
    return out


def _finite_max(a):
    a = a[np.isfinite(a)]
    return float(a.max()) if a.size else -np.inf


def _modulus_excess(table, u, grid):
    """|Mu_i - Mu_j| - max_c |V_ic - V_jc| over adjacent nodes with matching candidates."""
    V = np.sum(table.w * u[table.idx], axis=2) + table.add
    V = np.where(table.valid, V, -np.inf)
    Mu = V.max(axis=1)
    worst = -np.inf
    mi = grid.multi_index()
    for k in range(grid.dim):
        i = np.flatnonzero(mi[:, k] < grid.shape[k] - 1)
        j = i + grid.strides[k]
        same = np.all(table.valid[i] == table.valid[j], axis=1) & np.isfinite(Mu[i]) & np.isfinite(Mu[j])
        i, j = i[same], j[same]
        if not len(i):
            continue
        diff = np.where(table.valid[i], np.abs(V[i] - V[j]), 0.0).max(axis=1)
        worst = max(worst, float(np.max(np.abs(Mu[i] - Mu[j]) - diff)))
    return worst


def _comparison(sol, seed, tol):
    """Lower the payoffs by a seeded nonnegative bump and re-solve."""
    prob = sol.problem
    rng = np.random.default_rng(seed + 1)
    d = prob.dim_x
    freq = rng.normal(size=d)
    amp = rng.uniform(0.1, 1.0)
    phase = rng.uniform(0, 2 * np.pi)

    def bump(x):
        return amp * (1.0 + np.sin(x @ freq + phase))

    f0, g0 = prob.f, prob.g
    lower = dataclasses.replace(prob, f=lambda t, x, b: f0(t, x, b) - bump(x),
                                g=lambda t, x: g0(t, x) - bump(x), name=prob.name + "-lowered")
    low = solve(lower, sol.levy, sol.grid, sol.opts)
    viol = max(float(np.max(a.values - b.values)) for a, b in zip(low.fields, sol.fields))
    return PropertyResult("discrete comparison (lowered f, g => v1 <= v)", viol <= tol, -viol, tol)


def _supersolution_checks(art, sol, levels, tol):
    if art.supersolution is None:
        return [PropertyResult("strict supersolution stored", False, -np.inf, 0.0,
                               "run has no supersolution artifacts")]
    info = art.supersolution
    grid = sol.grid
    kappa = float(info["kappa"])
    W = info["values"].reshape(len(info["values"]), grid.size)
    margins = []
    for k in range(levels.n_pde_levels):
        op, _ = levels.op(k)
        extra = np.zeros(grid.size) if sol.elliptic else W[k + 1] * op.lam
        res, _ = op.residual(W[k], extra)
        margins.append(res)
    if not sol.elliptic:
        T = grid.times[-1]
        Mw, _ = levels.table(len(grid.times) - 1).apply(W[-1])
        gT = np.asarray(sol.problem.g(T, grid.nodes), dtype=float)
        margins.append(np.minimum(W[-1] - gT, W[-1] - Mw))
    mmin = float(min(m.min() for m in margins))
    out = [PropertyResult(f"strict supersolution margin >= kappa = {kappa:g}", mmin >= kappa - tol,
                          mmin - kappa, tol)]
    from .grid import ValueField
    times = [None] if sol.elliptic else list(grid.times)
    sup = Supersolution(info["params"], kappa, [ValueField(grid, W[k], t) for k, t in enumerate(times)],
                        margins, mmin, mmin >= kappa)
    for c in perturbed_residuals(sol, sup, tol=tol):
        out.append(PropertyResult(f"perturbed v_m residual >= kappa/m (m={c.m})", c.passed,
                                  c.min_shifted, tol))
    return out

"""Simulation of the impulse-controlled jump diffusion and statistical checks.

Paths advance by Euler-Maruyama with one compound jump increment per
step. At every step time the strategy is consulted before anything
else: impulses are applied (possibly several in a row), then the
post-impulse state is tested for exit from S, then running profit is
accrued over the step. Draws come from a keyed counter-based generator
addressed by (seed, path, step, block), so each path sees the same
numbers under any batching or thread count.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .exceptions import ProblemError, QVIError
from .grid import INTERVENE
from .levy import JumpSampler
from .rng import uniform_pairs

MAX_CHAIN = 64
EXPLOSION_FACTOR = 1e3
JUMP_BLOCK0 = 1024
MIN_PATHS = 100
MAX_ABORTED = 0.01


# ---------------------------------------------------------------------------
# strategies


class GridPolicy:
    """Markov policy read off a solved run.

    Region and control come from the nearest lattice node at the nearest
    time level; when the region says intervene, the impulse maximizing
    u(Gamma) + K over the candidates at the actual state is applied.
    """

    def __init__(self, solution):
        self.solution = solution
        self.problem = solution.problem
        self.grid = solution.grid

    def level(self, t):
        times = self.grid.times
        if times is None:
            return 0
        return int(np.argmin(np.abs(times - t)))

    def decide(self, t, X, fired=None):
        k = self.level(t)
        pol = self.solution.policies[k]
        node = self.grid.nearest(X)
        beta = self.problem.B[pol.beta_index[node]]
        intervene = pol.region[node] == INTERVENE
        zeta = None
        if intervene.any():
            zeta = self.best_impulse(k, t, X[intervene])
        return beta, intervene, zeta

    def best_impulse(self, k, t, X):
        p = self.problem
        field_ = self.solution.fields[k]
        zs, valid = p.candidates_batch(t, X)
        n, C, dz = zs.shape
        xr = np.repeat(X, C, axis=0)
        zf = zs.reshape(n * C, dz)
        tgt = np.asarray(p.Gamma(t, xr, zf), dtype=float).reshape(n * C, -1)
        val = field_.evaluate(tgt, p, t) + np.asarray(p.K(t, xr, zf), dtype=float)
        val = np.where(valid.ravel(), val, -np.inf).reshape(n, C)
        return zs[np.arange(n), np.argmax(val, axis=1)]


class FixedStrategy:
    """Constant control row, impulses from an optional callback.

    ``impulse(t, X, fired)`` returns ``(mask, zeta)`` with one zeta row per
    masked state; ``fired`` flags rows that already jumped at this instant.
    """

    def __init__(self, problem, beta_index=0, impulse=None):
        self.problem = problem
        self.beta_index = beta_index
        self.impulse = impulse

    def decide(self, t, X, fired=None):
        beta = np.repeat(self.problem.B[self.beta_index][None, :], len(X), axis=0)
        if self.impulse is None:
            return beta, np.zeros(len(X), dtype=bool), None
        mask, zeta = self.impulse(t, X, fired)
        return beta, np.asarray(mask, dtype=bool), zeta


def jump_at_start(problem, t0, zeta, beta_index=0):
    """One impulse ``zeta`` at time t0, none afterwards."""
    z = np.atleast_1d(np.asarray(zeta, dtype=float))

    def impulse(t, X, fired):
        mask = np.zeros(len(X), dtype=bool) if t != t0 else ~fired
        return mask, np.repeat(z[None, :], int(mask.sum()), axis=0)

    return FixedStrategy(problem, beta_index, impulse)


# ---------------------------------------------------------------------------
# stopping rules for the DPP check


@dataclass
class FixedTime:
    t: float

    def hit(self, t, X, x0):
        return np.full(len(X), t >= self.t - 1e-12)


@dataclass
class BoxExit:
    half_width: float

    def hit(self, t, X, x0):
        return np.any(np.abs(X - x0) >= self.half_width, axis=1)


def parse_stop_rule(text):
    kind, _, val = text.partition(":")
    if kind == "time":
        return FixedTime(float(val))
    if kind == "box":
        return BoxExit(float(val))
    raise ProblemError(f"unknown stop rule {text!r} (use time:t or box:w)")


# ---------------------------------------------------------------------------
# path records


@dataclass
class PathRecord:
    times: np.ndarray
    states: np.ndarray
    events: list  # (tau, pre_state, zeta, post_state, cost)
    exit_time: float
    exit_state: np.ndarray
    running: float
    terminal: float
    costs: float
    aborted: bool = False
    stopped_by_rule: bool = False

    @property
    def payoff(self):
        return self.running + self.terminal + self.costs


@dataclass
class BatchResult:
    payoff: np.ndarray
    running: np.ndarray
    terminal: np.ndarray
    costs: np.ndarray
    n_impulses: np.ndarray
    aborted: np.ndarray
    exit_time: np.ndarray
    exit_state: np.ndarray
    records: Optional[list] = None


def _step_times(t0, T, dt):
    n = max(1, int(math.ceil((T - t0) / dt - 1e-9)))
    times = t0 + dt * np.arange(n + 1)
    times[-1] = T
    return times


def simulate_batch(problem, levy, strategy, t0, x0, dt, seed, path_ids,
                   record=False, stop_rule=None, value_fn=None):
    """Simulate the given path indices; returns a BatchResult."""
    if not problem.parabolic:
        raise ProblemError("simulation needs a finite horizon; lift elliptic problems with to_parabolic")
    if not dt > 0:
        raise ProblemError("dt must be positive")
    path_ids = np.asarray(path_ids, dtype=np.uint64)
    n = len(path_ids)
    d = problem.dim_x
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    X = np.repeat(x0[None, :], n, axis=0)
    times = _step_times(t0, problem.T, dt)
    active = np.ones(n, dtype=bool)
    running = np.zeros(n)
    terminal = np.zeros(n)
    costs = np.zeros(n)
    n_imp = np.zeros(n, dtype=np.int64)
    aborted = np.zeros(n, dtype=bool)
    exit_time = np.full(n, problem.T)
    exit_state = X.copy()
    guard = EXPLOSION_FACTOR * max(problem.S.diagonal, 1.0)
    sampler = JumpSampler(levy) if levy is not None and not levy.is_zero and problem.ell is not None else None
    recs = None
    if record:
        recs = [{"times": [], "states": [], "events": []} for _ in range(n)]

    for k, t in enumerate(times):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        fired = np.zeros(n, dtype=bool)
        # impulses, possibly chained at the same instant
        for chain in range(MAX_CHAIN + 1):
            beta, mask, zeta = strategy.decide(t, X[idx], fired[idx])
            if not mask.any():
                break
            sel = idx[mask]
            if chain == MAX_CHAIN:
                aborted[sel] = True
                active[sel] = False
                idx = np.flatnonzero(active)
                beta = beta[~mask]
                break
            pre = X[sel]
            post = np.asarray(problem.Gamma(t, pre, zeta), dtype=float).reshape(len(sel), d)
            cost = np.asarray(problem.K(t, pre, zeta), dtype=float).reshape(len(sel))
            costs[sel] += cost
            n_imp[sel] += 1
            X[sel] = post
            fired[sel] = True
            if record:
                for j, i in enumerate(sel):
                    recs[i]["events"].append((float(t), pre[j].copy(), np.array(zeta[j]),
                                              post[j].copy(), float(cost[j])))
        if idx.size == 0:
            break
        if record:
            for i in idx:
                recs[i]["times"].append(float(t))
                recs[i]["states"].append(X[i].copy())
        Xa = X[idx]
        last = k == len(times) - 1
        # exit from S is judged on the post-impulse state
        out = ~np.asarray(problem.S.inside(Xa), dtype=bool)
        done = out.copy()
        if out.any():
            sel = idx[out]
            terminal[sel] = problem.g(t, X[sel])
        if stop_rule is not None:
            hit = ~out & (stop_rule.hit(t, Xa, x0) | last)
            if hit.any():
                sel = idx[hit]
                terminal[sel] = value_fn(t, X[sel])
                done |= hit
        elif last:
            sel = idx[~out]
            terminal[sel] = problem.g(t, X[sel])
            done[:] = True
        if done.any():
            sel = idx[done]
            exit_time[sel] = t
            exit_state[sel] = X[sel]
            active[sel] = False
        if last:
            break
        keep = ~done
        idx = idx[keep]
        if idx.size == 0:
            break
        Xa = Xa[keep]
        ba = beta[keep]
        h = times[k + 1] - t
        running[idx] += h * np.asarray(problem.f(t, Xa, ba), dtype=float)
        X[idx] = Xa + _euler_increment(problem, sampler, t, Xa, ba, h, seed, path_ids[idx], k)
        Xn = X[idx]
        blown = ~np.all(np.isfinite(Xn), axis=1)
        blown |= np.linalg.norm(np.where(np.isfinite(Xn), Xn, 0.0), axis=1) > guard
        if blown.any():
            sel = idx[blown]
            aborted[sel] = True
            active[sel] = False
            exit_time[sel] = times[k + 1]
            exit_state[sel] = X[sel]

    payoff = running + terminal + costs
    records = None
    if record:
        records = []
        for i in range(n):
            r = recs[i]
            records.append(PathRecord(np.array(r["times"]), np.array(r["states"]).reshape(-1, d),
                                      r["events"], float(exit_time[i]), exit_state[i].copy(),
                                      float(running[i]), float(terminal[i]), float(costs[i]),
                                      bool(aborted[i])))
    return BatchResult(payoff, running, terminal, costs, n_imp, aborted, exit_time, exit_state, records)


def _euler_increment(problem, sampler, t, X, beta, h, seed, paths, step):
    n, d = X.shape
    mu = np.asarray(problem.mu(t, X, beta), dtype=float).reshape(n, d)
    sig = np.asarray(problem.sigma(t, X, beta), dtype=float).reshape(n, d, -1)
    m = sig.shape[2]
    dW = np.empty((n, m))
    for b in range(0, m, 2):
        u = uniform_pairs(seed, paths, step, b // 2)
        dW[:, b] = ndtri(u[:, 0])
        if b + 1 < m:
            dW[:, b + 1] = ndtri(u[:, 1])
    inc = mu * h + math.sqrt(h) * np.einsum("nij,nj->ni", sig, dW)
    if sampler is not None:
        inc += sampler.increment(problem, t, X, beta, h,
                                 lambda block, rows: uniform_pairs(seed, paths if rows is None else paths[rows],
                                                                   step, JUMP_BLOCK0 + block))
    return inc


# ---------------------------------------------------------------------------
# estimators


def _chunks(n_paths, workers):
    workers = max(1, int(workers))
    bounds = np.linspace(0, n_paths, workers + 1).astype(np.int64)
    return [np.arange(a, b, dtype=np.uint64) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def simulate_many(problem, levy, strategy, t0, x0, n_paths, dt, seed, workers=1,
                  stop_rule=None, value_fn=None, chunk=20000):
    """Simulate paths 0..n_paths-1, split over threads, merged in path order."""
    pieces = []
    for block in _chunks(n_paths, max(workers, int(math.ceil(n_paths / chunk)))):
        pieces.append(block)

    def run(ids):
        return simulate_batch(problem, levy, strategy, t0, x0, dt, seed, ids,
                              stop_rule=stop_rule, value_fn=value_fn)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pieces))
    else:
        results = [run(ids) for ids in pieces]
    cat = {}
    for name in ("payoff", "running", "terminal", "costs", "n_impulses", "aborted", "exit_time"):
        cat[name] = np.concatenate([getattr(r, name) for r in results])
    cat["exit_state"] = np.concatenate([r.exit_state for r in results])
    return BatchResult(**cat)


@dataclass
class Estimate:
    mean: float
    se: float
    n_paths: int
    aborted_fraction: float
    mean_impulses: float
    parts: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.mean, self.se))


def summarize(res):
    ok = ~res.aborted
    frac = float(np.mean(res.aborted))
    if frac > MAX_ABORTED:
        raise QVIError(f"{100 * frac:.2f}% of paths aborted (explosion or impulse chain cap)")
    x = res.payoff[ok]
    n = len(x)
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    parts = {k: float(np.mean(getattr(res, k)[ok])) for k in ("running", "terminal", "costs")}
    return Estimate(mean, se, n, frac, float(np.mean(res.n_impulses[ok])), parts)


def estimate_value(problem, levy, policy, t0, x0, n_paths, dt, seed, workers=1):
    """Mean payoff and standard error under ``policy`` (a strategy or a solved run)."""
    if n_paths < MIN_PATHS:
        raise ProblemError(f"need at least {MIN_PATHS} paths")
    strategy = _as_strategy(policy)
    res = simulate_many(problem, levy, strategy, t0, x0, n_paths, dt, seed, workers)
    return summarize(res)


def _as_strategy(policy):
    if hasattr(policy, "decide"):
        return policy
    if hasattr(policy, "policies"):
        return GridPolicy(policy)
    raise ProblemError("policy must be a strategy or a solved run")


@dataclass
class DPPReport:
    estimate: float
    value: float
    residual: float
    se: float
    allowance: float
    passed: bool
    stop_rule: str
    n_paths: int

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} DPP [{self.stop_rule}] residual {self.residual:+.3e} "
                f"bound {3 * self.se + self.allowance:.3e} (3 SE {3 * self.se:.3e} + allowance "
                f"{self.allowance:.3e})")


def check_dpp(problem, levy, solution, t0, x0, stop_rule, n_paths, dt, seed,
              allowance=0.0, policy=None, workers=1):
    """E[int f + sum K + v(tau, X_tau)] versus v(t0, x0) for a bounded stopping rule."""
    if n_paths < MIN_PATHS:
        raise ProblemError(f"need at least {MIN_PATHS} paths")
    strategy = _as_strategy(policy if policy is not None else solution)
    if isinstance(stop_rule, str):
        stop_rule = parse_stop_rule(stop_rule)

    def value_fn(t, X):
        return solution.evaluate(t, X)

    res = simulate_many(problem, levy, strategy, t0, x0, n_paths, dt, seed, workers,
                        stop_rule=stop_rule, value_fn=value_fn)
    est = summarize(res)
    v0 = float(solution.evaluate(t0, np.atleast_2d(x0))[0])
    resid = est.mean - v0
    # summation roundoff floor so identical payoffs with zero allowance still pass
    bound = 3 * est.se + allowance + 64 * np.finfo(float).eps * max(1.0, abs(v0))
    name = (f"time:{stop_rule.t:g}" if isinstance(stop_rule, FixedTime)
            else f"box:{stop_rule.half_width:g}")
    return DPPReport(est.mean, v0, resid, est.se, allowance, abs(resid) <= bound, name, est.n_paths)


def simulate_path(problem, levy, strategy, t0, x0, dt, seed, path=0):
    """One recorded path."""
    res = simulate_batch(problem, levy, _as_strategy(strategy), t0, x0, dt, seed,
                         np.array([path], dtype=np.uint64), record=True)
    return res.records[0]


def allowance(C, dt, h):
    """Discretization allowance C (sqrt(dt) + h)."""
    return C * (math.sqrt(dt) + h)


@dataclass
class CalibrationRow:
    toy: str
    x: float
    exact: float
    solver: float
    mc: float
    se: float
    dt: float
    h: float

    @property
    def ratio(self):
        mc_excess = max(abs(self.mc - self.exact) - 3 * self.se, 0.0)
        return max(abs(self.solver - self.exact), mc_excess) / (math.sqrt(self.dt) + self.h)


def calibrate_allowance(n_paths=20000, seed=0, safety=2.0, workers=1):
    """Calibrate C in the allowance C (sqrt(dt) + h) on closed-form toys.

    Uses the frozen, heat and constant-elliptic (lifted to a long horizon)
    toys: C is ``safety`` times the largest observed error of either the
    solver or the simulation (beyond 3 SE) per unit of sqrt(dt) + h.
    Returns ``(C, rows)``.
    """
    from . import toys
    from .grid import Grid
    from .problem import to_parabolic
    from .solver import solve

    rows = []
    cases = []
    p, lv = toys.frozen()
    cases.append(("frozen", p, lv, 21, 20, lambda x: p.T, (-0.5, 0.0, 0.5)))
    p2, lv2 = toys.heat(L=5.0)
    cases.append(("heat", p2, lv2, 201, 50, lambda x: float(toys.heat_exact(0.0, x)), (-0.5, 0.0, 0.5)))
    pe, lve = toys.constant_elliptic()
    T = 20.0
    pl = to_parabolic(pe, T)
    cases.append(("constant-elliptic", pl, lve, 41, 400,
                  lambda x: (1.0 - math.exp(-pe.rho * T)) / pe.rho, (0.0,)))
    for name, prob, levy, nodes, steps, exact, probes in cases:
        grid = Grid.build(prob, (nodes,), steps)
        sol = solve(prob, levy, grid)
        dt = prob.T / steps
        h = float(np.max(grid.h))
        for x in probes:
            est = estimate_value(prob, levy, FixedStrategy(prob), 0.0, [x], n_paths, dt, seed, workers)
            v = float(sol.evaluate(0.0, np.array([[x]]))[0])
            rows.append(CalibrationRow(name, x, exact(x), v, est.mean, est.se, dt, h))
    C = safety * max(r.ratio for r in rows)
    return C, rows

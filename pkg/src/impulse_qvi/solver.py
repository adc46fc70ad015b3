"""Backward time stepping and policy iteration for the discrete QVI.

At one level the discrete system is, nodewise,

    inside S:   min( lam*u - e - max_b (A_b u + c_b + f_b),  u - Mu ) = 0
    outside S:  min( u - g,  u - Mu ) = 0

with lam = 1/dt and e = u_next/dt for a parabolic step, and lam = rho,
e = 0 for the stationary problem. Each row picks one of: a control b
(continuation), an impulse candidate (intervention) or stopping, so the
system is a Bellman equation min_a (B_a u - r_a) = 0 solved by Howard's
policy iteration with an exact sparse solve per policy.
"""
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConvergenceError, ProblemError
from .grid import CONTINUE, INTERVENE, STOPPED, Grid, Policy, ValueField
from .impulse import ImpulseTable, iterate_M_terminal
from .scheme import assemble_all, kappa_tilde

INTERVENE_CHOICE = -1
STOP_CHOICE = -2


@dataclass
class SolverOptions:
    tol: float = 1e-9
    max_iter: int = 200
    max_outer: int = 20000
    drift_mode: str = "hybrid"
    # "howard": impulse rows inside the policy iteration (exact fixed point);
    # "lagged": obstacle Mu frozen from the previous outer iterate
    method: str = "howard"
    terminal_max_iter: int = 10000

    def as_dict(self):
        return dict(self.__dict__)


class LevelOperator:
    """Everything needed to evaluate and solve the discrete system at one level."""

    def __init__(self, problem, levy, grid, t, lam, opts, ops=None, table=None):
        self.problem, self.levy, self.grid, self.t = problem, levy, grid, t
        self.lam = float(lam)
        self.opts = opts
        self.ops = ops if ops is not None else assemble_all(problem, levy, grid, t, opts.drift_mode)
        self.table = table if table is not None else ImpulseTable(grid, problem, t)
        self.inside = grid.inside
        self.g = np.asarray(problem.g(t, grid.nodes), dtype=float).reshape(grid.size)
        n = grid.size
        eye = sp.identity(n, format="csr")
        self._L = [(self.lam * eye - op.A).tocsr() for op in self.ops]

    # -- residuals -----------------------------------------------------------

    def pde_residuals(self, u, extra):
        """(n_beta, n) array lam*u - extra - (A_b u + c_b + f_b)."""
        return np.stack([L @ u - extra - op.c - op.f for L, op in zip(self._L, self.ops)])

    def residual(self, u, extra):
        """Nodewise min-system residual and its parts."""
        R = self.pde_residuals(u, extra)
        best_b = np.argmin(R, axis=0)
        pde = R[best_b, np.arange(len(u))]
        Mu, arg = self.table.apply(u)
        gap = u - Mu
        stop = u - self.g
        res = np.where(self.inside, np.minimum(pde, gap), np.minimum(stop, gap))
        return res, {"pde": pde, "beta": best_b, "Mu": Mu, "zeta": arg, "gap": gap, "stop": stop}

    # -- linear solve for a fixed policy --------------------------------------

    def _system(self, choice, zeta, extra, obstacle=None):
        n = self.grid.size
        rows_all = np.arange(n)
        blocks = []
        rhs = np.zeros(n)
        for b, (L, op) in enumerate(zip(self._L, self.ops)):
            sel = choice == b
            if sel.any():
                D = sp.diags(sel.astype(float))
                blocks.append(D @ L)
                rhs[sel] = (extra + op.c + op.f)[sel]
        stop = choice == STOP_CHOICE
        imp = choice == INTERVENE_CHOICE
        diag = (stop | imp).astype(float)
        blocks.append(sp.diags(diag))
        rhs[stop] = self.g[stop]
        if imp.any():
            nodes = rows_all[imp]
            if obstacle is not None:
                rhs[imp] = obstacle[imp]
            else:
                r, c, w, add = self.table.rows(nodes, zeta[imp])
                blocks.append(sp.coo_matrix((-w, (r, c)), shape=(n, n)).tocsr())
                rhs[imp] = add
        Msys = blocks[0]
        for blk in blocks[1:]:
            Msys = Msys + blk
        return Msys.tocsc(), rhs

    def _solve(self, choice, zeta, extra, obstacle=None):
        Msys, rhs = self._system(choice, zeta, extra, obstacle)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            try:
                u = spla.splu(Msys).solve(rhs)
            except (RuntimeError, Warning):
                return None
        if not np.all(np.isfinite(u)):
            return None
        return u

    # -- policy iteration -------------------------------------------------------

    def _improve(self, u, extra, choice, zeta, obstacle=None):
        """Howard improvement; keeps the current row when it is (near-)optimal."""
        n = len(u)
        R = self.pde_residuals(u, extra)
        if obstacle is None:
            Mu, arg = self.table.apply(u)
        else:
            Mu, arg = obstacle, zeta
        cand = np.full((R.shape[0] + 2, n), np.inf)
        cand[: R.shape[0]] = np.where(self.inside, R, np.inf)
        cand[R.shape[0]] = np.where(np.isfinite(Mu), u - Mu, np.inf)
        cand[R.shape[0] + 1] = np.where(self.inside, np.inf, u - self.g)
        code = np.concatenate([np.arange(R.shape[0]), [INTERVENE_CHOICE, STOP_CHOICE]])
        k = np.argmin(cand, axis=0)
        best = cand[k, np.arange(n)]
        cur_k = np.where(choice >= 0, choice,
                         np.where(choice == INTERVENE_CHOICE, R.shape[0], R.shape[0] + 1))
        cur = cand[cur_k, np.arange(n)]
        if obstacle is None:
            # the current impulse row may use a non-maximizing candidate
            Wu = self._impulse_values(u, zeta)
            cur = np.where(choice == INTERVENE_CHOICE, u - Wu, cur)
        eps = 1e-13 * (1.0 + self.lam * np.max(np.abs(u)) + np.max(np.abs(extra), initial=0.0))
        keep = cur <= best + eps
        new_choice = np.where(keep, choice, code[k])
        new_zeta = np.where(keep & (choice == INTERVENE_CHOICE), zeta, arg)
        return new_choice, new_zeta

    def _impulse_values(self, u, zeta):
        n = len(u)
        z = np.clip(zeta, 0, None)
        idx = self.table.idx[np.arange(n), z]
        w = self.table.w[np.arange(n), z]
        return np.sum(w * u[idx], axis=1) + self.table.add[np.arange(n), z]

    def initial_policy(self, guess, extra):
        R = self.pde_residuals(guess, extra)
        choice = np.where(self.inside, np.argmin(R, axis=0), STOP_CHOICE)
        return choice.astype(np.int64), np.zeros(len(guess), dtype=np.int64)

    def howard(self, extra, choice, zeta, obstacle=None):
        history = []
        u = None
        for it in range(1, self.opts.max_iter + 1):
            u_new = self._solve(choice, zeta, extra, obstacle)
            if u_new is None:
                return None, choice, zeta, history, it
            if u is not None:
                history.append(float(np.max(np.abs(u_new - u))))
            u = u_new
            new_choice, new_zeta = self._improve(u, extra, choice, zeta, obstacle)
            if np.array_equal(new_choice, choice) and np.array_equal(
                    np.where(choice == INTERVENE_CHOICE, new_zeta, 0),
                    np.where(choice == INTERVENE_CHOICE, zeta, 0)):
                return u, choice, zeta, history, it
            choice, zeta = new_choice, new_zeta
        res, _ = self.residual(u, extra)
        raise ConvergenceError(
            f"policy iteration did not converge in {self.opts.max_iter} iterations "
            f"(residual {np.max(np.abs(res)):.3e})", residual=float(np.max(np.abs(res))),
            history=history)

    def lagged(self, extra, choice, guess):
        """Outer loop on the obstacle psi = Mu of the previous iterate."""
        u = guess.copy()
        history = []
        inner_total = 0
        zeta = np.zeros(len(u), dtype=np.int64)
        for outer in range(1, self.opts.max_outer + 1):
            psi, arg = self.table.apply(u)
            psi = np.where(np.isfinite(psi), psi, -1e300)
            ch = np.where(choice == INTERVENE_CHOICE, INTERVENE_CHOICE, choice)
            u_new, choice, _, _, its = self.howard(extra, ch, arg, obstacle=psi)
            inner_total += its
            if u_new is None:
                raise ConvergenceError("obstacle subproblem is singular", history=history)
            diff = float(np.max(np.abs(u_new - u)))
            history.append(diff)
            u = u_new
            if diff <= self.opts.tol:
                _, arg = self.table.apply(u)
                return u, choice, arg, history, inner_total
        res, _ = self.residual(u, extra)
        raise ConvergenceError(
            f"lagged obstacle iteration did not converge in {self.opts.max_outer} sweeps",
            residual=float(np.max(np.abs(res))), history=history)

    def solve(self, extra, guess, warm=None):
        """Solve the level; returns (u, policy, info)."""
        if warm is None:
            choice, zeta = self.initial_policy(guess, extra)
        else:
            choice, zeta = warm
            choice = np.where(self.inside, np.where(choice == STOP_CHOICE, 0, choice),
                              np.where(choice >= 0, STOP_CHOICE, choice))
        method = self.opts.method
        u = None
        history = []
        iters = 0
        if method == "howard":
            u, choice, zeta, history, iters = self.howard(extra, choice, zeta)
            if u is None and warm is not None:
                choice, zeta = self.initial_policy(guess, extra)
                u, choice, zeta, history, iters = self.howard(extra, choice, zeta)
            if u is None:
                # singular impulse chain (zero-cost cycles): fall back
                method = "lagged"
                choice, zeta = self.initial_policy(guess, extra)
        if u is None:
            u, choice, zeta, history, iters = self.lagged(extra, choice, guess)
        res, parts = self.residual(u, extra)
        policy = self.label(u, parts)
        info = {
            "method": method,
            "iterations": int(iters),
            "residual": float(np.max(np.abs(res))),
            "impulse_gap": float(np.max(np.maximum(parts["Mu"] - u, 0.0))),
            "history": history,
        }
        return u, policy, info, (choice, zeta)

    def label(self, u, parts):
        """Region labels; continuation/intervention ties go to intervention,
        stop/intervention ties to stopping."""
        n = len(u)
        scale = 1.0 + np.max(np.abs(u))
        eps = 1e-12 * scale * max(1.0, self.lam)
        region = np.full(n, CONTINUE, dtype=np.int8)
        imp_inside = self.inside & (parts["gap"] <= parts["pde"] + eps)
        region[imp_inside] = INTERVENE
        outside = ~self.inside
        region[outside] = np.where(parts["stop"][outside] <= parts["gap"][outside] + eps,
                                   STOPPED, INTERVENE)
        zeta = np.where(region == INTERVENE, parts["zeta"], -1)
        return Policy(region, parts["beta"].astype(np.int64), zeta.astype(np.int64), self.t)


@dataclass
class Solution:
    grid: Grid
    fields: list
    policies: list
    report: dict = field(default_factory=dict)
    problem: Optional[object] = None
    levy: Optional[object] = None
    opts: Optional[SolverOptions] = None

    def __iter__(self):
        if self.grid.times is None:
            return iter((self.fields[0], self.policies[0]))
        return iter((self.fields, self.policies))

    @property
    def elliptic(self):
        return self.grid.times is None

    def value(self, t=None):
        """Value field at a level time (exact level) or the stationary field."""
        if self.elliptic:
            return self.fields[0]
        k = int(np.argmin(np.abs(self.grid.times - t)))
        return self.fields[k]

    def values_array(self):
        """(n_levels, *shape) for parabolic, shape for elliptic."""
        if self.elliptic:
            return self.fields[0].reshaped()
        return np.stack([f.reshaped() for f in self.fields])

    def evaluate(self, t, x):
        """Value at off-grid (t, x), linear in time between levels."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.elliptic:
            return self.fields[0].evaluate(x, self.problem)
        times = self.grid.times
        if t <= times[0]:
            return self.fields[0].evaluate(x, self.problem, times[0])
        if t >= times[-1]:
            return self.fields[-1].evaluate(x, self.problem, times[-1])
        k = int(np.searchsorted(times, t, side="right") - 1)
        th = (t - times[k]) / (times[k + 1] - times[k])
        a = self.fields[k].evaluate(x, self.problem, times[k])
        if th == 0.0:
            return a
        b = self.fields[k + 1].evaluate(x, self.problem, times[k + 1])
        return (1 - th) * a + th * b


def _check_stability(kt, lam, what):
    if not lam > kt:
        raise ProblemError(
            f"{what} = {lam:.6g} does not exceed the empirical growth rate "
            f"kappa~ = {kt:.6g}; increase the discount rate rho (or refine dt)")


def solve_parabolic(problem, levy, grid, opts=None):
    """Backward sweep from the terminal impulse fixed point."""
    if not problem.parabolic:
        raise ProblemError("solve_parabolic needs a parabolic problem")
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    times = grid.times
    n_lev = len(times)
    fields = [None] * n_lev
    policies = [None] * n_lev
    level_info = [None] * n_lev

    cache = {}

    def level_parts(t):
        if _static(problem) and "all" in cache:
            return cache["all"]
        parts = (assemble_all(problem, levy, grid, t, opts.drift_mode),
                 ImpulseTable(grid, problem, t))
        if _static(problem):
            cache["all"] = parts
        return parts

    T = times[-1]
    ops, table = level_parts(T)
    g_T = ValueField(grid, problem.g(T, grid.nodes), T)
    term = iterate_M_terminal(g_T, problem, opts.terminal_max_iter, table=table)
    fields[-1] = ValueField(grid, term.values, T, {"sweeps": term.meta["sweeps"]})
    region = np.where(term.meta["intervene"], INTERVENE, STOPPED).astype(np.int8)
    policies[-1] = Policy(region, np.zeros(grid.size, dtype=np.int64),
                          np.where(term.meta["intervene"], term.meta["argmax"], -1), T)
    Mu, _ = table.apply(term.values)
    level_info[-1] = {"t": float(T), "terminal_sweeps": int(term.meta["sweeps"]),
                      "impulse_gap": float(np.max(np.maximum(Mu - term.values, 0.0))),
                      "residual": 0.0}
    kt_max = -np.inf
    warm = None
    for n in range(n_lev - 2, -1, -1):
        t = times[n]
        dt = times[n + 1] - t
        ops, table = level_parts(t)
        kt = kappa_tilde(ops, grid, problem.growth_p)
        kt_max = max(kt_max, kt)
        _check_stability(kt, 1.0 / dt, "1/dt")
        op = LevelOperator(problem, levy, grid, t, 1.0 / dt, opts, ops, table)
        u_next = fields[n + 1].values
        try:
            u, pol, info, warm = op.solve(u_next / dt, u_next, warm)
        except ConvergenceError as exc:
            raise ConvergenceError(f"level {n} (t={t:.6g}): {exc}", exc.residual, exc.history) from exc
        info["t"] = float(t)
        info["kappa_tilde"] = kt
        fields[n] = ValueField(grid, u, t, {"iterations": info["iterations"],
                                            "residual": info["residual"]})
        policies[n] = pol
        level_info[n] = info
    p = problem.growth_p
    report = {
        "kind": "parabolic",
        "levels": level_info,
        "max_residual": max(li["residual"] for li in level_info),
        "max_impulse_gap": max(li["impulse_gap"] for li in level_info),
        "kappa_tilde": None if kt_max == -np.inf else kt_max,
        "growth_p": p,
        "growth_constant": max(f.growth_constant(p) for f in fields),
        "terminal_sweeps": level_info[-1]["terminal_sweeps"],
        "seconds": time.perf_counter() - t0,
    }
    for f in fields:
        f.meta["growth_constant"] = f.growth_constant(p)
    return Solution(grid, fields, policies, report, problem, levy, opts)


def _static(problem):
    # nothing depends on t: reuse the assembled operators across levels
    return problem.autonomous and problem.static_payoff


def solve_elliptic(problem, levy, grid, opts=None):
    """Stationary discounted QVI on the lattice."""
    if problem.parabolic:
        raise ProblemError("solve_elliptic needs an elliptic problem")
    rho = problem.rho
    if not rho > 0:
        raise ProblemError("elliptic solve needs a positive discount rate rho")
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    ops = assemble_all(problem, levy, grid, 0.0, opts.drift_mode)
    kt = kappa_tilde(ops, grid, problem.growth_p)
    _check_stability(kt, rho, "rho")
    op = LevelOperator(problem, levy, grid, 0.0, rho, opts, ops)
    extra = np.zeros(grid.size)
    u, pol, info, _ = op.solve(extra, op.g.copy())
    info["kappa_tilde"] = kt
    field_ = ValueField(grid, u, None, {"iterations": info["iterations"],
                                        "residual": info["residual"],
                                        "growth_constant": None})
    field_.meta["growth_constant"] = field_.growth_constant(problem.growth_p)
    report = {
        "kind": "elliptic",
        "levels": [info],
        "max_residual": info["residual"],
        "max_impulse_gap": info["impulse_gap"],
        "kappa_tilde": kt,
        "rho": rho,
        "growth_p": problem.growth_p,
        "growth_constant": field_.meta["growth_constant"],
        "seconds": time.perf_counter() - t0,
    }
    return Solution(grid, [field_], [pol], report, problem, levy, opts)


def step_parabolic(u_next, problem, levy, grid, t, opts=None, warm=None):
    """One implicit step from level t_{n+1} (field ``u_next``) back to time t."""
    opts = opts or SolverOptions()
    dt = u_next.t - t
    if not dt > 0:
        raise ProblemError("time step must be positive")
    op = LevelOperator(problem, levy, grid, t, 1.0 / dt, opts)
    _check_stability(kappa_tilde(op.ops, grid, problem.growth_p), 1.0 / dt, "1/dt")
    u, pol, info, _ = op.solve(u_next.values / dt, u_next.values, warm)
    return ValueField(grid, u, t, info), pol


def solve(problem, levy, grid, opts=None):
    if problem.parabolic:
        return solve_parabolic(problem, levy, grid, opts)
    return solve_elliptic(problem, levy, grid, opts)


def level_operator(solution, k):
    """Rebuild the level operator of a solved run (for certificates)."""
    problem, grid, opts = solution.problem, solution.grid, solution.opts or SolverOptions()
    if solution.elliptic:
        return LevelOperator(problem, solution.levy, grid, 0.0, problem.rho, opts), np.zeros(grid.size)
    times = grid.times
    t = times[k]
    dt = times[k + 1] - t
    op = LevelOperator(problem, solution.levy, grid, t, 1.0 / dt, opts)
    return op, solution.fields[k + 1].values / dt

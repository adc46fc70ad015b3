"""Strict supersolutions w = exp(-kt t) (w1 |x|^q + w2) and their use.

A strict supersolution has discrete min-system residual >= kappa at every
node (boundary rows included). Mixing it into a solved field,
v_m = (1 - 1/m) v + (1/m) w, shifts the residual of v_m up by kappa/m
because the PDE part is a max of affine maps and M is convex; the
perturbation check below measures exactly that.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ProblemError, QVIError
from .grid import ValueField
from .impulse import ImpulseTable
from .scheme import assemble_all
from .solver import LevelOperator, SolverOptions, level_operator

W1_LADDER = tuple(10.0 ** k for k in np.arange(-3.0, 3.01, 0.5))
W2_LADDER = tuple(10.0 ** k for k in np.arange(-2.0, 6.01, 0.5))
KT_LADDER = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


class SupersolutionError(QVIError):
    """No ladder parameters certify the margin; carries the best attempt."""

    def __init__(self, message, best_margin=None, params=None):
        self.best_margin = best_margin
        self.params = params
        super().__init__(message)


@dataclass
class Supersolution:
    params: dict
    kappa: float
    fields: list  # one ValueField per level (a single one when stationary)
    margins: list  # nodewise min-system residual per level
    min_margin: float
    certified: bool
    tried: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def descriptor(self):
        p = self.params
        return {"form": "exp(-kt*t)*(w1*|x|^q + w2)", "w1": p["w1"], "w2": p["w2"],
                "q": p["q"], "kt": p["kt"]}

    def value(self, k=0):
        return self.fields[k]

    def line(self):
        status = "PASS" if self.certified else "FAIL"
        p = self.params
        return (f"{status} strict supersolution w1={p['w1']:.3g} w2={p['w2']:.3g} q={p['q']:g} "
                f"kt={p['kt']:g}: min margin {self.min_margin:.4g} vs kappa {self.kappa:g}")


def supersolution_values(nodes, t, w1, w2, q, kt):
    r = np.linalg.norm(np.atleast_2d(nodes), axis=1)
    return math.exp(-kt * (0.0 if t is None else t)) * (w1 * r ** q + w2)


class _Level:
    """Pieces of one level that are linear in (w1, w2) for a fixed kt."""

    def __init__(self, op, Q):
        self.op = op
        self.Q = Q
        one = np.ones_like(Q)
        self.LQ = np.stack([L @ Q for L in op._L])
        self.L1 = np.stack([L @ one for L in op._L])
        self.cf = np.stack([o.c + o.f for o in op.ops])
        tb = op.table
        self.MQ = np.sum(tb.w * Q[tb.idx], axis=2)
        self.M1 = np.sum(tb.w, axis=2)
        self.add = np.where(tb.valid, tb.add, -np.inf)
        self.g = op.g
        self.inside = op.inside
        self.lam = op.lam

    def margin(self, w1, w2, a_n, a_next, Q_next):
        # lam w_n - w_{n+1}/dt - A_b w_n - c_b - f_b, with w_n = a_n (w1 Q + w2)
        pde = a_n * (w1 * self.LQ + w2 * self.L1) - self.cf
        if a_next is not None:
            pde = pde - self.lam * a_next * (w1 * Q_next + w2)
        pde = pde.min(axis=0)
        w = a_n * (w1 * self.Q + w2)
        Mw = np.max(a_n * (w1 * self.MQ + w2 * self.M1) + self.add, axis=1)
        gap = w - Mw
        return np.where(self.inside, np.minimum(pde, gap), np.minimum(w - self.g, gap))


def _terminal_margin(table, g, Q, a, w1, w2):
    w = a * (w1 * Q + w2)
    Mw = np.max(a * (w1 * np.sum(table.w * Q[table.idx], axis=2) + w2 * np.sum(table.w, axis=2))
                + np.where(table.valid, table.add, -np.inf), axis=1)
    return np.minimum(w - g, w - Mw)


def build_strict_supersolution(problem, levy, grid, q, kappa, opts=None,
                               w1_ladder=W1_LADDER, w2_ladder=W2_LADDER, kt_ladder=KT_LADDER,
                               raise_on_failure=True):
    """Search a logarithmic ladder for a certified strict supersolution.

    The certificate is nodewise: inside S, min(PDE residual, w - Mw) >= kappa;
    outside S, min(w - g, w - Mw) >= kappa; at the terminal level (parabolic)
    min(w - g, w - Mw) >= kappa everywhere.
    """
    if not q > problem.growth_p:
        raise ProblemError(f"exponent q = {q} must exceed the growth exponent p = {problem.growth_p}")
    if not kappa > 0:
        raise ProblemError("kappa must be positive")
    if problem.fixed_cost is None or not problem.fixed_cost > 0:
        raise ProblemError("a strict supersolution needs declared fixed costs K <= -k0 < 0")
    opts = opts or SolverOptions()
    Q = np.linalg.norm(grid.nodes, axis=1) ** q

    if problem.parabolic:
        times = grid.times
        levels = []
        cache = None
        for n in range(len(times) - 1):
            t = times[n]
            if cache is None or not (problem.autonomous and problem.static_payoff):
                cache = (assemble_all(problem, levy, grid, t, opts.drift_mode),
                         ImpulseTable(grid, problem, t))
            op = LevelOperator(problem, levy, grid, t, 1.0 / (times[n + 1] - t), opts, *cache)
            levels.append(_Level(op, Q))
        T = times[-1]
        term_table = ImpulseTable(grid, problem, T)
        gT = np.asarray(problem.g(T, grid.nodes), dtype=float)
        kts = kt_ladder
    else:
        op = LevelOperator(problem, levy, grid, 0.0, problem.rho, opts)
        levels = [_Level(op, Q)]
        kts = (0.0,)

    best = (-np.inf, None)
    tried = 0
    for kt in kts:
        for w1 in w1_ladder:
            for w2 in w2_ladder:
                tried += 1
                m = _ladder_margin(problem, grid, levels, Q, w1, w2, kt,
                                   term_table if problem.parabolic else None,
                                   gT if problem.parabolic else None)
                if m > best[0]:
                    best = (m, (w1, w2, kt))
                if m >= kappa:
                    break
            if best[0] >= kappa:
                break
        if best[0] >= kappa:
            break
    w1, w2, kt = best[1]
    params = {"w1": w1, "w2": w2, "q": float(q), "kt": kt}
    sup = _certify(problem, grid, levels, params, kappa,
                   term_table if problem.parabolic else None)
    sup.tried = tried
    if not sup.certified and raise_on_failure:
        raise SupersolutionError(
            f"no ladder parameters certify margin kappa = {kappa:g}; best min margin "
            f"{sup.min_margin:.4g} at w1={w1:.3g}, w2={w2:.3g}, kt={kt:g}",
            best_margin=sup.min_margin, params=params)
    return sup


def _ladder_margin(problem, grid, levels, Q, w1, w2, kt, term_table, gT):
    if not problem.parabolic:
        return float(levels[0].margin(w1, w2, 1.0, None, None).min())
    times = grid.times
    a = np.exp(-kt * times)
    worst = float(_terminal_margin(term_table, gT, Q, a[-1], w1, w2).min())
    for n, lev in enumerate(levels):
        worst = min(worst, float(lev.margin(w1, w2, a[n], a[n + 1], Q).min()))
    return worst


def _certify(problem, grid, levels, params, kappa, term_table):
    """Authoritative margins through the solver's own residual."""
    w1, w2, q, kt = params["w1"], params["w2"], params["q"], params["kt"]
    fields, margins = [], []
    if not problem.parabolic:
        w = supersolution_values(grid.nodes, None, w1, w2, q, 0.0)
        res, _ = levels[0].op.residual(w, np.zeros(grid.size))
        fields.append(ValueField(grid, w, None))
        margins.append(res)
    else:
        times = grid.times
        ws = [supersolution_values(grid.nodes, t, w1, w2, q, kt) for t in times]
        for n, lev in enumerate(levels):
            res, _ = lev.op.residual(ws[n], ws[n + 1] * lev.lam)
            fields.append(ValueField(grid, ws[n], times[n]))
            margins.append(res)
        T = times[-1]
        Mw, _ = term_table.apply(ws[-1])
        gT = np.asarray(problem.g(T, grid.nodes), dtype=float)
        fields.append(ValueField(grid, ws[-1], T))
        margins.append(np.minimum(ws[-1] - gT, ws[-1] - Mw))
    min_margin = float(min(m.min() for m in margins))
    return Supersolution(params, float(kappa), fields, margins, min_margin, min_margin >= kappa)


@dataclass
class PerturbationCheck:
    m: int
    min_shifted: float  # min over nodes of residual(v_m) - kappa/m
    tol: float

    @property
    def passed(self):
        return self.min_shifted >= -self.tol

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} perturbed field m={self.m}: min residual - kappa/m = "
                f"{self.min_shifted:+.3e} (tol {self.tol:g})")


def perturbed_residuals(solution, sup, ms=(2, 10, 100), tol=1e-8):
    """Residual of v_m = (1 - 1/m) v + (1/m) w against the kappa/m shift."""
    problem, grid = solution.problem, solution.grid
    if solution.elliptic:
        ops = [level_operator(solution, 0)[0]]
    else:
        ops = []
        cache = None
        opts = solution.opts or SolverOptions()
        times = grid.times
        for k in range(len(times) - 1):
            t = times[k]
            if cache is None or not (problem.autonomous and problem.static_payoff):
                cache = (assemble_all(problem, solution.levy, grid, t, opts.drift_mode),
                         ImpulseTable(grid, problem, t))
            ops.append(LevelOperator(problem, solution.levy, grid, t, 1.0 / (times[k + 1] - t),
                                     opts, *cache))
        t_table = ImpulseTable(grid, problem, times[-1])
        gT = np.asarray(problem.g(times[-1], grid.nodes), dtype=float)
    out = []
    for m in ms:
        mix = [(1 - 1.0 / m) * f.values + (1.0 / m) * w.values
               for f, w in zip(solution.fields, sup.fields)]
        if solution.elliptic:
            res, _ = ops[0].residual(mix[0], np.zeros(grid.size))
            lo = float(res.min())
        else:
            lo = np.inf
            for k, op in enumerate(ops):
                res, _ = op.residual(mix[k], mix[k + 1] * op.lam)
                lo = min(lo, float(res.min()))
            Mv, _ = t_table.apply(mix[-1])
            lo = min(lo, float(np.minimum(mix[-1] - gT, mix[-1] - Mv).min()))
        out.append(PerturbationCheck(int(m), lo - sup.kappa / m, tol))
    return out

"""The intervention operator M and its iterates on grid functions.

Mu(t, x) = max over candidates zeta of u(t, Gamma(t, x, zeta)) + K(t, x, zeta).
Candidate lists are finite, so M is an exact maximum; ties go to the
smallest candidate index.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, EmptyTransactionSetError
from .grid import ValueField, closure_stencil
from .kernels import gather_max


@dataclass
class InterventionResult:
    value: float
    argmax_zeta: np.ndarray
    target_node: np.ndarray
    cost: float
    index: int


class ImpulseTable:
    """All candidate impulses of every node at one time level.

    Candidate lists are padded to a common length; ``valid`` masks the
    padding. For each (node, candidate) the target's closure stencil and
    the additive term ``K + const`` are stored, so applying M to any grid
    function is a single gather-max.
    """

    def __init__(self, grid, problem, t):
        self.t = t
        n = grid.size
        lists = []
        for i in range(n):
            try:
                lists.append(problem.candidates(t, grid.nodes[i]))
            except EmptyTransactionSetError as exc:
                raise EmptyTransactionSetError(t, grid.nodes[i]) from exc
        ncand = max(len(c) for c in lists)
        dz = lists[0].shape[1]
        zetas = np.zeros((n, ncand, dz))
        valid = np.zeros((n, ncand), dtype=bool)
        for i, c in enumerate(lists):
            zetas[i, : len(c)] = c
            valid[i, : len(c)] = True
            zetas[i, len(c):] = c[0]  # harmless filler, masked out
        x_rep = np.repeat(grid.nodes, ncand, axis=0)
        z_flat = zetas.reshape(n * ncand, dz)
        targets = np.asarray(problem.Gamma(t, x_rep, z_flat), dtype=float).reshape(n * ncand, -1)
        cost = np.asarray(problem.K(t, x_rep, z_flat), dtype=float).reshape(n * ncand)
        idx, w, const = closure_stencil(grid, problem, t, targets)
        nst = idx.shape[1]
        self.zetas = zetas
        self.valid = valid
        self.targets = targets.reshape(n, ncand, -1)
        self.cost = np.where(valid, cost.reshape(n, ncand), -np.inf)
        self.idx = idx.reshape(n, ncand, nst)
        self.w = w.reshape(n, ncand, nst)
        self.add = np.where(valid, (cost + const).reshape(n, ncand), 0.0)

    def apply(self, u):
        """(Mu, argmax) over all nodes for the flat value vector ``u``."""
        return gather_max(u, self.idx, self.w, self.add, self.valid)

    def rows(self, nodes, choice):
        """Sparse-row pieces ``(row, col, weight)`` and rhs of u_i - W u = K + const."""
        idx = self.idx[nodes, choice]
        w = self.w[nodes, choice]
        rows = np.repeat(nodes, idx.shape[1])
        return rows, idx.ravel(), w.ravel(), self.add[nodes, choice]


def apply_M(u, t, x, problem):
    """Intervention operator at a single state."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cands = problem.candidates(t, x)
    xr = np.repeat(x[None, :], len(cands), axis=0)
    targets = np.asarray(problem.Gamma(t, xr, cands), dtype=float).reshape(len(cands), -1)
    cost = np.asarray(problem.K(t, xr, cands), dtype=float).reshape(len(cands))
    if isinstance(u, ValueField):
        vals = u.evaluate(targets, problem, t)
    else:
        vals = np.asarray(u(targets), dtype=float)
    total = vals + cost
    k = int(np.argmax(total))  # first maximizer
    return InterventionResult(float(total[k]), cands[k], targets[k], float(cost[k]), k)


def apply_M_field(u, problem, table=None):
    """Nodewise M of a grid function; argmax candidate index in ``meta``."""
    if table is None:
        table = ImpulseTable(u.grid, problem, u.t)
    best, arg = table.apply(u.values)
    zeta = table.zetas[np.arange(u.grid.size), arg]
    return ValueField(u.grid, best, u.t, {"argmax": arg, "zeta": zeta})


def iterate_M_terminal(g_field, problem, max_iter=1000, table=None):
    """sup(g, Mg, M^2 g, ...) by the sweep u <- max(u, Mu).

    The sweep count in ``meta["sweeps"]`` includes the final sweep that
    leaves the field unchanged.
    """
    if table is None:
        table = ImpulseTable(g_field.grid, problem, g_field.t)
    u = g_field.values.copy()
    arg = np.full(u.shape, -1, dtype=np.int64)
    for sweep in range(1, max_iter + 1):
        mu, am = table.apply(u)
        better = mu > u
        if not better.any():
            return ValueField(g_field.grid, u, g_field.t,
                              {"sweeps": sweep, "argmax": arg, "intervene": arg >= 0})
        u = np.where(better, mu, u)
        arg = np.where(better, am, arg)
    mu, _ = table.apply(u)
    resid = float(np.max(np.maximum(mu - u, 0.0)))
    raise ConvergenceError(
        f"terminal impulse iteration did not reach a fixed point in {max_iter} sweeps "
        f"(residual {resid:.3e})", residual=resid)

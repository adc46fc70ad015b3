"""Small problem builders shared by the tests."""
import numpy as np

from impulse_qvi import catalogue as cat
from impulse_qvi.levy import LevyModel
from impulse_qvi.problem import Domain, Elliptic, Parabolic, Problem


def scalar_problem(horizon=None, mu=0.0, vol=1.0, f=1.0, g=0.0, impulse=None, S=None,
                   B=(0.0,), growth_p=0.0, ell=None, name="test", L=1.0, control_gain=0.0):
    """1-d problem from constants or callbacks."""
    horizon = horizon if horizon is not None else Parabolic(1.0)
    mu_cb = mu if callable(mu) else cat.drift_constant(mu, 1, control_gain=control_gain)
    sig_cb = vol if callable(vol) else cat.vol_constant(vol, 1)
    f_cb = f if callable(f) else cat.running_constant(f)
    g_cb = g if callable(g) else cat.terminal_constant(g)
    Z, Gamma, K, k0 = impulse if impulse is not None else cat.impulse_none(1)
    return Problem(horizon=horizon, dim_x=1, mu=mu_cb, sigma=sig_cb, f=f_cb, g=g_cb, K=K,
                   Gamma=Gamma, Z=Z, B=np.asarray(B, dtype=float),
                   S=S if S is not None else Domain.whole(-L, L), growth_p=growth_p, ell=ell,
                   fixed_cost=k0, name=name, static_payoff=True)


def reset_to_origin(k0):
    """Single candidate zeta = 0 with Gamma = zeta and K = -k0."""
    def Z(t, x):
        return [np.zeros(1)]

    def Gamma(t, x, zeta):
        return zeta.copy()

    def K(t, x, zeta):
        return np.full(len(x), -float(k0))

    return Z, Gamma, K, float(k0)


def no_jumps():
    return LevyModel()


def lattice_walk(k0, step, L=1.0, reset=True):
    """Impulses that move one lattice step left/right (inside the box) or reset to 0.

    Every target is a grid node when ``step`` divides ``L``, so M needs no
    interpolation and multi-impulse chains can be enumerated exactly.
    """
    eps = 1e-12
    # the lattice Grid.build lays out, so targets are nodes bit for bit
    nodes = np.linspace(-L, L, int(round(2 * L / step)) + 1)

    def Z(t, x):
        out = []
        if x[0] - step >= -L - eps:
            out.append(np.array([-step]))
        if x[0] + step <= L + eps:
            out.append(np.array([step]))
        if reset:
            out.append(np.array([-x[0]]))
        return out

    def Gamma(t, x, zeta):
        j = np.rint((x + zeta + L) / step).astype(np.int64)
        return nodes[np.clip(j, 0, len(nodes) - 1)]

    def K(t, x, zeta):
        return np.full(len(x), -float(k0))

    return Z, Gamma, K, float(k0)


def enumerate_chains(g, x, problem, n_max, t=0.0):
    """max over chains of 0..n_max impulses of g(final) - sum of costs, by brute force.

    Walks every sequence of candidate choices depth first; no memoization,
    so nothing is shared with the sweep it is compared against.
    """
    def walk(y, depth):
        best = g(y[None, :])[0]
        if depth == n_max:
            return best
        for z in problem.candidates(t, y):
            cost = problem.K(t, y[None, :], z[None, :])[0]
            nxt = problem.Gamma(t, y[None, :], z[None, :])[0]
            best = max(best, walk(nxt, depth + 1) + cost)
        return best

    return walk(np.atleast_1d(np.asarray(x, dtype=float)), 0)


def brute_force_level(problem, levy, grid, t, lam, extra, tol=1e-9):
    """Fixed points of one discrete level by enumerating every row assignment.

    Each row picks a control (PDE row), an impulse candidate, or stopping
    (rows outside S); every assignment's dense linear system is solved and
    kept when its solution satisfies min over all actions of the row
    residuals = 0. Returns the list of fixed points found.
    """
    import itertools

    from impulse_qvi.impulse import ImpulseTable
    from impulse_qvi.scheme import assemble_all

    n = grid.size
    ops = assemble_all(problem, levy, grid, t)
    table = ImpulseTable(grid, problem, t)
    g = np.asarray(problem.g(t, grid.nodes), dtype=float)
    actions = []  # per row: list of (coefficient row, rhs)
    for i in range(n):
        acts = []
        if grid.inside[i]:
            for op in ops:
                row = -op.A[i].toarray().ravel()
                row[i] += lam
                acts.append((row, extra[i] + op.c[i] + op.f[i]))
        else:
            row = np.zeros(n)
            row[i] = 1.0
            acts.append((row, g[i]))
        for c in np.flatnonzero(table.valid[i]):
            row = np.zeros(n)
            row[i] += 1.0
            np.add.at(row, table.idx[i, c], -table.w[i, c])
            acts.append((row, table.add[i, c]))
        actions.append(acts)
    found = []
    for pick in itertools.product(*[range(len(a)) for a in actions]):
        Msys = np.array([actions[i][k][0] for i, k in enumerate(pick)])
        rhs = np.array([actions[i][k][1] for i, k in enumerate(pick)])
        try:
            u = np.linalg.solve(Msys, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(u)):
            continue
        res = np.array([min(r @ u - b for r, b in acts) for acts in actions])
        if np.max(np.abs(res)) <= tol * (1 + np.max(np.abs(u))):
            found.append(u)
    return found

"""Named coefficient families used by configs and the toy battery.

Every factory returns row-wise vectorized callbacks following the
convention documented in :mod:`impulse_qvi.problem`.
"""
import numpy as np

from .exceptions import ProblemError


def _vec(v, d):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.size == 1:
        a = np.full(d, float(a[0]))
    if a.shape != (d,):
        raise ProblemError(f"expected {d} components, got {a.size}")
    return a


def _gain(control_gain, d, db):
    G = np.asarray(control_gain, dtype=float)
    if G.ndim == 0:
        G = np.eye(d, db) * float(G)
    return G.reshape(d, db)


# ---------------------------------------------------------------------------
# piecewise polynomials (one-dimensional)


class PiecewisePolynomial:
    """p(x) = sum_k c[i, k] (x - b_i)^k on [b_i, b_{i+1}); extended constantly
    in the coefficient sense (first/last piece) beyond the breakpoints."""

    def __init__(self, breaks, coeffs):
        self.breaks = np.asarray(breaks, dtype=float)
        self.coeffs = [np.asarray(c, dtype=float) for c in coeffs]
        if len(self.coeffs) != len(self.breaks) - 1 or len(self.breaks) < 2:
            raise ProblemError("piecewise table needs len(coeffs) == len(breaks) - 1 >= 1")
        if not np.all(np.diff(self.breaks) > 0):
            raise ProblemError("piecewise breakpoints must increase")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, len(self.coeffs) - 1)
        out = np.zeros_like(x)
        for j, c in enumerate(self.coeffs):
            sel = i == j
            if sel.any():
                out[sel] = np.polynomial.polynomial.polyval(x[sel] - self.breaks[j], c)
        return out


# ---------------------------------------------------------------------------
# dynamics


def drift_constant(value, d, control_gain=0.0, db=1):
    m = _vec(value, d)
    G = _gain(control_gain, d, db)

    def mu(t, x, beta):
        return np.broadcast_to(m, x.shape) + beta @ G.T

    return mu


def drift_linear(rate, d, control_gain=0.0, db=1):
    """mu = (rate + G beta) * x componentwise (geometric drift)."""
    r = _vec(rate, d)
    G = _gain(control_gain, d, db)

    def mu(t, x, beta):
        return (r + beta @ G.T) * x

    return mu


def drift_mean_reverting(speed, mean, d, control_gain=0.0, db=1):
    k = _vec(speed, d)
    m = _vec(mean, d)
    G = _gain(control_gain, d, db)

    def mu(t, x, beta):
        return k * (m - x) + beta @ G.T

    return mu


def drift_piecewise(table, control_gain=0.0, db=1):
    G = _gain(control_gain, 1, db)

    def mu(t, x, beta):
        return table(x[:, 0])[:, None] + beta @ G.T

    return mu


def vol_constant(value, d):
    s = _vec(value, d)

    def sigma(t, x, beta):
        return np.broadcast_to(np.diag(s), (len(x), d, d)).copy()

    return sigma


def vol_linear(value, d):
    s = _vec(value, d)

    def sigma(t, x, beta):
        out = np.zeros((len(x), d, d))
        idx = np.arange(d)
        out[:, idx, idx] = s * x
        return out

    return sigma


def vol_piecewise(table):
    def sigma(t, x, beta):
        return table(x[:, 0])[:, None, None]

    return sigma


def jumps_additive(d, direction=None):
    """ell(z) = z (k = d) or z * direction (k = 1)."""
    e = None if direction is None else _vec(direction, d)

    def ell(t, x, beta, z):
        if e is None and z.shape[1] == x.shape[1]:
            return np.array(z, dtype=float)
        return z[:, :1] * (np.ones(x.shape[1]) if e is None else e)

    return ell


def jumps_proportional(d):
    """ell(x, z) = x (e^z - 1): log-jumps of a geometric process."""

    def ell(t, x, beta, z):
        return x * np.expm1(z[:, :1])

    return ell


def jumps_linear(d):
    """ell(x, z) = z x."""

    def ell(t, x, beta, z):
        return x * z[:, :1]

    return ell


# ---------------------------------------------------------------------------
# payoffs


def running_constant(c):
    def f(t, x, beta):
        return np.full(len(x), float(c))

    return f


def running_quadratic(state_weight=1.0, center=0.0, control_weight=0.0, offset=0.0):
    """f = offset - state_weight |x - center|^2 - control_weight |beta|^2."""

    def f(t, x, beta):
        return (offset - state_weight * np.sum((x - center) ** 2, axis=1)
                - control_weight * np.sum(beta ** 2, axis=1))

    return f


def running_linear(slope, offset=0.0):
    def f(t, x, beta):
        s = np.atleast_1d(np.asarray(slope, dtype=float))
        return offset + x @ np.broadcast_to(s, (x.shape[1],))

    return f


def running_piecewise(table, control_weight=0.0):
    def f(t, x, beta):
        return table(x[:, 0]) - control_weight * np.sum(beta ** 2, axis=1)

    return f


def terminal_constant(c):
    def g(t, x):
        return np.full(len(x), float(c))

    return g


def terminal_quadratic(weight=1.0, center=0.0, offset=0.0):
    def g(t, x):
        return offset - weight * np.sum((x - center) ** 2, axis=1)

    return g


def terminal_linear(slope, offset=0.0):
    def g(t, x):
        s = np.atleast_1d(np.asarray(slope, dtype=float))
        return offset + x @ np.broadcast_to(s, (x.shape[1],))

    return g


def terminal_piecewise(table):
    def g(t, x):
        return table(x[:, 0])

    return g


# ---------------------------------------------------------------------------
# impulses
#
# Transaction-set oracles carry an optional ``batch(t, X)`` attribute that
# returns padded candidates (n, C, dz) and a validity mask (n, C); the Monte
# Carlo engine uses it to evaluate M along many paths at once.


def _fixed_batch(cands, n):
    arr = np.asarray(cands, dtype=float)
    return np.broadcast_to(arr, (n,) + arr.shape).copy(), np.ones((n, len(arr)), dtype=bool)


def impulse_none(d, penalty=1e6):
    """A single zero impulse that is never worth taking."""

    def Z(t, x):
        return [np.zeros(d)]

    Z.batch = lambda t, X: (np.zeros((len(X), 1, d)), np.ones((len(X), 1), dtype=bool))

    def Gamma(t, x, zeta):
        return x.copy()

    def K(t, x, zeta):
        return np.full(len(x), -float(penalty))

    return Z, Gamma, K, float(penalty)


def impulse_reset(targets, k0, k1=0.0):
    """Jump to one of fixed target states; K = -k0 - k1 |target - x|."""
    tg = [np.atleast_1d(np.asarray(v, dtype=float)) for v in targets]
    if not tg:
        raise ProblemError("reset impulses need at least one target")

    def Z(t, x):
        return tg

    Z.batch = lambda t, X: _fixed_batch(tg, len(X))

    def Gamma(t, x, zeta):
        return zeta.copy()

    def K(t, x, zeta):
        return -k0 - k1 * np.linalg.norm(zeta - x, axis=1)

    return Z, Gamma, K, float(k0)


def impulse_shift(shifts, k0, k1=0.0):
    """Shift the state by one of fixed vectors; K = -k0 - k1 |zeta|."""
    sh = [np.atleast_1d(np.asarray(v, dtype=float)) for v in shifts]
    if not sh:
        raise ProblemError("shift impulses need at least one shift")

    def Z(t, x):
        return sh

    Z.batch = lambda t, X: _fixed_batch(sh, len(X))

    def Gamma(t, x, zeta):
        return x + zeta

    def K(t, x, zeta):
        return -k0 - k1 * np.linalg.norm(zeta, axis=1)

    return Z, Gamma, K, float(k0)


def impulse_toward(fractions, k0, k1=0.0, center=0.0):
    """Move a fraction s of the way toward ``center``: zeta = s (center - x)."""
    fr = [float(s) for s in fractions]
    if not fr or min(fr) < 0 or max(fr) > 1:
        raise ProblemError("toward-impulse fractions must lie in [0, 1]")

    def Z(t, x):
        return [s * (center - x) for s in fr]

    def batch(t, X):
        zs = np.stack([s * (center - X) for s in fr], axis=1)
        return zs, np.ones(zs.shape[:2], dtype=bool)

    Z.batch = batch

    def Gamma(t, x, zeta):
        return x + zeta

    def K(t, x, zeta):
        return -k0 - k1 * np.linalg.norm(zeta, axis=1)

    return Z, Gamma, K, float(k0)


def impulse_inject(target, k0, k1=1.0, levels=1):
    """One-dimensional injection up to ``target``; K = -k0 - k1 zeta.

    Candidates are the amounts that lift x to target, target + step, ...
    (``levels`` of them); above the target only the zero amount remains.
    """
    tgt = float(target)

    def Z(t, x):
        gap = tgt - float(x[0])
        if gap <= 0:
            return [np.zeros(1)]
        return [np.array([gap + 0.25 * j]) for j in range(levels)]

    def batch(t, X):
        gap = tgt - X[:, 0]
        zs = (gap[:, None] + 0.25 * np.arange(levels))[:, :, None]
        valid = np.ones(zs.shape[:2], dtype=bool)
        above = gap <= 0
        zs[above] = 0.0
        valid[above, 1:] = False
        return zs, valid

    Z.batch = batch

    def Gamma(t, x, zeta):
        return x + zeta

    def K(t, x, zeta):
        return -k0 - k1 * np.abs(zeta[:, 0])

    return Z, Gamma, K, float(k0)

"""Monotone finite-difference/quadrature discretization of the generator.

For each control row beta the discrete generator is an affine map
u -> A u + c on the full lattice: A has nonnegative off-diagonal entries
(checked at assembly) and c collects the exit-payoff contributions of
the far-field closure. Only rows of nodes inside S are populated.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import MonotonicityError, ProblemError
from .grid import closure_stencil, growth_weight

DRIFT_MODES = ("hybrid", "upwind")


@dataclass
class GeneratorMatrix:
    A: sp.csr_matrix
    c: np.ndarray
    f: np.ndarray
    beta_index: int
    t: float


class _Rows:
    """Accumulates (row, point, coefficient) terms and resolves points to stencils."""

    def __init__(self, grid, problem, t):
        self.grid, self.problem, self.t = grid, problem, t
        self.r, self.cidx, self.val = [], [], []
        self.pts_rows, self.pts, self.pts_coef = [], [], []

    def node(self, rows, cols, coef):
        self.r.append(np.asarray(rows))
        self.cidx.append(np.asarray(cols))
        self.val.append(np.asarray(coef, dtype=float))

    def point(self, rows, pts, coef):
        self.pts_rows.append(np.asarray(rows))
        self.pts.append(np.asarray(pts, dtype=float))
        self.pts_coef.append(np.asarray(coef, dtype=float))

    def build(self):
        n = self.grid.size
        c = np.zeros(n)
        if self.pts:
            rows = np.concatenate(self.pts_rows)
            pts = np.concatenate(self.pts)
            coef = np.concatenate(self.pts_coef)
            idx, w, const = closure_stencil(self.grid, self.problem, self.t, pts)
            self.node(np.repeat(rows, idx.shape[1]), idx.ravel(), (w * coef[:, None]).ravel())
            np.add.at(c, rows, coef * const)
        r = np.concatenate(self.r) if self.r else np.zeros(0, dtype=np.int64)
        ci = np.concatenate(self.cidx) if self.cidx else np.zeros(0, dtype=np.int64)
        v = np.concatenate(self.val) if self.val else np.zeros(0)
        A = sp.coo_matrix((v, (r, ci)), shape=(n, n)).tocsr()
        A.sum_duplicates()
        return A, c


def coefficient_fields(problem, levy, grid, t, b, rows):
    """Effective diffusion a (n, d, d) and drift (n, d) at the given nodes."""
    x = grid.nodes[rows]
    n, d = x.shape
    beta = problem.beta_rows(b, n)
    mu = np.asarray(problem.mu(t, x, beta), dtype=float).reshape(n, d)
    sig = np.asarray(problem.sigma(t, x, beta), dtype=float).reshape(n, d, -1)
    a = np.einsum("nik,njk->nij", sig, sig)
    drift = mu.copy()
    if levy is not None and not levy.is_zero and problem.ell is not None:
        delta = levy.scheme_delta
        if delta > 0:
            zs, ws = levy.nodes(0.0, delta)
            for zj, wj in zip(zs, ws):
                e = _ell(problem, t, x, beta, zj)
                a += wj * e[:, :, None] * e[:, None, :]
        zc, wc = levy.nodes(delta, 1.0)
        for zj, wj in zip(zc, wc):
            drift -= wj * _ell(problem, t, x, beta, zj)
    return a, drift


def _ell(problem, t, x, beta, z):
    zr = np.repeat(np.atleast_1d(z)[None, :], len(x), axis=0)
    return np.asarray(problem.ell(t, x, beta, zr), dtype=float).reshape(x.shape)


def assemble(problem, levy, grid, t, b, drift_mode="hybrid"):
    """Discrete generator for control row ``b`` at time ``t``."""
    if drift_mode not in DRIFT_MODES:
        raise ProblemError(f"drift mode must be one of {DRIFT_MODES}")
    rows = np.flatnonzero(grid.inside)
    acc = _Rows(grid, problem, t)
    d = grid.dim
    nodes = grid.nodes
    mi = grid.multi_index()[rows]
    strides = grid.strides
    a, drift = coefficient_fields(problem, levy, grid, t, b, rows)

    # neighbour offsets per axis (ghost spacing mirrors the last interval)
    hm = np.empty((len(rows), d))
    hp = np.empty((len(rows), d))
    for k, ax in enumerate(grid.axes):
        j = mi[:, k]
        dx = np.diff(ax)
        hm[:, k] = dx[np.clip(j - 1, 0, len(dx) - 1)]
        hp[:, k] = dx[np.clip(j, 0, len(dx) - 1)]

    def shifted(k, sign, l=None, sign_l=0):
        # neighbour point: on-lattice node if present, else a ghost point
        p = nodes[rows].copy()
        p[:, k] += sign * (hp[:, k] if sign > 0 else hm[:, k])
        if l is not None:
            p[:, l] += sign_l * (hp[:, l] if sign_l > 0 else hm[:, l])
        return p

    diag = np.zeros(len(rows))
    axial = {}
    for k in range(d):
        akk = a[:, k, k]
        s = hm[:, k] + hp[:, k]
        cp = akk / (hp[:, k] * s)
        cm = akk / (hm[:, k] * s)
        bk = drift[:, k]
        central_p = bk * hm[:, k] / (hp[:, k] * s)
        central_m = -bk * hp[:, k] / (hm[:, k] * s)
        central_0 = bk * (hp[:, k] - hm[:, k]) / (hm[:, k] * hp[:, k])
        ok = (cp + central_p >= 0) & (cm + central_m >= 0)
        if drift_mode == "upwind":
            ok[:] = False
        up_p = np.where(bk > 0, bk / hp[:, k], 0.0)
        up_m = np.where(bk < 0, -bk / hm[:, k], 0.0)
        wp = cp + np.where(ok, central_p, up_p)
        wm = cm + np.where(ok, central_m, up_m)
        d0 = -(cp + cm) + np.where(ok, central_0, -(up_p + up_m))
        axial[k] = [wp, wm]
        diag += d0

    # mixed derivatives: sign-dependent seven-point stencil
    for k in range(d):
        for l in range(k + 1, d):
            akl = a[:, k, l]
            if not np.any(akl != 0):
                continue
            hk = 0.5 * (hm[:, k] + hp[:, k])
            hl = 0.5 * (hm[:, l] + hp[:, l])
            coef = np.abs(akl) / (2 * hk * hl)
            pos = akl > 0
            # a u_kl ~ coef*[u(+,s)+u(-,-s)-u(+,0)-u(-,0)-u(0,+)-u(0,-)+2u], s = sign(a)
            for sign in (1, -1):
                axial[k][0 if sign > 0 else 1] = axial[k][0 if sign > 0 else 1] - coef
                axial[l][0 if sign > 0 else 1] = axial[l][0 if sign > 0 else 1] - coef
            diag += 2 * coef
            s_l = np.where(pos, 1, -1)
            for sign in (1, -1):
                p = nodes[rows].copy()
                p[:, k] += sign * np.where(sign > 0, hp[:, k], hm[:, k])
                step_l = sign * s_l
                p[:, l] += step_l * np.where(step_l > 0, hp[:, l], hm[:, l])
                acc.point(rows, p, coef)

    for k in range(d):
        wp, wm = axial[k]
        bad = (wp < -1e-14 * np.abs(diag).max(initial=1.0)) | (wm < -1e-14 * np.abs(diag).max(initial=1.0))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise MonotonicityError(
                f"cross-diffusion dominance breaks monotonicity at node {nodes[rows[i]].tolist()} "
                f"(axis {k}); refine or grade the grid so that a_kk/h_k^2 >= |a_kl|/(h_k h_l)",
                node=nodes[rows[i]])
        acc.point(rows, shifted(k, +1), np.maximum(wp, 0.0))
        acc.point(rows, shifted(k, -1), np.maximum(wm, 0.0))

    # nonlocal large-jump part
    if levy is not None and not levy.is_zero and problem.ell is not None:
        x = nodes[rows]
        beta = problem.beta_rows(b, len(rows))
        zl, wl = levy.nodes(levy.scheme_delta)
        for zj, wj in zip(zl, wl):
            e = _ell(problem, t, x, beta, zj)
            acc.point(rows, x + e, np.full(len(rows), wj))
            diag -= wj

    acc.node(rows, rows, diag)
    A, c = acc.build()
    off = A.copy()
    off.setdiag(0.0)
    off.eliminate_zeros()
    if off.nnz and off.data.min() < 0:
        k = int(np.argmin(off.data))
        row = int(np.searchsorted(off.indptr, k, side="right") - 1)
        raise MonotonicityError(f"negative off-diagonal entry at node {nodes[row].tolist()}",
                                node=nodes[row])
    f = np.zeros(grid.size)
    f[rows] = np.asarray(problem.f(t, nodes[rows], problem.beta_rows(b, len(rows))), dtype=float)
    return GeneratorMatrix(A, c, f, b, t)


def assemble_all(problem, levy, grid, t, drift_mode="hybrid"):
    return [assemble(problem, levy, grid, t, b, drift_mode) for b in range(problem.B.shape[0])]


def kappa_tilde(ops, grid, p):
    """max over rows and controls of (A y)_i / y_i with y = 1 + |x|^p."""
    y = growth_weight(grid.nodes, p)
    inside = grid.inside
    best = -np.inf
    for op in ops:
        r = (op.A @ y)[inside] / y[inside]
        if r.size:
            best = max(best, float(r.max()))
    return 0.0 if best == -np.inf else best


def discretize_generator(u, t, b, problem, levy, grid, drift_mode="hybrid"):
    """Nodewise A^beta u + c^beta + f^beta (zero outside S)."""
    values = u.values if hasattr(u, "values") else np.asarray(u, dtype=float)
    op = assemble(problem, levy, grid, t, b, drift_mode)
    out = op.A @ values + op.c + op.f
    out[~grid.inside] = 0.0
    return out

"""Lévy measures, the small/large jump split of the nonlocal term, and jump sampling.

Measures are a finite list of atoms (any jump dimension k) plus at most
one one-dimensional density. Integrals over the density use composite
Gauss-Legendre rules on geometrically graded segments; atoms are summed
exactly.
"""
import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri, gammaincc, gamma as gamma_fn

from .exceptions import ProblemError
from .problem import Check

_GL_POINTS = 16


class Density:
    """A one-dimensional Lévy density nu(z) dz."""

    finite = True
    p_star = math.inf

    def pdf(self, z):
        raise NotImplementedError

    def breakpoints(self):
        return []

    def tail_radius(self, p, tol):
        raise NotImplementedError

    @property
    def q_star(self):
        return 0.0

    def params(self):
        return {}


class GaussianJumps(Density):
    """Merton-type: intensity * Normal(mean, std) jump sizes."""

    kind = "gaussian"

    def __init__(self, intensity, mean, std):
        if intensity < 0 or std <= 0:
            raise ProblemError("gaussian jumps need intensity >= 0 and std > 0")
        self.intensity, self.mean, self.std = float(intensity), float(mean), float(std)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        s = self.std
        return self.intensity * np.exp(-0.5 * ((z - self.mean) / s) ** 2) / (s * math.sqrt(2 * math.pi))

    @property
    def mass(self):
        return self.intensity

    def breakpoints(self):
        return [self.mean]

    def tail_radius(self, p, tol):
        r = abs(self.mean) + 6 * self.std
        while self._tail(r, p) > tol:
            r *= 1.25
        return r

    def _tail(self, r, p):
        # crude but conservative bound on int_{|z|>r} |z|^p pdf
        zs = np.linspace(r, r + 20 * self.std, 400)
        dz = zs[1] - zs[0]
        return float(np.sum((zs ** p + 1) * (self.pdf(zs) + self.pdf(-zs))) * dz)

    def sample(self, u):
        return self.mean + self.std * ndtri(u)

    def params(self):
        return {"intensity": self.intensity, "mean": self.mean, "std": self.std}


class DoubleExponentialJumps(Density):
    """Kou-type: upward Exp(eta_up) with probability p_up, downward Exp(eta_down)."""

    kind = "double-exponential"

    def __init__(self, intensity, p_up, eta_up, eta_down):
        if intensity < 0 or not 0 <= p_up <= 1 or eta_up <= 0 or eta_down <= 0:
            raise ProblemError("invalid double-exponential parameters")
        self.intensity, self.p_up = float(intensity), float(p_up)
        self.eta_up, self.eta_down = float(eta_up), float(eta_down)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        up = self.p_up * self.eta_up * np.exp(-self.eta_up * np.abs(z))
        down = (1 - self.p_up) * self.eta_down * np.exp(-self.eta_down * np.abs(z))
        return self.intensity * np.where(z >= 0, up, down)

    @property
    def mass(self):
        return self.intensity

    def breakpoints(self):
        return [0.0]

    def tail_radius(self, p, tol):
        eta = min(self.eta_up, self.eta_down)
        r = 1.0
        # int_r^inf z^p eta e^{-eta z} dz = Gamma(p+1, eta r) / eta^p
        while self.intensity * gamma_fn(p + 1) * gammaincc(p + 1, eta * r) / eta ** p > tol:
            r *= 1.25
        return r

    def sample(self, u):
        u = np.asarray(u, dtype=float)
        up = u < self.p_up
        # reuse the uniform within each branch
        v_up = np.clip(u / max(self.p_up, 1e-300), 1e-300, 1.0)
        v_dn = np.clip((u - self.p_up) / max(1 - self.p_up, 1e-300), 1e-300, 1.0)
        return np.where(up, -np.log(v_up) / self.eta_up, np.log(v_dn) / self.eta_down)

    def params(self):
        return {"intensity": self.intensity, "p_up": self.p_up,
                "eta_up": self.eta_up, "eta_down": self.eta_down}


class TemperedStable(Density):
    """CGMY density C exp(-G|z|)/|z|^{1+Y} (z<0), C exp(-M z)/z^{1+Y} (z>0).

    Infinite activity when Y >= 0; Y < 2 is required.
    """

    kind = "tempered-stable"

    def __init__(self, C, G, M, Y):
        if C <= 0 or G <= 0 or M <= 0 or not Y < 2:
            raise ProblemError("tempered-stable needs C, G, M > 0 and Y < 2")
        self.C, self.G, self.M, self.Y = float(C), float(G), float(M), float(Y)
        self.finite = self.Y < 0

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        with np.errstate(divide="ignore"):
            base = self.C / a ** (1 + self.Y)
        return np.where(z < 0, base * np.exp(-self.G * a), base * np.exp(-self.M * a))

    @property
    def mass(self):
        if not self.finite:
            return math.inf
        Y = self.Y
        return self.C * gamma_fn(-Y) * (self.G ** Y + self.M ** Y)

    @property
    def q_star(self):
        return max(self.Y, 0.0)

    def breakpoints(self):
        return [0.0]

    def tail_radius(self, p, tol):
        lam = min(self.G, self.M)
        r = 1.0
        while self.C * gamma_fn(p - self.Y) * gammaincc(max(p - self.Y, 1e-12), lam * r) \
                / lam ** (p - self.Y) > tol:
            r *= 1.25
        return r

    def params(self):
        return {"C": self.C, "G": self.G, "M": self.M, "Y": self.Y}


def _gauss_legendre(a, b, n=_GL_POINTS):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _graded_segments(lo, hi, nseg):
    """nseg segments on [lo, hi] (0 <= lo < hi), geometric when lo > 0."""
    if lo > 0:
        return np.geomspace(lo, hi, nseg + 1)
    return np.linspace(lo, hi, nseg + 1)


@dataclass
class LocalQuadratic:
    """Value, gradient and Hessian of a grid function near one state."""

    value: float
    grad: np.ndarray
    hess: Optional[np.ndarray]


class LevyModel:
    """Jump measure nu with the small/large split at |z| = delta.

    ``quad_nodes`` is the density node budget (per jump dimension, k = 1
    for densities). ``radius`` truncates the large-jump domain; by default
    it is chosen so that the discarded tail of |z|^{p} nu is below 1e-10
    with p = max(2, growth exponent).
    """

    def __init__(self, atoms=(), density=None, delta=1e-2, quad_nodes=256,
                 radius=None, eps_sim=1e-3, growth_case=None, p_star=None,
                 q_star=None, tail_p=2.0, tail_tol=1e-10):
        self.atoms = [(np.atleast_1d(np.asarray(z, dtype=float)), float(w)) for z, w in atoms]
        for _, w in self.atoms:
            if w < 0:
                raise ProblemError("atom weights must be nonnegative")
        self.density = density
        dims = {len(z) for z, _ in self.atoms}
        if density is not None:
            dims.add(1)
        if len(dims) > 1:
            raise ProblemError("atoms and density have different jump dimensions")
        self.dim_z = dims.pop() if dims else 1
        if not 0 < delta < 1:
            raise ProblemError("small-jump cutoff delta must lie in (0, 1)")
        self.delta = float(delta)
        self.quad_nodes = int(quad_nodes)
        self.eps_sim = float(eps_sim)
        self.growth_case = growth_case
        self._p_star = p_star
        self._q_star = q_star
        if radius is None:
            radius = 1.0
            if density is not None:
                radius = max(1.0, density.tail_radius(tail_p, tail_tol))
            if self.atoms:
                radius = max(radius, 1.0 + max(np.linalg.norm(z) for z, _ in self.atoms))
        self.radius = float(radius)
        self._cache = {}

    # -- descriptors -------------------------------------------------------

    @classmethod
    def none(cls):
        return cls()

    @property
    def is_zero(self):
        return self.density is None and all(w == 0 for _, w in self.atoms)

    @property
    def finite_activity(self):
        return self.density is None or self.density.finite

    @property
    def total_mass(self):
        m = sum(w for _, w in self.atoms)
        if self.density is not None:
            m += self.density.mass
        return m

    @property
    def p_star(self):
        if self._p_star is not None:
            return self._p_star
        return math.inf if self.density is None else self.density.p_star

    @property
    def q_star(self):
        if self._q_star is not None:
            return self._q_star
        return 0.0 if self.density is None else self.density.q_star

    @property
    def scheme_delta(self):
        """Split point used by the discretization.

        Finite-activity measures are treated fully nonlocally (split at 0);
        for infinite activity the small zone becomes a diffusion term.
        """
        return 0.0 if self.finite_activity else self.delta

    # -- quadrature --------------------------------------------------------

    def _density_nodes(self, lo, hi, budget):
        """Density nodes with lo <= |z| < hi on both half-lines."""
        if self.density is None or hi <= lo:
            return np.zeros((0, 1)), np.zeros(0)
        d = self.density
        inner = max(lo, 1e-8 * self.delta) if not d.finite else lo
        cuts = {inner, hi}
        for c in (self.delta, 1.0):
            if inner < c < hi:
                cuts.add(c)
        for b in d.breakpoints():
            if inner < abs(b) < hi:
                cuts.add(abs(b))
        cuts = sorted(cuts)
        nseg_total = max(budget // (2 * _GL_POINTS), len(cuts) - 1)
        spans = np.diff(np.log(np.maximum(cuts, 1e-12))) if inner > 0 else np.diff(cuts)
        spans = np.maximum(spans, 1e-12)
        share = np.maximum(1, np.round(nseg_total * spans / spans.sum())).astype(int)
        zs, ws = [], []
        for (a, b), k in zip(zip(cuts[:-1], cuts[1:]), share):
            edges = _graded_segments(a, b, k)
            for e0, e1 in zip(edges[:-1], edges[1:]):
                x, w = _gauss_legendre(e0, e1)
                for sign in (1.0, -1.0):
                    zs.append(sign * x)
                    ws.append(w * d.pdf(sign * x))
        z = np.concatenate(zs)[:, None]
        w = np.concatenate(ws)
        keep = w > 0
        return z[keep], w[keep]

    def nodes(self, lo=0.0, hi=math.inf, budget=None):
        """Quadrature nodes and weights of nu restricted to lo <= |z| < hi."""
        key = (lo, hi, budget)
        if key in self._cache:
            return self._cache[key]
        hi_eff = min(hi, self.radius)
        zs, ws = [], []
        for z, w in self.atoms:
            r = np.linalg.norm(z)
            if lo <= r < hi and w > 0:
                zs.append(z[None, :])
                ws.append(np.array([w]))
        if self.density is not None:
            zd, wd = self._density_nodes(lo, hi_eff, budget or self.quad_nodes)
            zs.append(zd)
            ws.append(wd)
        if zs:
            z = np.concatenate(zs).reshape(-1, self.dim_z)
            w = np.concatenate(ws)
        else:
            z, w = np.zeros((0, self.dim_z)), np.zeros(0)
        self._cache[key] = (z, w)
        return z, w

    def small_nodes(self, delta=None):
        return self.nodes(0.0, self.delta if delta is None else delta)

    def large_nodes(self, delta=None):
        return self.nodes(self.delta if delta is None else delta)

    def probe_jumps(self):
        z, _ = self.nodes()
        if len(z) == 0:
            return [np.zeros(self.dim_z)]
        pick = np.unique(np.linspace(0, len(z) - 1, min(len(z), 8)).astype(int))
        return [z[i] for i in pick]

    def levy_integral(self):
        """int (|z|^2 ^ 1) nu(dz) by quadrature."""
        z, w = self.nodes()
        r = np.linalg.norm(z, axis=1)
        return float(np.sum(w * np.minimum(r ** 2, 1.0)))

    def quad_rows(self):
        z, w = self.nodes()
        r = np.linalg.norm(z, axis=1)
        zone = np.where(r < self.delta, "small", np.where(r < 1, "compensated", "large"))
        return [{"z": ";".join(repr(float(c)) for c in zi), "weight": repr(float(wi)),
                 "zone": zi_zone} for zi, wi, zi_zone in zip(z, w, zone)]

    def dump_quad(self, path):
        rows = self.quad_rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["z", "weight", "zone"])
            writer.writeheader()
            writer.writerows(rows)

    def describe(self):
        out = {"atoms": [[z.tolist(), w] for z, w in self.atoms], "delta": self.delta,
               "quad_nodes": self.quad_nodes, "radius": self.radius, "eps_sim": self.eps_sim}
        if self.density is not None:
            out["density"] = {"kind": self.density.kind, **self.density.params()}
        return out

    # -- assumption checks ---------------------------------------------------

    def checks(self, problem, n=256, seed=0):
        from .problem import sample_cloud

        out = []
        li = self.levy_integral()
        out.append(Check("Levy integrability int(|z|^2 ^ 1) dnu", "pass" if np.isfinite(li) else "fail",
                         f"value {li:.6g}", value=li))
        if self.finite_activity:
            _, w = self.nodes()
            quad_mass = float(w.sum())
            exact = self.total_mass
            tail_ok = abs(quad_mass - exact) <= 1e-6 * max(1.0, exact)
            out.append(Check("finite activity total mass", "pass" if tail_ok else "fail",
                             f"quadrature {quad_mass:.10g} vs exact {exact:.10g}", value=quad_mass))
        if problem.ell is None:
            out.append(Check("jump growth case", "unverifiable", "problem has no jump map"))
            return out
        x = sample_cloud(problem.S, n, seed)
        z, w = self.nodes()
        if len(z) == 0:
            return out
        t = 0.0
        mags = []
        for b in range(problem.B.shape[0]):
            beta = problem.beta_rows(b, len(x))
            for zj in z[:: max(1, len(z) // 32)]:
                zr = np.repeat(zj[None, :], len(x), axis=0)
                mags.append((np.linalg.norm(zj),
                             float(np.max(np.linalg.norm(problem.ell(t, x, beta, zr), axis=1)))))
        mags = np.array(mags)
        case = self.growth_case or ("a" if self.finite_activity else "b")
        r, m = mags[:, 0], mags[:, 1]
        if case == "a":
            ok = np.all(np.isfinite(m)) and self.finite_activity
            detail = f"max |ell| = {m.max():.4g} on sampled (x, z)"
        elif case == "b":
            pos = r > 0
            ratio = np.max(m[pos] / r[pos]) if pos.any() else 0.0
            ok = np.isfinite(ratio) and problem.growth_p <= self.p_star
            detail = f"max |ell|/|z| = {ratio:.4g}; p = {problem.growth_p} vs p* = {self.p_star}"
        else:
            big = r >= 1
            if big.sum() >= 2:
                a = float(np.polyfit(np.log(r[big]), np.log(np.maximum(m[big], 1e-300)), 1)[0])
            else:
                a = 0.0
            a = max(a, 0.0)
            ok = a * problem.growth_p <= self.p_star + 1e-9
            detail = f"tail exponent a ~ {a:.3g}, a*b = {a * problem.growth_p:.3g} vs p* = {self.p_star}"
        out.append(Check(f"jump growth case ({case})", "pass" if ok else "fail", detail))
        return out


# ---------------------------------------------------------------------------
# nonlocal integrals at one state


def integral_small(local, x, t, beta, problem, levy):
    """Small-jump integral over |z| < delta from a local quadratic model.

    Equals 1/2 sum_j w_j ell_j^T H ell_j, exact for quadratic u.
    """
    if not levy.delta < 1:
        raise ProblemError("small-jump cutoff delta must be < 1")
    if local.hess is None:
        raise ProblemError("local Hessian unavailable for the small-jump integral")
    z, w = levy.small_nodes()
    if len(z) == 0:
        return 0.0
    H = np.atleast_2d(np.asarray(local.hess, dtype=float))
    ell = _ell_at(problem, t, x, beta, z)
    return float(0.5 * np.sum(w * np.einsum("ni,ij,nj->n", ell, H, ell)))


def small_jump_bound(local, x, t, beta, problem, levy):
    """int_{|z|<delta} |ell|^2 dnu times the Hessian norm."""
    z, w = levy.small_nodes()
    if len(z) == 0:
        return 0.0
    ell = _ell_at(problem, t, x, beta, z)
    return float(np.sum(w * np.sum(ell ** 2, axis=1)) * np.linalg.norm(np.atleast_2d(local.hess), 2))


def integral_large(u, p, x, t, beta, problem, levy):
    """Large-jump integral over delta <= |z| < radius with the compensator on |z| < 1.

    ``u`` is a ValueField (off-lattice points interpolated, far-field
    closure beyond the box) or a callable on (n, d) point arrays.
    """
    if levy.radius < 1:
        raise ProblemError("large-jump truncation radius must be >= 1")
    z, w = levy.large_nodes()
    if len(z) == 0:
        return 0.0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ell = _ell_at(problem, t, x, beta, z)
    if hasattr(u, "evaluate"):
        vals = u.evaluate(x[None, :] + ell, problem, t)
        u0 = u.evaluate(x[None, :], problem, t)[0]
    else:
        vals = np.asarray(u(x[None, :] + ell), dtype=float)
        u0 = float(np.asarray(u(x[None, :]), dtype=float)[0])
    comp = (np.linalg.norm(z, axis=1) < 1).astype(float)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    return float(np.sum(w * (vals - u0 - comp * (ell @ p))))


def _ell_at(problem, t, x, beta, z):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    n = len(z)
    xr = np.repeat(x[None, :], n, axis=0)
    br = np.repeat(beta[None, :], n, axis=0)
    if problem.ell is None:
        return np.zeros((n, len(x)))
    return np.asarray(problem.ell(t, xr, br, z), dtype=float).reshape(n, len(x))


# ---------------------------------------------------------------------------
# simulation

# nodes used for per-step compensator and small-jump covariance in simulation
SIM_BUDGET = 64


class JumpSampler:
    """Vectorized jump increments over many paths for one Lévy model.

    Jumps with |z| >= eps (eps = 0 for finite activity) are simulated
    exactly as a compound Poisson sum; the compensator over eps <= |z| < 1
    is subtracted as drift. For infinite activity, jumps below eps are
    replaced by a centered Gaussian with matched covariance.
    """

    def __init__(self, levy):
        self.levy = levy
        self.eps = 0.0 if levy.finite_activity else levy.eps_sim
        self._build()

    def _build(self):
        lv = self.levy
        comps = []  # (mass, sampler(u) -> (n, k) jumps)
        for z, w in lv.atoms:
            if w > 0 and np.linalg.norm(z) >= self.eps:
                comps.append((w, ("atom", z)))
        d = lv.density
        if d is not None:
            if d.finite and hasattr(d, "sample"):
                comps.append((d.mass, ("exact", d)))
            else:
                zs, ws = lv._density_nodes(max(self.eps, 1e-300), lv.radius, 4096)
                order = np.argsort(zs[:, 0])
                zs, ws = zs[order, 0], ws[order]
                cdf = np.concatenate([[0.0], np.cumsum(ws)])
                mass = cdf[-1]
                # support points between quadrature nodes for inversion
                support = np.concatenate([[zs[0]], 0.5 * (zs[1:] + zs[:-1]), [zs[-1]]])
                comps.append((mass, ("table", (cdf / mass, support))))
        self.masses = np.array([m for m, _ in comps])
        self.components = [c for _, c in comps]
        self.rate = float(self.masses.sum()) if comps else 0.0
        self.comp_nodes = lv.nodes(self.eps, 1.0, SIM_BUDGET)
        self.small_nodes = lv.nodes(0.0, self.eps, SIM_BUDGET) if self.eps > 0 else (None, None)

    def _marks(self, u_comp, u_pos):
        n = len(u_comp)
        out = np.zeros((n, self.levy.dim_z))
        cum = np.cumsum(self.masses) / self.rate
        which = np.minimum(np.searchsorted(cum, u_comp, side="right"), len(cum) - 1)
        for c, (kind, obj) in enumerate(self.components):
            sel = which == c
            if not sel.any():
                continue
            if kind == "atom":
                out[sel] = obj
            elif kind == "exact":
                out[sel, 0] = obj.sample(u_pos[sel])
            else:
                cdf, support = obj
                out[sel, 0] = np.interp(u_pos[sel], cdf, support)
        return out

    def increment(self, problem, t, x, beta, dt, uniforms):
        """Jump displacement for each row of ``x``.

        ``uniforms(block, rows)`` returns fresh (len(rows), 2) uniforms for
        the given block number (all rows when ``rows`` is None).
        """
        n, d = x.shape
        disp = np.zeros((n, d))
        if self.levy.is_zero or problem.ell is None:
            return disp
        zc, wc = self.comp_nodes
        if len(zc):
            for j in range(len(zc)):
                zr = np.repeat(zc[j][None, :], n, axis=0)
                disp -= dt * wc[j] * np.asarray(problem.ell(t, x, beta, zr), dtype=float)
        if self.rate > 0:
            u = uniforms(0, None)
            counts = _poisson_inverse(self.rate * dt, u[:, 0])
            kmax = int(counts.max()) if n else 0
            for j in range(kmax):
                active = np.flatnonzero(counts > j)
                uj = uniforms(1 + j, active)
                z = self._marks(uj[:, 0], uj[:, 1])
                disp[active] += np.asarray(problem.ell(t, x[active], beta[active], z), dtype=float)
        if self.eps > 0:
            zs, ws = self.small_nodes
            if len(zs):
                cov = np.zeros((n, d, d))
                for j in range(len(zs)):
                    zr = np.repeat(zs[j][None, :], n, axis=0)
                    e = np.asarray(problem.ell(t, x, beta, zr), dtype=float)
                    cov += ws[j] * e[:, :, None] * e[:, None, :]
                chol = np.linalg.cholesky(cov * dt + 1e-300 * np.eye(d))
                g = np.empty((n, d))
                for k in range(0, d, 2):
                    uk = uniforms(1_000_000 + k, None)
                    g[:, k] = ndtri(uk[:, 0])
                    if k + 1 < d:
                        g[:, k + 1] = ndtri(uk[:, 1])
                disp += np.einsum("nij,nj->ni", chol, g)
        return disp


def _poisson_inverse(lam, u):
    """Poisson(lam) counts by CDF inversion, vectorized over u."""
    u = np.asarray(u, dtype=float)
    k = np.zeros(u.shape, dtype=np.int64)
    p = math.exp(-lam)
    cdf = np.full(u.shape, p)
    pk = p
    j = 0
    while True:
        todo = u > cdf
        if not todo.any() or j > 10000:
            break
        j += 1
        pk = pk * lam / j
        k[todo] += 1
        cdf = cdf + pk
        if pk == 0.0 and j > lam:
            break
    return k


def sample_increment(levy, problem, t, x, beta, dt, rng_stream, size=None):
    """Jump displacement over one step of length dt at a single state.

    ``rng_stream`` must offer ``random(size)`` (a PathStream or a numpy
    Generator). With ``size`` given, returns that many independent draws
    as a (size, d) array.
    """
    if not dt > 0:
        raise ProblemError("dt must be positive")
    sampler = levy._cache.get("sampler")
    if sampler is None:
        sampler = levy._cache["sampler"] = JumpSampler(levy)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    n = 1 if size is None else int(size)
    X = np.repeat(x[None, :], n, axis=0)
    Bt = np.repeat(beta[None, :], n, axis=0)

    def uniforms(block, rows=None):
        m = n if rows is None else len(rows)
        return np.asarray(rng_stream.random((m, 2)), dtype=float)

    out = sampler.increment(problem, t, X, Bt, dt, uniforms)
    return out[0] if size is None else out

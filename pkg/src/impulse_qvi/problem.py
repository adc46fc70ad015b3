"""Control-problem instances and their sampled assumption checks.

Every coefficient callback is row-wise vectorized: it receives a time
``t`` (float) and arrays whose leading axis indexes sample rows, and it
returns one output row per input row.

==========  =====================================  ==============
callback    arguments                              returns
==========  =====================================  ==============
mu          t, x (n, d), beta (n, db)              (n, d)
sigma       t, x (n, d), beta (n, db)              (n, d, m)
ell         t, x (n, d), beta (n, db), z (n, k)    (n, d)
f           t, x (n, d), beta (n, db)              (n,)
g           t, x (n, d)                            (n,)
K           t, x (n, d), zeta (n, dz)              (n,)
Gamma       t, x (n, d), zeta (n, dz)              (n, d)
Z           t, x (d,)                              list of zeta
==========  =====================================  ==============

``Z`` is the only per-point oracle: it returns the finite candidate list
that discretizes the transaction set at one state.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.stats import qmc

from .exceptions import EmptyTransactionSetError, ProblemError


@dataclass(frozen=True)
class Parabolic:
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ProblemError("horizon T must be positive")


@dataclass(frozen=True)
class Elliptic:
    # rho > 0 is required by the solver, not here: a zero-discount instance
    # is still a valid input to the supersolution search (which must fail).
    rho: float

    def __post_init__(self):
        if not self.rho >= 0:
            raise ProblemError("discount rate rho must be nonnegative")


@dataclass(frozen=True)
class Domain:
    """Open state domain S together with the truncation box."""

    lower: np.ndarray
    upper: np.ndarray
    inside: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"

    @classmethod
    def whole(cls, lower, upper):
        lower, upper = _box(lower, upper)
        return cls(lower, upper, lambda x: np.ones(len(x), dtype=bool), "whole")

    @classmethod
    def box(cls, lower, upper, s_lower, s_upper):
        """S = open box (s_lower, s_upper) truncated to [lower, upper]."""
        lower, upper = _box(lower, upper)
        lo = np.atleast_1d(np.asarray(s_lower, dtype=float))
        hi = np.atleast_1d(np.asarray(s_upper, dtype=float))

        def inside(x):
            x = np.asarray(x, dtype=float)
            return np.all((x > lo) & (x < hi), axis=1)

        return cls(lower, upper, inside, "box")

    @property
    def dim(self):
        return len(self.lower)

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.upper - self.lower))


def _box(lower, upper):
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise ProblemError("box bounds have different dimensions")
    return lower, upper


@dataclass(frozen=True)
class Problem:
    horizon: Union[Parabolic, Elliptic]
    dim_x: int
    mu: Callable
    sigma: Callable
    f: Callable
    g: Callable
    K: Callable
    Gamma: Callable
    Z: Callable
    B: np.ndarray
    S: Domain
    growth_p: float = 0.0
    dim_w: int = 1
    dim_z: int = 1
    ell: Optional[Callable] = None
    fixed_cost: Optional[float] = None
    # mu, sigma, ell, Gamma, Z do not depend on t (enables operator caching)
    autonomous: bool = True
    # f, g, K do not depend on t either
    static_payoff: bool = False
    lift_rho: Optional[float] = None
    name: str = "problem"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        object.__setattr__(self, "B", B)

    @property
    def parabolic(self):
        return isinstance(self.horizon, Parabolic)

    @property
    def T(self):
        return self.horizon.T if self.parabolic else None

    @property
    def rho(self):
        return 0.0 if self.parabolic else self.horizon.rho

    def beta_rows(self, b, n):
        return np.repeat(self.B[b : b + 1], n, axis=0)

    def candidates(self, t, x):
        """Transaction-set candidates at one point as a (C, dz) array."""
        cands = self.Z(t, np.asarray(x, dtype=float))
        if cands is None or len(cands) == 0:
            raise EmptyTransactionSetError(t, np.atleast_1d(x))
        arr = np.asarray(cands, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        return arr


    def candidates_batch(self, t, X):
        """Padded candidates (n, C, dz) and validity mask (n, C) for many states."""
        batch = getattr(self.Z, "batch", None)
        if batch is not None:
            zs, valid = batch(t, X)
            zs = np.asarray(zs, dtype=float)
            if zs.ndim == 2:
                zs = zs[:, :, None]
            return zs, np.asarray(valid, dtype=bool)
        lists = [self.candidates(t, x) for x in X]
        C = max(len(c) for c in lists)
        dz = lists[0].shape[1]
        zs = np.zeros((len(X), C, dz))
        valid = np.zeros((len(X), C), dtype=bool)
        for i, c in enumerate(lists):
            zs[i, : len(c)] = c
            zs[i, len(c):] = c[0]
            valid[i, : len(c)] = True
        return zs, valid


# ---------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    status: str  # "pass" | "fail" | "unverifiable"
    detail: str = ""
    point: Optional[np.ndarray] = None
    value: Optional[float] = None


@dataclass
class ValidationReport:
    checks: list
    lipschitz: dict

    @property
    def passed(self):
        return all(c.status != "fail" for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        out = []
        for c in self.checks:
            line = f"{c.status.upper():13s} {c.name}"
            if c.detail:
                line += f"  ({c.detail})"
            out.append(line)
        return out


def sample_cloud(domain, n, seed, anchors=True):
    """Scrambled Sobol points in the box, with the box center (and corners) prepended."""
    d = domain.dim
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(n, 2))))
    pts = qmc.scale(sob.random_base2(m)[:n], domain.lower, domain.upper)
    if anchors:
        center = 0.5 * (domain.lower + domain.upper)
        pts = np.vstack([center[None, :], pts[: n - 1]])
    return pts


def lipschitz_estimate(x, values, chunk=512):
    """Largest pairwise difference quotient |F_i - F_j| / |x_i - x_j|."""
    x = np.asarray(x, dtype=float)
    F = np.asarray(values, dtype=float).reshape(len(x), -1)
    best = 0.0
    where = None
    for start in range(0, len(x), chunk):
        xa = x[start : start + chunk]
        Fa = F[start : start + chunk]
        dx = np.linalg.norm(xa[:, None, :] - x[None, :, :], axis=2)
        dF = np.linalg.norm(Fa[:, None, :] - F[None, :, :], axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(dx > 0, dF / dx, 0.0)
        k = np.unravel_index(np.argmax(q), q.shape)
        if q[k] > best:
            best = float(q[k])
            where = x[start + k[0]]
    return best, where


# ratio L(n) / L(n/16) above which the quotient is judged unbounded
LIPSCHITZ_GROWTH_LIMIT = 1.5


def _time_samples(problem):
    if problem.parabolic:
        return [0.0, 0.5 * problem.T, problem.T]
    return [0.0]


def _finite_check(name, fn, x, *args):
    try:
        out = np.asarray(fn(*args), dtype=float)
    except Exception as exc:  # callback raised
        return Check(name, "fail", f"callback raised {exc!r}")
    bad = ~np.isfinite(out.reshape(len(x), -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        return Check(name, "fail", "non-finite value", point=x[i])
    return None


def validate(problem, levy=None, n_samples=4096, seed=0):
    """Sample-based check of the standing assumptions.

    Raises :class:`ProblemError` for the hard preconditions (empty control
    set, degenerate box, empty transaction set at a sampled point).
    """
    dom = problem.S
    if problem.B.shape[0] == 0:
        raise ProblemError("control set B is empty")
    width = dom.upper - dom.lower
    if dom.dim != problem.dim_x or not np.all(width > 0):
        raise ProblemError("bounding box of S is degenerate")

    x = sample_cloud(dom, n_samples, seed)
    x_coarse = x[: max(n_samples // 16, 2)]
    times = _time_samples(problem)
    checks = []
    lips = {}

    # (V2) non-empty candidate lists; Hausdorff spot-check on near pairs
    zsets = []
    for t in times:
        for xi in x[: min(len(x), 512)]:
            zsets.append(problem.candidates(t, xi))  # raises when empty
    checks.append(_hausdorff_check(problem, x[: min(len(x), 512)], times[0]))

    # (V3) finiteness of mu, sigma, ell, f for every beta; Lipschitz in x
    v3_fail = None
    lip_fail = None
    for t in times:
        for b in range(problem.B.shape[0]):
            beta = problem.beta_rows(b, len(x))
            for name, fn in (("mu", problem.mu), ("sigma", problem.sigma), ("f", problem.f)):
                bad = _finite_check(name, fn, x, t, x, beta)
                if bad is not None and v3_fail is None:
                    v3_fail = bad
            if problem.ell is not None and levy is not None:
                for z in levy.probe_jumps():
                    zr = np.repeat(np.atleast_1d(z)[None, :], len(x), axis=0)
                    bad = _finite_check("ell", problem.ell, x, t, x, beta, zr)
                    if bad is not None and v3_fail is None:
                        v3_fail = bad
            for name, fn in (("mu", problem.mu), ("sigma", problem.sigma)):
                if v3_fail is not None:
                    continue
                fine, where = lipschitz_estimate(x, fn(t, x, beta))
                coarse, _ = lipschitz_estimate(
                    x_coarse, fn(t, x_coarse, problem.beta_rows(b, len(x_coarse)))
                )
                key = f"{name}[beta={b}]" if problem.B.shape[0] > 1 else name
                if problem.parabolic and len(times) > 1:
                    key += f"@t={t:g}"
                lips[key] = fine
                growth = fine / coarse if coarse > 0 else (np.inf if fine > 0 else 1.0)
                if growth > LIPSCHITZ_GROWTH_LIMIT and lip_fail is None:
                    lip_fail = (key, fine, coarse, where)
    if v3_fail is not None:
        v3_fail.name = "V3 continuity/finiteness of mu, sigma, ell, f"
        checks.append(v3_fail)
    else:
        checks.append(Check("V3 continuity/finiteness of mu, sigma, ell, f", "pass",
                            "finite on the sample cloud for every beta"))
    if lip_fail is not None:
        key, fine, coarse, where = lip_fail
        checks.append(Check(
            "V3/Lipschitz mu, sigma", "fail",
            f"{key}: difference quotient grows {fine / max(coarse, 1e-300):.2f}x "
            f"under 16x cloud refinement ({coarse:.3g} -> {fine:.3g})",
            point=where, value=fine))
    elif v3_fail is None:
        checks.append(Check("V3/Lipschitz mu, sigma", "pass",
                            "difference quotients stable under refinement",
                            value=max(lips.values()) if lips else 0.0))

    # (V1) Gamma and K finite and continuous along a fixed candidate
    checks.append(_impulse_continuity_check(problem, x, times[0]))

    # (L2) fixed costs, if declared
    if problem.fixed_cost is not None:
        checks.append(_fixed_cost_check(problem, x[: min(len(x), 512)], times))
    else:
        checks.append(Check("L2 fixed transaction cost", "unverifiable",
                            "no fixed cost k0 declared"))

    if levy is not None:
        checks.extend(levy.checks(problem))

    checks.append(Check("E4 higher variability", "unverifiable",
                        "no computational counterpart; problem-authoring note"))
    return ValidationReport(checks, lips)


def _hausdorff(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def _hausdorff_check(problem, x, t):
    # pairs of nearest neighbours at two scales; distance should shrink
    from scipy.spatial import cKDTree

    tree = cKDTree(x)
    dist, nbr = tree.query(x, k=2)
    ratios = []
    for i in range(len(x)):
        j = nbr[i, 1]
        h = _hausdorff(problem.candidates(t, x[i]), problem.candidates(t, x[j]))
        ratios.append(h / dist[i, 1] if dist[i, 1] > 0 else 0.0)
    worst = float(np.max(ratios))
    i = int(np.argmax(ratios))
    # a jump in Z shows as a quotient ~ jump / spacing; spacing ~ diam / n^(1/d)
    spacing = float(np.median(dist[:, 1]))
    if worst * spacing > 0.25 * max(problem.S.diagonal, 1e-12):
        return Check("V2 transaction set Hausdorff continuity", "fail",
                     f"candidate sets jump between neighbours (ratio {worst:.3g})",
                     point=x[i], value=worst)
    return Check("V2 transaction set Hausdorff continuity", "pass",
                 f"max Hausdorff/distance ratio {worst:.3g} on nearest pairs", value=worst)


def _impulse_continuity_check(problem, x, t):
    center = 0.5 * (problem.S.lower + problem.S.upper)
    zeta = problem.candidates(t, center)[0]
    zr = np.repeat(zeta[None, :], len(x), axis=0)
    for name, fn in (("Gamma", problem.Gamma), ("K", problem.K)):
        bad = _finite_check(name, fn, x, t, x, zr)
        if bad is not None:
            bad.name = "V1 Gamma, K continuous"
            return bad
    vals = np.column_stack([
        np.asarray(problem.Gamma(t, x, zr), dtype=float).reshape(len(x), -1),
        np.asarray(problem.K(t, x, zr), dtype=float).reshape(len(x), -1),
    ])
    fine, where = lipschitz_estimate(x[:1024], vals[:1024])
    coarse, _ = lipschitz_estimate(x[:64], vals[:64])
    if coarse > 0 and fine / coarse > 4.0:
        return Check("V1 Gamma, K continuous", "fail",
                     f"difference quotient grows {fine / coarse:.2f}x under refinement",
                     point=where, value=fine)
    return Check("V1 Gamma, K continuous", "pass",
                 "finite, no jump detected along a fixed candidate", value=fine)


def _fixed_cost_check(problem, x, times):
    k0 = problem.fixed_cost
    worst = -np.inf
    at = None
    for t in times:
        for xi in x:
            cands = problem.candidates(t, xi)
            xr = np.repeat(xi[None, :], len(cands), axis=0)
            k = np.asarray(problem.K(t, xr, cands), dtype=float)
            if k.max() > worst:
                worst = float(k.max())
                at = xi
    status = "pass" if worst <= -k0 else "fail"
    return Check("L2 fixed transaction cost", status,
                 f"max K = {worst:.6g} vs -k0 = {-k0:.6g}", point=None if status == "pass" else at,
                 value=worst)


# ---------------------------------------------------------------------------
# exponential time transformation


def to_parabolic(problem, T):
    """Lift a discounted elliptic problem to [0, T] with e^{-rho t} weights."""
    if problem.parabolic:
        raise ProblemError("problem is already parabolic")
    rho = problem.horizon.rho
    f, g, K = problem.f, problem.g, problem.K

    def f_lift(t, x, beta):
        return np.exp(-rho * t) * np.asarray(f(0.0, x, beta), dtype=float)

    def g_lift(t, x):
        return np.exp(-rho * t) * np.asarray(g(0.0, x), dtype=float)

    def K_lift(t, x, zeta):
        return np.exp(-rho * t) * np.asarray(K(0.0, x, zeta), dtype=float)

    return replace(problem, horizon=Parabolic(T), f=f_lift, g=g_lift, K=K_lift,
                   lift_rho=rho, autonomous=problem.autonomous, static_payoff=False,
                   name=problem.name + "-lifted")


def to_elliptic(problem, rho=None, n_samples=64, seed=0, rtol=1e-10):
    """Undo the exponential time lift of a time-homogeneous parabolic problem.

    The returned callbacks ignore ``t`` and evaluate the lifted data at 0.
    Raises :class:`ProblemError` when ``rho <= 0`` or when sampled data is not
    of the form e^{-rho t} h(x).
    """
    if not problem.parabolic:
        raise ProblemError("problem is already elliptic")
    if rho is None:
        rho = problem.lift_rho
    if rho is None or not rho > 0:
        raise ProblemError("elliptic transform needs a positive discount rate rho")
    rho = float(rho)

    x = sample_cloud(problem.S, n_samples, seed)
    T = problem.T
    times = [0.0, T / 3.0, T]
    n = len(x)
    for b in range(problem.B.shape[0]):
        beta = problem.beta_rows(b, n)
        ref = {
            "mu": np.asarray(problem.mu(0.0, x, beta), dtype=float),
            "sigma": np.asarray(problem.sigma(0.0, x, beta), dtype=float),
            "f": np.asarray(problem.f(0.0, x, beta), dtype=float),
        }
        for t in times[1:]:
            got = {
                "mu": np.asarray(problem.mu(t, x, beta), dtype=float),
                "sigma": np.asarray(problem.sigma(t, x, beta), dtype=float),
                "f": np.exp(rho * t) * np.asarray(problem.f(t, x, beta), dtype=float),
            }
            for key in ref:
                if not np.allclose(got[key], ref[key], rtol=rtol, atol=rtol):
                    raise ProblemError(f"time-dependent data: {key} is not of discounted form")
    g0 = np.asarray(problem.g(0.0, x), dtype=float)
    for t in times[1:]:
        if not np.allclose(np.exp(rho * t) * np.asarray(problem.g(t, x), dtype=float), g0,
                           rtol=rtol, atol=rtol):
            raise ProblemError("time-dependent data: g is not of discounted form")
    for xi in x[:16]:
        c0 = problem.candidates(0.0, xi)
        for t in times[1:]:
            ct = problem.candidates(t, xi)
            if ct.shape != c0.shape or not np.allclose(ct, c0):
                raise ProblemError("time-dependent data: Z depends on t")
            xr = np.repeat(xi[None, :], len(c0), axis=0)
            if not np.allclose(problem.Gamma(t, xr, c0), problem.Gamma(0.0, xr, c0)):
                raise ProblemError("time-dependent data: Gamma depends on t")
            k = np.exp(rho * t) * np.asarray(problem.K(t, xr, c0), dtype=float)
            if not np.allclose(k, problem.K(0.0, xr, c0), rtol=rtol, atol=rtol):
                raise ProblemError("time-dependent data: K is not of discounted form")

    f, g, K = problem.f, problem.g, problem.K
    mu, sigma, Gamma, Z, ell = problem.mu, problem.sigma, problem.Gamma, problem.Z, problem.ell

    def frozen(fn):
        out = lambda t, *args: fn(0.0, *args)  # noqa: E731
        if hasattr(fn, "batch"):
            out.batch = lambda t, X: fn.batch(0.0, X)
        return out

    return replace(
        problem,
        horizon=Elliptic(rho),
        mu=frozen(mu), sigma=frozen(sigma), f=frozen(f), g=frozen(g), K=frozen(K),
        Gamma=frozen(Gamma), Z=frozen(Z), ell=None if ell is None else frozen(ell),
        lift_rho=None, autonomous=True, static_payoff=True,
        name=problem.name[:-7] if problem.name.endswith("-lifted") else problem.name,
    )

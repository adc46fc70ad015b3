"""Tensor lattices, grid functions, policies and the far-field closure."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ProblemError
from .kernels import interp_stencil

CONTINUE, INTERVENE, STOPPED = 0, 1, 2
REGION_NAMES = {CONTINUE: "continuation", INTERVENE: "intervention", STOPPED: "stopped"}


class Grid:
    """Tensor-product spatial lattice inside the truncation box, plus time levels.

    Node ordering is C order over the axes (last axis fastest). ``inside``
    tags every node with membership of the open domain S.
    """

    def __init__(self, axes, inside, times=None):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        for a in self.axes:
            if a.ndim != 1 or len(a) < 3:
                raise ProblemError("every grid axis needs at least 3 nodes")
            if not np.all(np.diff(a) > 0):
                raise ProblemError("grid coordinates must be strictly increasing")
        self.shape = tuple(len(a) for a in self.axes)
        self.dim = len(self.axes)
        self.size = int(np.prod(self.shape))
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.nodes = np.column_stack([m.ravel() for m in mesh])
        self.inside = np.asarray(inside, dtype=bool).reshape(self.size)
        self.times = None if times is None else np.asarray(times, dtype=float)
        if self.times is not None and not np.all(np.diff(self.times) > 0):
            raise ProblemError("time levels must be strictly increasing")
        self.lower = np.array([a[0] for a in self.axes])
        self.upper = np.array([a[-1] for a in self.axes])

    @classmethod
    def build(cls, problem, shape, n_steps=None, axes=None):
        """Uniform lattice over the truncation box of ``problem.S``.

        ``n_steps`` (parabolic only) gives the number of time steps; the
        default is 200.
        """
        if np.isscalar(shape):
            shape = (int(shape),) * problem.dim_x
        if len(shape) != problem.dim_x:
            raise ProblemError(f"grid has {len(shape)} axes, problem has dim {problem.dim_x}")
        if axes is None:
            axes = [np.linspace(lo, hi, n) for lo, hi, n in
                    zip(problem.S.lower, problem.S.upper, shape)]
        times = None
        if problem.parabolic:
            n_steps = 200 if n_steps is None else int(n_steps)
            if n_steps < 0:
                raise ProblemError("number of time steps must be nonnegative")
            times = np.linspace(0.0, problem.T, n_steps + 1)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        return cls(axes, problem.S.inside(pts), times)

    @property
    def spacing(self):
        return [np.diff(a) for a in self.axes]

    @property
    def h(self):
        """Largest spatial mesh width."""
        return float(max(np.diff(a).max() for a in self.axes))

    @property
    def strides(self):
        s = np.ones(self.dim, dtype=np.int64)
        for k in range(self.dim - 2, -1, -1):
            s[k] = s[k + 1] * self.shape[k + 1]
        return s

    def multi_index(self):
        return np.column_stack(np.unravel_index(np.arange(self.size), self.shape))

    def nearest(self, points):
        """Flat index of the nearest node (per axis) for each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        flat = np.zeros(len(pts), dtype=np.int64)
        for k, a in enumerate(self.axes):
            dx = np.diff(a)
            if np.ptp(dx) <= 1e-12 * (a[-1] - a[0]):
                # uniform axis: closed form, ties to the left node
                j = np.ceil((pts[:, k] - a[0]) / dx[0] - 0.5)
                j = np.clip(np.nan_to_num(j), 0, len(a) - 1).astype(np.int64)
                flat += j * self.strides[k]
                continue
            j = np.searchsorted(a, pts[:, k])
            j = np.clip(j, 1, len(a) - 1)
            left = a[j - 1]
            right = a[j]
            j = np.where(pts[:, k] - left <= right - pts[:, k], j - 1, j)
            flat += j * self.strides[k]
        return flat

    def spec(self):
        out = {"shape": list(self.shape),
               "axes": [a.tolist() for a in self.axes]}
        if self.times is not None:
            out["times"] = self.times.tolist()
        return out


def growth_weight(x, p):
    """1 + |x|^p, the reference weight of the polynomial growth class."""
    r = np.linalg.norm(np.atleast_2d(x), axis=1)
    return 1.0 + r ** p


def closure_stencil(grid, problem, t, points):
    """Monotone evaluation stencil for arbitrary points.

    Returns ``(idx, w, const)`` with ``u(point) = sum(w * u[idx]) + const``.
    Inside the box this is multilinear interpolation. Beyond the box the
    point is clipped to the box edge; if that edge point lies outside S
    the value is ``g(t, point)``, otherwise the edge interpolant is scaled
    by the growth ratio ``(1 + |y|^p) / (1 + |y_edge|^p)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    clipped = np.clip(pts, grid.lower, grid.upper)
    idx, w = interp_stencil(grid.axes, clipped)
    const = np.zeros(n)
    off = np.any(clipped != pts, axis=1)
    if off.any():
        edge = clipped[off]
        in_s = np.asarray(problem.S.inside(edge), dtype=bool)
        ratio = growth_weight(pts[off], problem.growth_p) / growth_weight(edge, problem.growth_p)
        w_off = w[off] * ratio[:, None]
        c_off = np.zeros(len(edge))
        if (~in_s).any():
            w_off[~in_s] = 0.0
            c_off[~in_s] = np.asarray(problem.g(t, pts[off][~in_s]), dtype=float)
        w[off] = w_off
        const[off] = c_off
    return idx, w, const


@dataclass
class ValueField:
    grid: Grid
    values: np.ndarray
    t: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.size)

    def growth_constant(self, p):
        """Smallest C with |u(x)| <= C (1 + |x|^p) on the lattice."""
        return float(np.max(np.abs(self.values) / growth_weight(self.grid.nodes, p)))

    def evaluate(self, points, problem, t=None):
        t = self.t if t is None else t
        idx, w, const = closure_stencil(self.grid, problem, t, points)
        return np.sum(w * self.values[idx], axis=1) + const

    def reshaped(self):
        return self.values.reshape(self.grid.shape)

    def copy(self):
        return ValueField(self.grid, self.values.copy(), self.t, dict(self.meta))


@dataclass
class Policy:
    """Per-node decisions at one time level.

    ``region`` holds CONTINUE / INTERVENE / STOPPED; ``beta_index`` is the
    maximizing control row (meaningful on continuation nodes); ``zeta_index``
    is the chosen candidate of the node's transaction list (-1 if none).
    """

    region: np.ndarray
    beta_index: np.ndarray
    zeta_index: np.ndarray
    t: Optional[float] = None

    def counts(self):
        return {REGION_NAMES[k]: int(np.sum(self.region == k)) for k in REGION_NAMES}

"""Keyed counter-based random streams, one per path index.

Draws are addressed by ``(seed, path, step, block)``; each address yields
two doubles in (0, 1). Any batching or thread schedule therefore sees
the same numbers for the same path.
"""
import numpy as np
from scipy.special import ndtri

from ._fallback import words_to_uniforms
from .kernels import philox4x32, philox_uniforms

SEQUENTIAL_BLOCK = 0xFFFFFFFF


def _key(seed):
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return (seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF)


def uniform_pairs(seed, paths, step, block):
    """Two uniforms per path for one (step, block) address."""
    return philox_uniforms(paths, int(step), int(block), _key(seed))


class PathStream:
    """Sequential view of one path's stream, for scalar APIs.

    Offers the ``random`` / ``standard_normal`` subset of
    ``numpy.random.Generator`` that the Lévy sampler needs.
    """

    def __init__(self, seed, path=0):
        self.seed = int(seed)
        self.path = int(path)
        self._counter = 0

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        npairs = (n + 1) // 2
        steps = np.arange(self._counter, self._counter + npairs, dtype=np.uint64)
        self._counter += npairs
        ctr = np.empty((npairs, 4), dtype=np.uint32)
        ctr[:, 0] = (steps & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        ctr[:, 1] = np.uint32(self.path & 0xFFFFFFFF)
        ctr[:, 2] = np.uint32((self.path >> 32) & 0xFFFFFFFF)
        ctr[:, 3] = np.uint32(SEQUENTIAL_BLOCK)
        u = words_to_uniforms(philox4x32(ctr, _key(self.seed))).ravel()[:n]
        return float(u[0]) if size is None else u.reshape(size)

    def standard_normal(self, size=None):
        u = self.random(size)
        return float(ndtri(u)) if size is None else ndtri(u)

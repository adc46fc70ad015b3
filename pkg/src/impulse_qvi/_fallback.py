"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and the same floating-point evaluation order, so both backends return
bitwise-identical arrays on IEEE hardware.
"""
import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def philox4x32(counters, key, rounds=10):
    """Philox4x32 block cipher applied row-wise to ``counters`` (n, 4) uint32."""
    ctr = np.ascontiguousarray(counters, dtype=np.uint32)
    if ctr.ndim != 2 or ctr.shape[1] != 4:
        raise ValueError("counters must have shape (n, 4)")
    k0, k1 = (int(v) & 0xFFFFFFFF for v in key)
    c0 = ctr[:, 0].astype(np.uint64)
    c1 = ctr[:, 1].astype(np.uint64)
    c2 = ctr[:, 2].astype(np.uint64)
    c3 = ctr[:, 3].astype(np.uint64)
    for r in range(rounds):
        if r:
            k0 = (k0 + PHILOX_W0) & 0xFFFFFFFF
            k1 = (k1 + PHILOX_W1) & 0xFFFFFFFF
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (hi1 ^ c1 ^ np.uint64(k0), lo1,
                          hi0 ^ c3 ^ np.uint64(k1), lo0)
    out = np.empty(ctr.shape, dtype=np.uint32)
    out[:, 0] = c0
    out[:, 1] = c1
    out[:, 2] = c2
    out[:, 3] = c3
    return out


def words_to_uniforms(words):
    """(n, 4) uint32 -> (n, 2) doubles in the open interval (0, 1)."""
    w = words.astype(np.uint64)
    a = (w[:, 0::2] >> np.uint64(5)).astype(np.float64)
    b = (w[:, 1::2] >> np.uint64(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 9007199254740992.0


def philox_uniforms(paths, step, block, key, rounds=10):
    """Two uniforms per path from counter (step, path lo, path hi, block)."""
    paths = np.asarray(paths, dtype=np.uint64)
    ctr = np.empty((paths.shape[0], 4), dtype=np.uint32)
    ctr[:, 0] = np.uint32(int(step) & 0xFFFFFFFF)
    ctr[:, 1] = (paths & _MASK32).astype(np.uint32)
    ctr[:, 2] = (paths >> _SHIFT32).astype(np.uint32)
    ctr[:, 3] = np.uint32(int(block) & 0xFFFFFFFF)
    return words_to_uniforms(philox4x32(ctr, key, rounds))


def interp_stencil(axes, points):
    """Multilinear interpolation stencil of ``points`` (n, d) on a tensor grid.

    Points must already lie inside the bounding box. Returns flat node
    indices and nonnegative weights, both of shape (n, 2**d); corner order
    is binary with axis 0 as the most significant bit.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n, d = pts.shape
    shape = [len(a) for a in axes]
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    lo = np.empty((n, d), dtype=np.int64)
    theta = np.empty((n, d), dtype=np.float64)
    for k, a in enumerate(axes):
        a = np.asarray(a, dtype=np.float64)
        j = np.searchsorted(a, pts[:, k], side="right") - 1
        j = np.clip(j, 0, len(a) - 2)
        lo[:, k] = j
        theta[:, k] = (pts[:, k] - a[j]) / (a[j + 1] - a[j])
    ncorner = 1 << d
    idx = np.zeros((n, ncorner), dtype=np.int64)
    w = np.ones((n, ncorner), dtype=np.float64)
    for c in range(ncorner):
        for k in range(d):
            bit = (c >> (d - 1 - k)) & 1
            if bit:
                idx[:, c] += (lo[:, k] + 1) * strides[k]
                w[:, c] *= theta[:, k]
            else:
                idx[:, c] += lo[:, k] * strides[k]
                w[:, c] *= 1.0 - theta[:, k]
    return idx, w


def gather_max(u, idx, w, add, valid):
    """Row-wise ``max_c (sum_s w[n,c,s] * u[idx[n,c,s]] + add[n,c])`` over valid c.

    Ties go to the smallest candidate index. Rows without a valid
    candidate return ``-inf`` and index -1.
    """
    u = np.asarray(u, dtype=np.float64)
    n, ncand, nsten = idx.shape
    vals = w[:, :, 0] * u[idx[:, :, 0]]
    for s in range(1, nsten):
        vals = vals + w[:, :, s] * u[idx[:, :, s]]
    vals = vals + add
    vals = np.where(valid, vals, -np.inf)
    arg = np.argmax(vals, axis=1)
    best = vals[np.arange(n), arg]
    arg = np.where(np.isneginf(best) & ~valid.any(axis=1), -1, arg)
    return best, arg.astype(np.int64)

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_fallback.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

cdef uint64_t M0 = 0xD2511F53
cdef uint64_t M1 = 0xCD9E8D57
cdef uint32_t W0 = 0x9E3779B9
cdef uint32_t W1 = 0xBB67AE85
cdef uint64_t LO32 = 0xFFFFFFFF


def philox4x32(counters, key, int rounds=10):
    cdef cnp.ndarray[uint32_t, ndim=2, mode="c"] ctr = np.ascontiguousarray(
        counters, dtype=np.uint32)
    if ctr.shape[1] != 4:
        raise ValueError("counters must have shape (n, 4)")
    cdef Py_ssize_t n = ctr.shape[0]
    cdef cnp.ndarray[uint32_t, ndim=2, mode="c"] out = np.empty((n, 4), dtype=np.uint32)
    cdef uint32_t key0 = <uint32_t>(int(key[0]) & 0xFFFFFFFF)
    cdef uint32_t key1 = <uint32_t>(int(key[1]) & 0xFFFFFFFF)
    cdef uint32_t[:, ::1] cv = ctr
    cdef uint32_t[:, ::1] ov = out
    cdef Py_ssize_t i
    cdef int r
    cdef uint32_t k0, k1, c0, c1, c2, c3
    cdef uint64_t p0, p1
    with nogil:
        for i in range(n):
            k0 = key0
            k1 = key1
            c0 = cv[i, 0]
            c1 = cv[i, 1]
            c2 = cv[i, 2]
            c3 = cv[i, 3]
            for r in range(rounds):
                if r:
                    k0 = k0 + W0
                    k1 = k1 + W1
                p0 = M0 * <uint64_t>c0
                p1 = M1 * <uint64_t>c2
                c0, c1, c2, c3 = (<uint32_t>(p1 >> 32) ^ c1 ^ k0, <uint32_t>p1,
                                  <uint32_t>(p0 >> 32) ^ c3 ^ k1, <uint32_t>p0)
            ov[i, 0] = c0
            ov[i, 1] = c1
            ov[i, 2] = c2
            ov[i, 3] = c3
    return out


def philox_uniforms(paths, uint64_t step, uint64_t block, key, int rounds=10):
    cdef cnp.ndarray[uint64_t, ndim=1, mode="c"] pv = np.ascontiguousarray(paths, dtype=np.uint64)
    cdef Py_ssize_t n = pv.shape[0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.empty((n, 2), dtype=np.float64)
    cdef uint64_t[::1] pp = pv
    cdef double[:, ::1] ov = out
    cdef uint32_t key0 = <uint32_t>(int(key[0]) & 0xFFFFFFFF)
    cdef uint32_t key1 = <uint32_t>(int(key[1]) & 0xFFFFFFFF)
    cdef uint32_t s32 = <uint32_t>(step & LO32)
    cdef uint32_t b32 = <uint32_t>(block & LO32)
    cdef Py_ssize_t i
    cdef int r
    cdef uint32_t k0, k1, c0, c1, c2, c3
    cdef uint64_t p0, p1
    with nogil:
        for i in range(n):
            k0 = key0
            k1 = key1
            c0 = s32
            c1 = <uint32_t>(pp[i] & LO32)
            c2 = <uint32_t>(pp[i] >> 32)
            c3 = b32
            for r in range(rounds):
                if r:
                    k0 = k0 + W0
                    k1 = k1 + W1
                p0 = M0 * <uint64_t>c0
                p1 = M1 * <uint64_t>c2
                c0, c1, c2, c3 = (<uint32_t>(p1 >> 32) ^ c1 ^ k0, <uint32_t>p1,
                                  <uint32_t>(p0 >> 32) ^ c3 ^ k1, <uint32_t>p0)
            # 53-bit doubles in (0, 1) from word pairs (0, 1) and (2, 3)
            ov[i, 0] = ((c0 >> 5) * 67108864.0 + (c1 >> 6) + 0.5) / 9007199254740992.0
            ov[i, 1] = ((c2 >> 5) * 67108864.0 + (c3 >> 6) + 0.5) / 9007199254740992.0
    return out


def interp_stencil(axes, points):
    cdef cnp.ndarray[double, ndim=2, mode="c"] pts = np.ascontiguousarray(
        points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef int d = pts.shape[1]
    cdef int ncorner = 1 << d
    cdef list ax = [np.ascontiguousarray(a, dtype=np.float64) for a in axes]
    cdef cnp.ndarray[int64_t, ndim=1] shape = np.array([len(a) for a in ax], dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] strides = np.ones(d, dtype=np.int64)
    cdef int k
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    cdef cnp.ndarray[int64_t, ndim=2, mode="c"] lo = np.empty((n, d), dtype=np.int64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] theta = np.empty((n, d), dtype=np.float64)
    cdef double[::1] a
    cdef Py_ssize_t i, m, left, right, mid
    cdef double p
    for k in range(d):
        a = ax[k]
        m = a.shape[0]
        for i in range(n):
            p = pts[i, k]
            # last j with a[j] <= p, clipped to [0, m-2]
            left = 0
            right = m
            while left < right:
                mid = (left + right) >> 1
                if a[mid] <= p:
                    left = mid + 1
                else:
                    right = mid
            left = left - 1
            if left < 0:
                left = 0
            elif left > m - 2:
                left = m - 2
            lo[i, k] = left
            theta[i, k] = (p - a[left]) / (a[left + 1] - a[left])
    cdef cnp.ndarray[int64_t, ndim=2, mode="c"] idx = np.zeros((n, ncorner), dtype=np.int64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] w = np.ones((n, ncorner), dtype=np.float64)
    cdef int c, bit
    for i in range(n):
        for c in range(ncorner):
            for k in range(d):
                bit = (c >> (d - 1 - k)) & 1
                if bit:
                    idx[i, c] += (lo[i, k] + 1) * strides[k]
                    w[i, c] *= theta[i, k]
                else:
                    idx[i, c] += lo[i, k] * strides[k]
                    w[i, c] *= 1.0 - theta[i, k]
    return idx, w


def gather_max(u, idx, w, add, valid):
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef int64_t[:, :, ::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] av = np.ascontiguousarray(add, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] vv = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t n = iv.shape[0]
    cdef Py_ssize_t ncand = iv.shape[1]
    cdef Py_ssize_t nsten = iv.shape[2]
    best_arr = np.empty(n, dtype=np.float64)
    arg_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] best = best_arr
    cdef int64_t[::1] arg = arg_arr
    cdef Py_ssize_t i, c, s
    cdef double acc, top
    cdef int64_t where
    with nogil:
        for i in range(n):
            top = -1.0 / 0.0
            where = -1
            for c in range(ncand):
                if not vv[i, c]:
                    continue
                acc = wv[i, c, 0] * uv[iv[i, c, 0]]
                for s in range(1, nsten):
                    acc = acc + wv[i, c, s] * uv[iv[i, c, s]]
                acc = acc + av[i, c]
                if where < 0 or acc > top:
                    top = acc
                    where = c
            best[i] = top
            arg[i] = where
    return best_arr, arg_arr

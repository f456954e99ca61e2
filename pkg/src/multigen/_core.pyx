# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled counter-based random kernels (see ``_fallback`` for the reference)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, log, sqrt
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t STREAM_MULT = 0xD1B54A32D192ED03ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t x) noexcept nogil:
    x ^= x >> 30
    x *= M1
    x ^= x >> 27
    x *= M2
    return x ^ (x >> 31)


cdef inline uint64_t _bits(uint64_t key, uint64_t stream, uint64_t counter) noexcept nogil:
    return _mix(_mix(key ^ (stream * STREAM_MULT)) + (counter + 1) * GOLDEN)


cdef inline double _normal(uint64_t key, uint64_t stream, uint64_t slot) noexcept nogil:
    cdef uint64_t b0 = _bits(key, stream, 2 * slot)
    cdef uint64_t b1 = _bits(key, stream, 2 * slot + 1)
    cdef double u1 = (<double>(b0 >> 11) + 1.0) * INV_2_53
    cdef double u2 = <double>(b1 >> 11) * INV_2_53
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


def seed_key(seed):
    return int(_mix(<uint64_t>seed + GOLDEN))


def raw_bits(key, streams, counter):
    cdef const uint64_t[:] s = np.ascontiguousarray(streams, dtype=np.uint64)
    cdef Py_ssize_t i, n = s.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[:] o = out
    cdef uint64_t k = key, c = counter
    with nogil:
        for i in range(n):
            o[i] = _bits(k, s[i], c)
    return out


def normals(key, streams, slot):
    cdef const uint64_t[:] s = np.ascontiguousarray(streams, dtype=np.uint64)
    cdef Py_ssize_t i, n = s.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    cdef uint64_t k = key, sl = slot
    with nogil:
        for i in range(n):
            o[i] = _normal(k, s[i], sl)
    return out


def mixed_normals(key, own, family, slot, double shared):
    cdef const uint64_t[:] a = np.ascontiguousarray(own, dtype=np.uint64)
    cdef const uint64_t[:] f = np.ascontiguousarray(family, dtype=np.uint64)
    cdef Py_ssize_t i, n = a.shape[0]
    if f.shape[0] != n:
        raise ValueError("own and family must have equal length")
    out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    cdef uint64_t k = key, sl = slot
    cdef double ws = sqrt(shared), wi = sqrt(1.0 - shared)
    with nogil:
        if shared == 0.0:
            for i in range(n):
                o[i] = _normal(k, a[i], sl)
        else:
            for i in range(n):
                o[i] = ws * _normal(k, f[i], sl + 1) + wi * _normal(k, a[i], sl)
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout kernel; arithmetic mirrors ``_rollout_py`` draw for draw."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t ROLLOUT_MULT = 0xD1B54A32D192ED03ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t state, uint64_t draw) noexcept nogil:
    return <double>(mix64(state + (draw + 1) * GOLDEN) >> 11) * INV_2_53


cdef inline Py_ssize_t categorical(const double* p, Py_ssize_t n, double u) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t k, last = 0
    for k in range(n):
        if p[k] > 0.0:
            last = k
        acc += p[k]
        if u < acc:
            return k
    return last


def rollout_batch(const double[:, :, :, ::1] P, const double[:, :, :, ::1] R,
                  bint bernoulli, Py_ssize_t s1, const int64_t[::1] action_counts,
                  const int64_t[:, :, ::1] pol_start, const int64_t[:, :, ::1] pol_count,
                  const double[::1] pol_w, const double[:, ::1] pol_fac,
                  const int64_t[::1] aoff, const double[::1] cover_p, bint cycle,
                  const double[:, ::1] override, const signed char[::1] override_mask,
                  uint64_t key, int64_t start, Py_ssize_t count, Py_ssize_t stop):
    cdef Py_ssize_t m = action_counts.shape[0]
    cdef Py_ssize_t num_cover = pol_start.shape[0]
    cdef Py_ssize_t num_states = P.shape[3]
    states_a = np.zeros((count, stop + 1), dtype=np.int64)
    actions_a = np.zeros((count, stop, m), dtype=np.int64)
    rewards_a = np.zeros((count, stop, m), dtype=np.float64)
    picks_a = np.zeros(count, dtype=np.int64)
    cdef int64_t[:, ::1] states = states_a
    cdef int64_t[:, :, ::1] actions = actions_a
    cdef double[:, :, ::1] rewards = rewards_a
    cdef int64_t[::1] picks = picks_a

    cdef Py_ssize_t idx, h, p, ell, s, c0, nc, c, a, jidx, lo, ncov = cover_p.shape[0]
    cdef uint64_t st, d, j
    cdef double r
    cdef bint final
    with nogil:
        for idx in range(count):
            j = <uint64_t>(start + idx)
            st = mix64(key + j * ROLLOUT_MULT)
            d = 0
            if cycle:
                ell = <Py_ssize_t>((start + idx) % num_cover)
            else:
                ell = categorical(&cover_p[0], ncov, uniform(st, d))
                d += 1
            picks[idx] = ell
            s = s1
            states[idx, 0] = s
            for h in range(stop):
                c0 = pol_start[ell, h, s]
                nc = pol_count[ell, h, s]
                c = c0 + categorical(&pol_w[c0], nc, uniform(st, d))
                d += 1
                final = h == stop - 1
                jidx = 0
                for p in range(m):
                    lo = aoff[p]
                    if final and override_mask[p]:
                        a = categorical(&override[s, lo], action_counts[p], uniform(st, d))
                    else:
                        a = categorical(&pol_fac[c, lo], action_counts[p], uniform(st, d))
                    d += 1
                    actions[idx, h, p] = a
                    jidx = jidx * action_counts[p] + a
                for p in range(m):
                    if bernoulli:
                        r = 1.0 if uniform(st, d) < R[h, s, jidx, p] else 0.0
                        d += 1
                    else:
                        r = R[h, s, jidx, p]
                    rewards[idx, h, p] = r
                s = categorical(&P[h, s, jidx, 0], num_states, uniform(st, d))
                d += 1
                states[idx, h + 1] = s
    return states_a, actions_a, rewards_a, picks_a

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the layered path kernels (same contract as _kernels_py)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs, isfinite

cnp.import_array()


def backward_min_plus(W, terminal, double tol=1e-12):
    cdef double[:, :, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t L1 = w.shape[0], N = w.shape[1]
    cost_arr = np.empty((L1 + 1, N))
    choice_arr = np.full((L1, N), -1, dtype=np.int64)
    cdef double[:, ::1] cost = cost_arr
    cdef long long[:, ::1] choice = choice_arr
    cdef double[::1] term = np.ascontiguousarray(terminal, dtype=np.float64)
    cdef Py_ssize_t layer, a, b
    cdef double best, v, thresh
    for a in range(N):
        cost[L1, a] = term[a]
    for layer in range(L1 - 1, -1, -1):
        for a in range(N):
            best = INFINITY
            for b in range(N):
                v = w[layer, a, b] + cost[layer + 1, b]
                if v < best:
                    best = v
            cost[layer, a] = best
            if isfinite(best):
                thresh = best + tol * (1.0 + fabs(best))
                for b in range(N):
                    if w[layer, a, b] + cost[layer + 1, b] <= thresh:
                        choice[layer, a] = b
                        break
    return cost_arr, choice_arr


def soc_edge_weights(prices, travel, double kappa, limits, double h, Py_ssize_t z, admissible):
    cdef double[::1] p = np.ascontiguousarray(prices, dtype=np.float64)
    cdef double[:, ::1] D = np.ascontiguousarray(travel, dtype=np.float64)
    cdef double[:, ::1] lim = np.ascontiguousarray(limits, dtype=np.float64)
    cdef cnp.uint8_t[::1] adm = np.ascontiguousarray(admissible, dtype=np.uint8)
    cdef Py_ssize_t n = D.shape[0], Z = z + 1
    out = np.full((n * Z, n * Z), np.inf)
    cdef double[:, ::1] W = out
    cdef Py_ssize_t i, j, k1, k2
    cdef double du, slack = 1e-9 * (1.0 + h)
    for i in range(n):
        if not adm[i]:
            continue
        for j in range(n):
            if not adm[j] or not isfinite(D[i, j]):
                continue
            for k1 in range(Z):
                for k2 in range(Z):
                    du = (k2 - k1) * h
                    if fabs(du) <= lim[i, j] + slack:
                        W[i * Z + k1, j * Z + k2] = p[i] * du + kappa * D[i, j]
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: SMO dual solver and exact rank-statistic null counts.

Semantics are identical to ``_fallback.py``; keep the two in lockstep.
"""

import numpy as np

from libc.math cimport INFINITY

cdef double TAU = 1e-12


def smo_solve(double[:, ::1] K, double[::1] y, double C, double tol, long max_iter):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double[::1] alpha = np.zeros(n)
    cdef double[::1] G = -np.ones(n)
    cdef double[::1] QD = np.empty(n)
    cdef double gmax, gmin, score, b, q, obj, best_obj
    cdef double yi, yj, ai, aj, ai_old, aj_old, delta, diff, s, dai, daj
    cdef bint is_up, is_low
    cdef long it = 0
    cdef double violation = INFINITY
    cdef bint converged = False

    for t in range(n):
        QD[t] = K[t, t]

    while it < max_iter:
        gmax = -INFINITY
        gmin = INFINITY
        i = -1
        for t in range(n):
            score = -y[t] * G[t]
            if y[t] > 0:
                is_up = alpha[t] < C
                is_low = alpha[t] > 0
            else:
                is_up = alpha[t] > 0
                is_low = alpha[t] < C
            if is_up and score > gmax:
                gmax = score
                i = t
            if is_low and score < gmin:
                gmin = score
        if i < 0 or gmin == INFINITY:
            violation = 0.0
            converged = True
            break
        violation = gmax - gmin
        if violation < tol:
            converged = True
            break

        j = -1
        best_obj = INFINITY
        for t in range(n):
            if y[t] > 0:
                is_low = alpha[t] > 0
            else:
                is_low = alpha[t] < C
            if not is_low:
                continue
            score = -y[t] * G[t]
            b = gmax - score
            if b <= 0:
                continue
            q = QD[i] + QD[t] - 2.0 * K[i, t]
            if not q > 0:
                q = TAU
            obj = -(b * b) / q
            if obj < best_obj:
                best_obj = obj
                j = t
        if j < 0:
            converged = True
            break

        yi = y[i]
        yj = y[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        ai = ai_old
        aj = aj_old
        if yi != yj:
            q = QD[i] + QD[j] + 2.0 * (yi * yj * K[i, j])
            if q <= 0:
                q = TAU
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            q = QD[i] + QD[j] - 2.0 * (yi * yj * K[i, j])
            if q <= 0:
                q = TAU
            delta = (G[i] - G[j]) / q
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai = C
                    aj = s - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = s
            if s > C:
                if aj > C:
                    aj = C
                    ai = s - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = s
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - ai_old
        daj = aj - aj_old
        for t in range(n):
            G[t] += (yi * y[t] * K[i, t]) * dai + (yj * y[t] * K[j, t]) * daj
        it += 1

    rho = _compute_rho(alpha, G, y, C)
    return np.asarray(alpha), rho, it, float(violation), bool(converged)


cdef double _compute_rho(double[::1] alpha, double[::1] G, double[::1] y, double C):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t k
    cdef double ub = INFINITY
    cdef double lb = -INFINITY
    cdef double yG
    cdef double sum_free = 0.0
    cdef long nr_free = 0
    for k in range(n):
        yG = y[k] * G[k]
        if alpha[k] >= C:
            if y[k] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif alpha[k] <= 0:
            if y[k] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            nr_free += 1
            sum_free += yG
    if nr_free > 0:
        return sum_free / nr_free
    return (ub + lb) / 2.0


def signed_rank_counts(doubled_ranks):
    cdef long long[::1] r = np.ascontiguousarray(doubled_ranks, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t total = 0
    cdef Py_ssize_t k, s, v
    for k in range(n):
        total += r[k]
    out = np.zeros(total + 1, dtype=np.int64)
    cdef long long[::1] c = out
    c[0] = 1
    for k in range(n):
        v = r[k]
        s = total
        while s >= v:
            c[s] += c[s - v]
            s -= 1
    return out


def rank_sum_counts(doubled_ranks, Py_ssize_t n_pick):
    cdef long long[::1] r = np.ascontiguousarray(doubled_ranks, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t total = 0
    cdef Py_ssize_t idx, k, s, v, top
    for idx in range(n):
        total += r[idx]
    out = np.zeros((n_pick + 1, total + 1), dtype=np.int64)
    cdef long long[:, ::1] c = out
    c[0, 0] = 1
    for idx in range(n):
        v = r[idx]
        top = idx + 1 if idx + 1 < n_pick else n_pick
        k = top
        while k >= 1:
            s = total
            while s >= v:
                c[k, s] += c[k - 1, s - v]
                s -= 1
            k -= 1
    return out[n_pick].copy()

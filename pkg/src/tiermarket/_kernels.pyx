# cython: language_level=3
"""Compiled hot loops. Same API and results as tiermarket._fallback."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef double COMPLETION_RTOL = 1e-9


def greedy_fill(order, J, M):
    cdef const cnp.int64_t[::1] o = np.ascontiguousarray(order, dtype=np.int64)
    cdef const double[::1] Jv = np.ascontiguousarray(J, dtype=np.float64)
    cdef double[::1] cap = np.array(M, dtype=np.float64)
    cdef Py_ssize_t N = Jv.shape[0], T = cap.shape[0]
    x_arr = np.zeros((N, T))
    cdef double[:, ::1] x = x_arr
    cdef Py_ssize_t k, i, t = 0
    cdef double need, take
    for k in range(o.shape[0]):
        i = o[k]
        need = Jv[i]
        while need > COMPLETION_RTOL * Jv[i] and t < T:
            take = need if need < cap[t] else cap[t]
            x[i, t] += take
            need -= take
            cap[t] -= take
            if cap[t] <= 0.0:
                t += 1
    return x_arr


cdef inline void _reverse(cnp.int64_t* a, Py_ssize_t lo, Py_ssize_t hi) nogil:
    cdef cnp.int64_t tmp
    while lo < hi:
        tmp = a[lo]
        a[lo] = a[hi]
        a[hi] = tmp
        lo += 1
        hi -= 1


cdef inline bint _next_permutation(cnp.int64_t* a, Py_ssize_t n) nogil:
    cdef Py_ssize_t i = n - 2, j
    cdef cnp.int64_t tmp
    while i >= 0 and a[i] >= a[i + 1]:
        i -= 1
    if i < 0:
        return False
    j = n - 1
    while a[j] <= a[i]:
        j -= 1
    tmp = a[i]
    a[i] = a[j]
    a[j] = tmp
    _reverse(a, i + 1, n - 1)
    return True


def best_ordering(U, J, M):
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] Jv = np.ascontiguousarray(J, dtype=np.float64)
    cdef double[::1] cumcap = np.cumsum(np.asarray(M, dtype=np.float64))
    cdef Py_ssize_t N = Uv.shape[0], T = cumcap.shape[0]
    perm_arr = np.arange(N, dtype=np.int64)
    best_arr = perm_arr.copy()
    cdef cnp.int64_t[::1] perm = perm_arr
    cdef cnp.int64_t[::1] best = best_arr
    cdef double best_total = -1.0, total, used, target
    cdef Py_ssize_t k, t, i
    cdef bint more = True
    with nogil:
        while more:
            total = 0.0
            used = 0.0
            t = 0
            for k in range(N):
                i = perm[k]
                used = used + Jv[i]
                target = used - COMPLETION_RTOL * Jv[i]
                while t < T and cumcap[t] < target:
                    t += 1
                if t == T:
                    break
                total = total + Uv[i, t]
            if total > best_total:
                best_total = total
                for k in range(N):
                    best[k] = perm[k]
            more = _next_permutation(&perm[0], N)
    return float(best_total), best_arr


def han_project(y, M, delta, double eps=1e-10, Py_ssize_t max_iter=100000):
    cdef const double[:, :, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(delta, dtype=np.float64)
    cdef Py_ssize_t K = yv.shape[0], N = yv.shape[1], T = yv.shape[2]
    z_arr = np.array(yv, dtype=np.float64)
    z1_arr = z_arr.copy()
    z2_arr = z_arr.copy()
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, ::1] z1 = z1_arr
    cdef double[:, :, ::1] z2 = z2_arr
    corr_arr = np.zeros(T)
    cdef double[::1] corr = corr_arr
    cdef double denom = 0.0
    cdef Py_ssize_t k, i, t, it
    for k in range(K):
        denom += d[k] * d[k]
    denom *= N
    cdef double s, a, b, znew, diff, ref
    cdef bint converged = False
    it = 0
    with nogil:
        while it < max_iter:
            it += 1
            for t in range(T):
                s = 0.0
                for k in range(K):
                    for i in range(N):
                        s += d[k] * z1[k, i, t]
                s = (s - Mv[t]) / denom
                corr[t] = s if s > 0.0 else 0.0
            diff = 0.0
            ref = 0.0
            for k in range(K):
                for i in range(N):
                    for t in range(T):
                        a = z1[k, i, t] - d[k] * corr[t]
                        b = z2[k, i, t] if z2[k, i, t] > 0.0 else 0.0
                        znew = 0.5 * (a + b)
                        z1[k, i, t] = znew + z1[k, i, t] - a
                        z2[k, i, t] = znew + z2[k, i, t] - b
                        diff += (znew - z[k, i, t]) * (znew - z[k, i, t])
                        ref += z[k, i, t] * z[k, i, t]
                        z[k, i, t] = znew
            if sqrt(diff) <= eps * (sqrt(ref) if ref > 0.0 else 1e-300):
                converged = True
                break
    return z_arr, int(it), bool(converged)


def gradient_steps(q, S, M, double kappa, Py_ssize_t steps, double floor):
    out = np.array(q, dtype=np.float64)
    cdef double[::1] qv = out
    cdef const double[::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef Py_ssize_t g, t, T = qv.shape[0]
    cdef double qq, nxt, target
    for g in range(steps):
        for t in range(T):
            target = Sv[t] / Mv[t]
            qq = qv[t] if qv[t] > floor else floor
            nxt = qv[t] + kappa * (Sv[t] / qq - Mv[t])
            if qv[t] <= target:
                if nxt > target:
                    nxt = target if target > qv[t] else qv[t]
            else:
                if nxt < target:
                    nxt = target
                if nxt < 0.5 * qv[t]:
                    nxt = 0.5 * qv[t]
            qv[t] = nxt if nxt > floor else floor
    return out

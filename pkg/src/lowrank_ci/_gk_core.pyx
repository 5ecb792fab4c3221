# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Golub-Kahan-Reinsch SVD kernel.

Same algorithm and statement order as ``_gk_fallback.gk_svd``; only the
loops are typed. Handles rows >= cols; the Python wrapper transposes.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, hypot

from lowrank_ci._gk_fallback import MAX_SWEEPS
from lowrank_ci.errors import SvdConvergenceError

cnp.import_array()

cdef double EPS = np.finfo(np.float64).eps
cdef int MAX_SWEEPS_C = MAX_SWEEPS


cdef inline double _sign(double a, double b) nogil:
    return fabs(a) if b >= 0.0 else -fabs(a)


def gk_svd(a_in):
    """Thin SVD ``a = u diag(w) v^T`` of a tall matrix; ``w`` unsorted."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a_arr = np.array(a_in, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t m = a_arr.shape[0]
    cdef Py_ssize_t n = a_arr.shape[1]
    if m < n:
        raise ValueError("gk_svd expects rows >= cols")
    w_arr = np.zeros(n)
    v_arr = np.zeros((n, n))
    rv1_arr = np.zeros(n)
    cdef double[:, ::1] a = a_arr
    cdef double[::1] w = w_arr
    cdef double[:, ::1] v = v_arr
    cdef double[::1] rv1 = rv1_arr
    cdef int status
    cdef Py_ssize_t bad_k = 0
    cdef int bad_its = 0
    with nogil:
        status = _gk_svd_inplace(a, w, v, rv1, m, n, MAX_SWEEPS_C, &bad_k, &bad_its)
    if status != 0:
        raise SvdConvergenceError(bad_k, bad_its)
    return a_arr, w_arr, v_arr



cdef int _gk_svd_inplace(double[:, ::1] a, double[::1] w, double[:, ::1] v,
                         double[::1] rv1, Py_ssize_t m, Py_ssize_t n,
                         int max_sweeps, Py_ssize_t* bad_k, int* bad_its) noexcept nogil:
    cdef Py_ssize_t i, j, k, l = 0, nm = 0, jj
    cdef int its, flag
    cdef double g = 0.0, scale = 0.0, anorm = 0.0, s, f, h, c, x, y, z, tol

    for i in range(n):
        l = i + 1
        rv1[i] = scale * g
        g = 0.0
        s = 0.0
        scale = 0.0
        for k in range(i, m):
            scale += fabs(a[k, i])
        if scale != 0.0:
            for k in range(i, m):
                a[k, i] /= scale
                s += a[k, i] * a[k, i]
            f = a[i, i]
            g = -_sign(sqrt(s), f)
            h = f * g - s
            a[i, i] = f - g
            for j in range(l, n):
                s = 0.0
                for k in range(i, m):
                    s += a[k, i] * a[k, j]
                f = s / h
                for k in range(i, m):
                    a[k, j] += f * a[k, i]
            for k in range(i, m):
                a[k, i] *= scale
        w[i] = scale * g

        g = 0.0
        s = 0.0
        scale = 0.0
        if i != n - 1:
            for k in range(l, n):
                scale += fabs(a[i, k])
            if scale != 0.0:
                for k in range(l, n):
                    a[i, k] /= scale
                    s += a[i, k] * a[i, k]
                f = a[i, l]
                g = -_sign(sqrt(s), f)
                h = f * g - s
                a[i, l] = f - g
                for k in range(l, n):
                    rv1[k] = a[i, k] / h
                for j in range(l, m):
                    s = 0.0
                    for k in range(l, n):
                        s += a[j, k] * a[i, k]
                    for k in range(l, n):
                        a[j, k] += s * rv1[k]
                for k in range(l, n):
                    a[i, k] *= scale
        anorm = max(anorm, fabs(w[i]) + fabs(rv1[i]))

    for i in range(n - 1, -1, -1):
        if i < n - 1:
            if g != 0.0:
                for j in range(l, n):
                    v[j, i] = (a[i, j] / a[i, l]) / g
                for j in range(l, n):
                    s = 0.0
                    for k in range(l, n):
                        s += a[i, k] * v[k, j]
                    for k in range(l, n):
                        v[k, j] += s * v[k, i]
            for j in range(l, n):
                v[i, j] = 0.0
                v[j, i] = 0.0
        v[i, i] = 1.0
        g = rv1[i]
        l = i

    for i in range(n - 1, -1, -1):
        l = i + 1
        g = w[i]
        for j in range(l, n):
            a[i, j] = 0.0
        if g != 0.0:
            g = 1.0 / g
            for j in range(l, n):
                s = 0.0
                for k in range(l, m):
                    s += a[k, i] * a[k, j]
                f = (s / a[i, i]) * g
                for k in range(i, m):
                    a[k, j] += f * a[k, i]
            for j in range(i, m):
                a[j, i] *= g
        else:
            for j in range(i, m):
                a[j, i] = 0.0
        a[i, i] += 1.0

    tol = EPS * anorm
    for k in range(n - 1, -1, -1):
        its = 0
        while True:
            its += 1
            flag = 1
            for l in range(k, -1, -1):
                nm = l - 1
                if fabs(rv1[l]) <= tol:
                    flag = 0
                    break
                if fabs(w[nm]) <= tol:
                    break
            if flag:
                c = 0.0
                s = 1.0
                for i in range(l, k + 1):
                    f = s * rv1[i]
                    rv1[i] = c * rv1[i]
                    if fabs(f) <= tol:
                        break
                    g = w[i]
                    h = hypot(f, g)
                    w[i] = h
                    h = 1.0 / h
                    c = g * h
                    s = -f * h
                    for j in range(m):
                        y = a[j, nm]
                        z = a[j, i]
                        a[j, nm] = y * c + z * s
                        a[j, i] = z * c - y * s
            z = w[k]
            if l == k:
                if z < 0.0:
                    w[k] = -z
                    for j in range(n):
                        v[j, k] = -v[j, k]
                break
            if its >= max_sweeps:
                bad_k[0] = k
                bad_its[0] = its
                return 1
            x = w[l]
            nm = k - 1
            y = w[nm]
            g = rv1[nm]
            h = rv1[k]
            f = ((y - z) * (y + z) + (g - h) * (g + h)) / (2.0 * h * y)
            g = hypot(f, 1.0)
            f = ((x - z) * (x + z) + h * ((y / (f + _sign(g, f))) - h)) / x
            c = 1.0
            s = 1.0
            for j in range(l, nm + 1):
                i = j + 1
                g = rv1[i]
                y = w[i]
                h = s * g
                g = c * g
                z = hypot(f, h)
                rv1[j] = z
                c = f / z
                s = h / z
                f = x * c + g * s
                g = g * c - x * s
                h = y * s
                y *= c
                for jj in range(n):
                    x = v[jj, j]
                    z = v[jj, i]
                    v[jj, j] = x * c + z * s
                    v[jj, i] = z * c - x * s
                z = hypot(f, h)
                w[j] = z
                if z != 0.0:
                    z = 1.0 / z
                    c = f * z
                    s = h * z
                f = c * g + s * y
                x = c * y - s * g
                for jj in range(m):
                    y = a[jj, j]
                    z = a[jj, i]
                    a[jj, j] = y * c + z * s
                    a[jj, i] = z * c - y * s
            rv1[l] = 0.0
            rv1[k] = f
            w[k] = x
    return 0

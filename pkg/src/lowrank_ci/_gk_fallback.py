"""Pure-Python Golub-Kahan-Reinsch SVD.

Householder reduction to upper bidiagonal form, explicit accumulation of
the left and right transformations, then implicit-shift QR sweeps on the
bidiagonal. Mirrors ``_gk_core.pyx`` statement for statement; the row and
column updates are vectorised with numpy, the sweep logic stays in Python.

Only the case ``rows >= cols`` is handled here; callers transpose.
"""

import math

import numpy as np

from lowrank_ci.errors import SvdConvergenceError

MAX_SWEEPS = 75
_EPS = np.finfo(np.float64).eps


def _sign(a, b):
    return abs(a) if b >= 0.0 else -abs(a)


def gk_svd(a):
    """Thin SVD of a tall matrix.

    Returns ``(u, w, v)`` with ``u`` of shape (m, n), ``w`` of length n and
    ``v`` of shape (n, n) such that ``a = u @ diag(w) @ v.T``. Singular
    values are non-negative but unsorted.
    """
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    m, n = a.shape
    if m < n:
        raise ValueError("gk_svd expects rows >= cols")
    w = np.zeros(n)
    v = np.zeros((n, n))
    rv1 = np.zeros(n)
    g = scale = anorm = 0.0
    l = 0

    # Householder bidiagonalisation.
    for i in range(n):
        l = i + 1
        rv1[i] = scale * g
        g = s = scale = 0.0
        col = a[i:, i]
        scale = float(np.abs(col).sum())
        if scale != 0.0:
            col /= scale
            s = float(col @ col)
            f = col[0]
            g = -_sign(math.sqrt(s), f)
            h = f * g - s
            col[0] = f - g
            if l < n:
                fs = (col @ a[i:, l:]) / h
                a[i:, l:] += np.outer(col, fs)
            col *= scale
        w[i] = scale * g

        g = s = scale = 0.0
        if i != n - 1:
            row = a[i, l:]
            scale = float(np.abs(row).sum())
            if scale != 0.0:
                row /= scale
                s = float(row @ row)
                f = row[0]
                g = -_sign(math.sqrt(s), f)
                h = f * g - s
                row[0] = f - g
                rv1[l:] = row / h
                if l < m:
                    ss = a[l:, l:] @ row
                    a[l:, l:] += np.outer(ss, rv1[l:])
                row *= scale
        anorm = max(anorm, abs(w[i]) + abs(rv1[i]))

    # Right-hand transformations.
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            if g != 0.0:
                v[l:, i] = (a[i, l:] / a[i, l]) / g
                ss = a[i, l:] @ v[l:, l:]
                v[l:, l:] += np.outer(v[l:, i], ss)
            v[i, l:] = 0.0
            v[l:, i] = 0.0
        v[i, i] = 1.0
        g = rv1[i]
        l = i

    # Left-hand transformations.
    for i in range(n - 1, -1, -1):
        l = i + 1
        g = w[i]
        a[i, l:] = 0.0
        if g != 0.0:
            g = 1.0 / g
            if l < n:
                ss = a[l:, i] @ a[l:, l:]
                fs = (ss / a[i, i]) * g
                a[i:, l:] += np.outer(a[i:, i], fs)
            a[i:, i] *= g
        else:
            a[i:, i] = 0.0
        a[i, i] += 1.0

    tol = _EPS * anorm
    # Implicit-shift QR on the bidiagonal.
    for k in range(n - 1, -1, -1):
        its = 0
        while True:
            its += 1
            flag = True
            nm = 0
            for l in range(k, -1, -1):
                nm = l - 1
                if abs(rv1[l]) <= tol:
                    flag = False
                    break
                if abs(w[nm]) <= tol:
                    break
            if flag:
                # w[nm] is negligible: chase rv1[l] off with left rotations.
                c = 0.0
                s = 1.0
                for i in range(l, k + 1):
                    f = s * rv1[i]
                    rv1[i] = c * rv1[i]
                    if abs(f) <= tol:
                        break
                    g = w[i]
                    h = math.hypot(f, g)
                    w[i] = h
                    h = 1.0 / h
                    c = g * h
                    s = -f * h
                    y = a[:, nm].copy()
                    z = a[:, i].copy()
                    a[:, nm] = y * c + z * s
                    a[:, i] = z * c - y * s
            z = w[k]
            if l == k:
                if z < 0.0:
                    w[k] = -z
                    v[:, k] = -v[:, k]
                break
            if its >= MAX_SWEEPS:
                raise SvdConvergenceError(k, its)
            x = w[l]
            nm = k - 1
            y = w[nm]
            g = rv1[nm]
            h = rv1[k]
            f = ((y - z) * (y + z) + (g - h) * (g + h)) / (2.0 * h * y)
            g = math.hypot(f, 1.0)
            f = ((x - z) * (x + z) + h * ((y / (f + _sign(g, f))) - h)) / x
            c = s = 1.0
            for j in range(l, nm + 1):
                i = j + 1
                g = rv1[i]
                y = w[i]
                h = s * g
                g = c * g
                z = math.hypot(f, h)
                rv1[j] = z
                c = f / z
                s = h / z
                f = x * c + g * s
                g = g * c - x * s
                h = y * s
                y *= c
                vx = v[:, j].copy()
                vz = v[:, i].copy()
                v[:, j] = vx * c + vz * s
                v[:, i] = vz * c - vx * s
                z = math.hypot(f, h)
                w[j] = z
                if z != 0.0:
                    z = 1.0 / z
                    c = f * z
                    s = h * z
                f = c * g + s * y
                x = c * y - s * g
                ay = a[:, j].copy()
                az = a[:, i].copy()
                a[:, j] = ay * c + az * s
                a[:, i] = az * c - ay * s
            rv1[l] = 0.0
            rv1[k] = f
            w[k] = x
    return a, w, v

"""Dense linear algebra and spectral-projector algebra.

Every function takes and returns plain float64 numpy arrays. The SVD goes
through the kernel picked in :mod:`lowrank_ci._kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lowrank_ci import _kernels
from lowrank_ci.errors import DimensionError

GRAM_TOL = 1e-8
_FLUSH = 1e-150


@dataclass(frozen=True)
class SvdFactors:
    """``a ~= u @ diag(s) @ v.T`` with ``s`` non-increasing."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def matrix(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


@dataclass(frozen=True)
class ProjectorSet:
    p_uv: np.ndarray
    p_perp: np.ndarray
    c_uv: np.ndarray


def as_matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _fix_signs(u, v):
    # first nonzero entry of each left singular vector made non-negative
    nz = np.abs(u) > 0
    first = np.argmax(nz, axis=0)
    lead = u[first, np.arange(u.shape[1])]
    flip = np.where(lead < 0, -1.0, 1.0)
    return u * flip, v * flip


def svd(a, k: int | None = None, backend: str | None = None) -> SvdFactors:
    """Singular value decomposition by Golub-Kahan bidiagonalisation.

    Parameters
    ----------
    a : (m, n) array
    k : int, optional
        Number of leading triplets to keep. Defaults to ``min(m, n)``.
    backend : {"compiled", "python"}, optional
        Kernel override; defaults to the process-wide selection.

    Returns
    -------
    SvdFactors
        Singular values sorted non-increasing. Columns are signed so that
        the first nonzero entry of every left vector is non-negative.
    """
    a = as_matrix(a)
    m, n = a.shape
    kmax = min(m, n)
    if k is None:
        k = kmax
    if k < 1 or k > kmax:
        raise DimensionError(f"k={k} outside [1, {kmax}] for a {m}x{n} matrix")
    kernel = _kernels.get_kernel(backend)
    # unit max-entry scaling keeps the QR sweeps clear of under/overflow
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        scale = 1.0
    a = a / scale
    # entries this small relative to the largest cannot affect the factors,
    # but their squares underflow and poison the rotations
    a[np.abs(a) < _FLUSH] = 0.0
    if m >= n:
        u, s, v = kernel(a)
    else:
        v, s, u = kernel(a.T)
    order = np.argsort(-s, kind="stable")[:k]
    u, v = _fix_signs(u[:, order], v[:, order])
    return SvdFactors(u=u, s=s[order] * scale, v=v)


def singular_values(a, backend=None) -> np.ndarray:
    return svd(a, backend=backend).s


def nuclear_norm(a) -> float:
    return float(singular_values(a).sum())


def spectral_norm(a) -> float:
    return float(singular_values(a)[0])


def soft_threshold_sv(a, tau: float, backend=None) -> np.ndarray:
    """Proximal map of ``tau * ||.||_*``: shrink every singular value by ``tau``."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    f = svd(a, backend=backend)
    s = np.maximum(f.s - tau, 0.0)
    keep = s > 0
    if not keep.any():
        return np.zeros_like(f.u @ f.v.T)
    return (f.u[:, keep] * s[keep]) @ f.v[:, keep].T


def dilation(a) -> np.ndarray:
    """Symmetric embedding ``[[0, A], [A^T, 0]]``."""
    a = as_matrix(a)
    m1, m2 = a.shape
    out = np.zeros((m1 + m2, m1 + m2))
    out[:m1, m1:] = a
    out[m1:, :m1] = a.T
    return out


def check_orthonormal(q, name="factor", tol=GRAM_TOL):
    q = as_matrix(q, name)
    dev = np.linalg.norm(q.T @ q - np.eye(q.shape[1]))
    if dev > tol:
        raise ValueError(f"{name} columns are not orthonormal (Gram deviation {dev:.3g})")
    return q


def projector_set(u, v, lambdas) -> ProjectorSet:
    u = check_orthonormal(u, "u")
    v = check_orthonormal(v, "v")
    lambdas = np.asarray(lambdas, dtype=np.float64).ravel()
    r = lambdas.shape[0]
    if u.shape[1] != r or v.shape[1] != r:
        raise DimensionError(f"u, v need {r} columns, got {u.shape[1]} and {v.shape[1]}")
    if np.any(lambdas <= 0):
        raise ValueError("lambdas must be strictly positive")
    m1, m2 = u.shape[0], v.shape[0]
    p_uv = np.zeros((m1 + m2, m1 + m2))
    p_uv[:m1, :m1] = u @ u.T
    p_uv[m1:, m1:] = v @ v.T
    c_uv = np.zeros_like(p_uv)
    block = (u / lambdas) @ v.T
    c_uv[:m1, m1:] = block
    c_uv[m1:, :m1] = block.T
    return ProjectorSet(p_uv=p_uv, p_perp=np.eye(m1 + m2) - p_uv, c_uv=c_uv)


def projection_distance2(u1, v1, u2, v2) -> float:
    """Squared joint projection distance ``||U1U1'-U2U2'||_F^2 + ||V1V1'-V2V2'||_F^2``.

    Evaluated through the overlaps ``U1'U2`` and ``V1'V2``, which is exact for
    orthonormal inputs and avoids forming the m x m projectors.
    """
    u1, v1, u2, v2 = (as_matrix(x) for x in (u1, v1, u2, v2))
    if u1.shape != u2.shape or v1.shape != v2.shape or u1.shape[1] != v1.shape[1]:
        raise DimensionError(
            f"shape mismatch: u {u1.shape} vs {u2.shape}, v {v1.shape} vs {v2.shape}"
        )
    r = u1.shape[1]
    du = 2.0 * (r - np.sum((u1.T @ u2) ** 2))
    dv = 2.0 * (r - np.sum((v1.T @ v2) ** 2))
    return float(min(max(du + dv, 0.0), 4.0 * r))


def linear_term_norm2(model: SvdFactors, z) -> float:
    """``||P_perp E C + C E P_perp||_F^2`` for ``E = dilation(z)``, without forming U_perp."""
    z = as_matrix(z, "z")
    u, v, lam = model.u, model.v, model.s
    if z.shape != (u.shape[0], v.shape[0]):
        raise DimensionError(f"z has shape {z.shape}, expected {(u.shape[0], v.shape[0])}")
    left = z @ (v / lam)
    left -= u @ (u.T @ left)
    right = z.T @ (u / lam)
    right -= v @ (v.T @ right)
    return float(2.0 * (np.sum(left**2) + np.sum(right**2)))


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# Wichura's AS 241 (PPND16) coefficients.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coef, x):
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def _ppnd16(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        t = 0.180625 - q * q
        return q * _poly(_A, t) / _poly(_B, t)
    t = p if q < 0 else 1.0 - p
    t = math.sqrt(-math.log(t))
    if t <= 5.0:
        t -= 1.6
        val = _poly(_C, t) / _poly(_D, t)
    else:
        t -= 5.0
        val = _poly(_E, t) / _poly(_F, t)
    return -val if q < 0 else val


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF: AS 241 followed by one Newton step."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal_quantile needs p in (0, 1), got {p}")
    x = _ppnd16(p)
    dens = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if dens > 0.0:
        x -= (normal_cdf(x) - p) / dens
    return x

"""De-biasing, subspace extraction, plug-in studentisation and confidence regions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lowrank_ci.errors import DimensionError
from lowrank_ci.linalg import check_orthonormal, normal_quantile, projection_distance2, svd
from lowrank_ci.model import Dataset, ProblemDims, design_matrix
from lowrank_ci.solver import SolverConfig, SolverResult, solve_nuclear

# lambda_tilde^2 is floored at this fraction of lambda_hat^2
SHRINK_FLOOR = 1e-4


@dataclass(frozen=True)
class SubspaceEstimate:
    m_hat: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray
    lambda_hat: np.ndarray
    dims: ProblemDims


@dataclass
class InferenceSummary:
    sigma2_hat: float
    lambda_hat: np.ndarray
    lambda_tilde2: np.ndarray
    b_n: float
    v_n: float
    center: float
    half_width: float
    alpha: float
    m_star: int
    n: int
    clamped: list = field(default_factory=list)
    beta_diag: float | None = None

    @property
    def clamp_fired(self) -> bool:
        return any(self.clamped)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_hat"] = np.asarray(self.lambda_hat).tolist()
        d["lambda_tilde2"] = np.asarray(self.lambda_tilde2).tolist()
        d["clamp_fired"] = self.clamp_fired
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceSummary":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        known["lambda_hat"] = np.asarray(known["lambda_hat"], dtype=float)
        known["lambda_tilde2"] = np.asarray(known["lambda_tilde2"], dtype=float)
        return cls(**known)


def _residuals(m, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    m = np.asarray(m, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != y.shape[0] or x.shape[1:] != m.shape:
        raise DimensionError(f"matrix {m.shape} incompatible with design {x.shape} / {y.shape}")
    if x.shape[0] < 1:
        raise ValueError("second half is empty")
    d = design_matrix(x)
    return d, y - d @ m.ravel()


def debias(m_nuc, x2, y2) -> np.ndarray:
    """Add the held-out residual correction ``(1/n) sum_i (y_i - <X_i, M_nuc>) X_i``."""
    d, res = _residuals(m_nuc, x2, y2)
    n = d.shape[0]
    return np.asarray(m_nuc, dtype=np.float64) + (res @ d).reshape(np.shape(m_nuc)) / n


def sigma_hat2(m_nuc, x2, y2) -> float:
    """Mean squared held-out residual; targets ``sigma^2 + ||M - M_nuc||_F^2``."""
    _, res = _residuals(m_nuc, x2, y2)
    return float(res @ res / res.shape[0])


def extract_subspace(m_hat, r: int, n: int = 1) -> SubspaceEstimate:
    m_hat = np.asarray(m_hat, dtype=np.float64)
    m1, m2 = m_hat.shape
    dims = ProblemDims(m1, m2, r, n)
    f = svd(m_hat, k=r)
    return SubspaceEstimate(m_hat=m_hat, u_hat=f.u, v_hat=f.v, lambda_hat=f.s, dims=dims)


def shrink_singular(lambda_hat, sigma2_hat: float, m_star: int, n: int, return_clamped=False):
    """``lambda_k^2 - (2 m_star / n) sigma2_hat``, floored at ``1e-4 * lambda_k^2``."""
    lam2 = np.asarray(lambda_hat, dtype=np.float64) ** 2
    raw = lam2 - 2.0 * m_star / n * sigma2_hat
    floor = SHRINK_FLOOR * lam2
    clamped = raw < floor
    out = np.where(clamped, floor, raw)
    if return_clamped:
        return out, clamped
    return out


def _positive(v, name):
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0 or np.any(v <= 0):
        raise ValueError(f"{name} entries must be positive")
    return v


def b_n(lambda_tilde2) -> float:
    return float(np.sum(1.0 / _positive(lambda_tilde2, "lambda_tilde2")))


def v_n(lambda_tilde2) -> float:
    return float(np.sum(1.0 / _positive(lambda_tilde2, "lambda_tilde2") ** 2))


def _scale(v_n_: float, sigma2: float, m_star: int, n: int) -> float:
    return math.sqrt(8.0) * math.sqrt(v_n_) * sigma2 * math.sqrt(m_star) / n


def t_statistic(dist2, b_n_, v_n_, sigma2, m_star, n) -> float:
    """Studentised loss ``(dist2 - 2 (m*/n) b sigma2) / (sqrt(8) sqrt(v) sigma2 sqrt(m*) / n)``."""
    if not v_n_ > 0 or not sigma2 > 0:
        raise ValueError("v_n and sigma2 must be positive")
    return (dist2 - 2.0 * m_star / n * b_n_ * sigma2) / _scale(v_n_, sigma2, m_star, n)


def region_bounds(b_n_, v_n_, sigma2, m_star, n, alpha):
    """``(center, half_width)`` of the level ``1 - alpha`` band on dist^2."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    z = normal_quantile(1.0 - alpha / 2.0)
    center = 2.0 * m_star / n * b_n_ * sigma2
    return center, z * _scale(v_n_, sigma2, m_star, n)


def confidence_region(est: SubspaceEstimate, sigma2_hat: float, n: int, alpha: float = 0.05) -> InferenceSummary:
    """Plug-in confidence region for ``(U, V)`` around ``(U_hat, V_hat)``.

    ``n`` is the size of each data half. Nominal coverage is ``1 - alpha``.
    """
    m_star = est.dims.m_star
    lt2, clamped = shrink_singular(est.lambda_hat, sigma2_hat, m_star, n, return_clamped=True)
    bn, vn = b_n(lt2), v_n(lt2)
    center, half = region_bounds(bn, vn, sigma2_hat, m_star, n, alpha)
    return InferenceSummary(
        sigma2_hat=float(sigma2_hat),
        lambda_hat=np.asarray(est.lambda_hat, dtype=float),
        lambda_tilde2=lt2,
        b_n=bn,
        v_n=vn,
        center=center,
        half_width=half,
        alpha=float(alpha),
        m_star=int(m_star),
        n=int(n),
        clamped=[bool(c) for c in clamped],
        beta_diag=math.sqrt(sigma2_hat / lt2[-1]),
    )


def region_contains(est: SubspaceEstimate, candidate_u, candidate_v, summary: InferenceSummary) -> bool:
    cu = check_orthonormal(candidate_u, "candidate_u")
    cv = check_orthonormal(candidate_v, "candidate_v")
    if cu.shape != est.u_hat.shape or cv.shape != est.v_hat.shape:
        raise DimensionError(
            f"candidate shapes {cu.shape}, {cv.shape} do not match estimate "
            f"{est.u_hat.shape}, {est.v_hat.shape}"
        )
    d2 = projection_distance2(cu, cv, est.u_hat, est.v_hat)
    return abs(d2 - summary.center) <= summary.half_width


def estimate_rank(singular_values, sigma_hat: float, m1: int, m2: int, n: int, c: float = 1.0) -> int:
    """Number of singular values at or above ``2 c sigma_hat sqrt(max(m1, m2) / n)``."""
    if not sigma_hat > 0:
        raise ValueError("sigma_hat must be positive")
    thr = 2.0 * c * sigma_hat * math.sqrt(max(m1, m2) / n)
    return int(np.count_nonzero(np.asarray(singular_values) >= thr))


def split_estimate(x_fit, y_fit, x_aux, y_aux, config: SolverConfig):
    """Fit on one half, de-bias on the other. Returns ``(m_hat, solver_result)``."""
    res = solve_nuclear(x_fit, y_fit, config)
    return debias(res.m_nuc, x_aux, y_aux), res


def double_split_estimate(dataset: Dataset, config: SolverConfig) -> np.ndarray:
    """Average of the two de-biased estimates obtained by swapping the halves' roles."""
    x1, y1 = dataset.first_half()
    x2, y2 = dataset.second_half()
    m_first, _ = split_estimate(x1, y1, x2, y2, config)
    m_second, _ = split_estimate(x2, y2, x1, y1, config)
    return 0.5 * (m_first + m_second)


@dataclass
class PipelineResult:
    fit: SolverResult
    estimate: SubspaceEstimate
    summary: InferenceSummary


def run_pipeline(dataset: Dataset, r: int, config: SolverConfig, alpha: float = 0.05, m_nuc=None) -> PipelineResult:
    """Fit, de-bias, extract the rank-``r`` subspaces and build the confidence region.

    Pass ``m_nuc`` to skip the solve and use a given first-stage estimate.
    """
    x1, y1 = dataset.first_half()
    x2, y2 = dataset.second_half()
    if m_nuc is None:
        fit = solve_nuclear(x1, y1, config)
    else:
        m_nuc = np.asarray(m_nuc, dtype=np.float64)
        fit = SolverResult(m_nuc=m_nuc, iterations=0, objective=float("nan"),
                           primal_residual=0.0, dual_residual=0.0, converged=True)
    m_hat = debias(fit.m_nuc, x2, y2)
    est = extract_subspace(m_hat, r, n=dataset.n)
    s2 = sigma_hat2(fit.m_nuc, x2, y2)
    return PipelineResult(fit=fit, estimate=est, summary=confidence_region(est, s2, dataset.n, alpha))

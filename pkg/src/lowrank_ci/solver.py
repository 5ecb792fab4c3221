"""Nuclear-norm penalised least squares by ADMM.

Minimises ``(1/n) sum_i (y_i - <A, X_i>)^2 + lam * ||A||_*`` over the split
``A = B``. The A-step is a ridge-type linear system in the trace-regression
operator, the B-step is singular value soft-thresholding, and the scaled
dual ``W`` accumulates ``A - B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from lowrank_ci.errors import DimensionError, SolverError
from lowrank_ci.linalg import nuclear_norm, singular_values, soft_threshold_sv
from lowrank_ci.model import design_matrix

LINEAR_SOLVERS = ("auto", "cg", "woodbury")


def default_lambda(sigma: float, m1: int, m2: int, n: int, c: float = 2.0) -> float:
    """Penalty ``c * sigma * sqrt(max(m1, m2) / n)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive; pass an explicit penalty when it is unknown")
    if n < 1:
        raise ValueError("n must be at least 1")
    if not c > 0:
        raise ValueError("c must be positive")
    return c * sigma * math.sqrt(max(m1, m2) / n)


@dataclass(frozen=True)
class SolverConfig:
    lambda_reg: float
    rho: float = 1.0
    max_iter: int = 500
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    cg_tol: float = 1e-8
    cg_max_iter: int = 200
    # "auto" uses the cached Woodbury factorisation when n < m1*m2 and CG otherwise
    linear_solver: str = "auto"
    record_history: bool = False

    def __post_init__(self):
        if not self.lambda_reg > 0:
            raise ValueError("lambda_reg must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        for name in ("tol_primal", "tol_dual", "cg_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.cg_max_iter < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"linear_solver must be one of {LINEAR_SOLVERS}")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


@dataclass
class SolverResult:
    m_nuc: np.ndarray
    iterations: int
    objective: float
    primal_residual: float
    dual_residual: float
    converged: bool
    cg_iterations: int = 0
    linear_solver: str = "cg"
    history: list = field(default_factory=list)


class TraceOperator:
    """``A -> (<A, X_i>)_i`` and its adjoint ``v -> sum_i v_i X_i`` for a stack of X_i."""

    def __init__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise DimensionError(f"design stack must have shape (n, m1, m2), got {x.shape}")
        self.n, self.m1, self.m2 = x.shape
        self.design = design_matrix(x)

    def apply(self, a: np.ndarray) -> np.ndarray:
        return self.design @ a.reshape(-1)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return (v @ self.design).reshape(self.m1, self.m2)


def _check_half(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 3 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"design stack {x.shape} does not match {y.shape[0]} responses")
    if x.shape[0] < 1:
        raise ValueError("need at least one sample")
    return x, y


def objective(a, x, y, lambda_reg: float) -> float:
    """``(1/n) ||y - X(a)||^2 + lambda_reg * ||a||_*``."""
    x, y = _check_half(x, y)
    a = np.asarray(a, dtype=np.float64)
    if a.shape != x.shape[1:]:
        raise DimensionError(f"a has shape {a.shape}, design matrices are {x.shape[1:]}")
    res = y - design_matrix(x) @ a.ravel()
    return float(res @ res / len(y) + lambda_reg * nuclear_norm(a))


class _CG:
    """Warm-started conjugate gradients on ``((2/n) X*X + rho I) a = b``."""

    def __init__(self, op: TraceOperator, rho: float, tol: float, max_iter: int):
        self.op, self.rho, self.tol, self.max_iter = op, rho, tol, max_iter
        self.scale = 2.0 / op.n
        self.iterations = 0

    def _matvec(self, p):
        d = self.op.design
        return self.scale * ((d @ p) @ d) + self.rho * p

    def solve(self, b, x0):
        x = x0.copy()
        r = b - self._matvec(x)
        p = r.copy()
        rs = float(r @ r)
        target = self.tol * max(float(np.linalg.norm(b)), 1e-300)
        trace = []
        for it in range(self.max_iter):
            if math.sqrt(rs) <= target:
                break
            ap = self._matvec(p)
            curv = float(p @ ap)
            trace.append({"iter": it, "residual": math.sqrt(rs), "curvature": curv})
            if not (curv > 0 and math.isfinite(curv)):
                raise SolverError(f"CG breakdown at inner iteration {it}: p'Ap = {curv}", trace)
            alpha = rs / curv
            x += alpha * p
            r -= alpha * ap
            rs_new = float(r @ r)
            p = r + (rs_new / rs) * p
            rs = rs_new
            self.iterations += 1
        return x


class _Woodbury:
    """Exact solve through ``(rho I + (2/n) D'D)^-1 = (I - D'(n rho/2 I + DD')^-1 D) / rho``."""

    def __init__(self, op: TraceOperator, rho: float):
        d = op.design
        gram = d @ d.T
        gram[np.diag_indices_from(gram)] += 0.5 * op.n * rho
        self.factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        self.design = d
        self.rho = rho
        self.iterations = 0

    def solve(self, b, x0=None):
        d = self.design
        corr = scipy.linalg.cho_solve(self.factor, d @ b, check_finite=False)
        return (b - corr @ d) / self.rho


def _pick_linear_solver(name, op):
    if name == "auto":
        return "woodbury" if op.n < op.m1 * op.m2 else "cg"
    return name


def solve_nuclear(x, y, config: SolverConfig) -> SolverResult:
    """ADMM for the nuclear-norm penalised least-squares estimate.

    Parameters
    ----------
    x : (n, m1, m2) array
        Design matrices of the fitting half.
    y : (n,) array
        Responses.
    config : SolverConfig

    Returns
    -------
    SolverResult
        ``m_nuc`` is the exactly thresholded iterate ``B``. Hitting
        ``max_iter`` is reported through ``converged=False``.
    """
    x, y = _check_half(x, y)
    op = TraceOperator(x)
    n, m1, m2 = op.n, op.m1, op.m2
    rho, lam = config.rho, config.lambda_reg
    kind = _pick_linear_solver(config.linear_solver, op)
    if kind == "woodbury":
        inner = _Woodbury(op, rho)
    else:
        inner = _CG(op, rho, config.cg_tol, config.cg_max_iter)

    p = m1 * m2
    a = np.zeros(p)
    b = np.zeros(p)
    w = np.zeros(p)
    xty = (2.0 / n) * (y @ op.design)
    history = []
    primal = dual = float("inf")
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        a = inner.solve(xty + rho * (b - w), a)
        b_prev = b
        b = soft_threshold_sv((a + w).reshape(m1, m2), lam / rho).ravel()
        w = w + a - b
        primal = float(np.linalg.norm(a - b))
        dual = rho * float(np.linalg.norm(b - b_prev))
        if config.record_history:
            history.append(_merit(op, y, a, b, w, lam, rho))
        scale_p = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1.0)
        scale_d = 1.0 + rho * float(np.linalg.norm(w))
        if primal <= config.tol_primal * scale_p and dual <= config.tol_dual * scale_d:
            converged = True
            break

    m_nuc = b.reshape(m1, m2)
    return SolverResult(
        m_nuc=m_nuc,
        iterations=it,
        objective=objective(m_nuc, x, y, lam),
        primal_residual=primal,
        dual_residual=dual,
        converged=converged,
        cg_iterations=inner.iterations,
        linear_solver=kind,
        history=history,
    )


def _merit(op, y, a, b, w, lam, rho):
    # scaled-form augmented Lagrangian L(A, B, W)
    res = y - op.design @ a
    fa = float(res @ res) / op.n
    nb = float(singular_values(b.reshape(op.m1, op.m2)).sum())
    return fa + lam * nb + 0.5 * rho * (float(np.sum((a - b + w) ** 2)) - float(w @ w))

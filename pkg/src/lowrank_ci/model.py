"""Ground-truth low-rank models and Gaussian-design trace-regression samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lowrank_ci.errors import DimensionError
from lowrank_ci.linalg import check_orthonormal


def rng_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream derived from ``(master_seed, *key)``.

    Streams with different keys come from distinct ``SeedSequence`` spawn
    keys, so they are statistically independent and reproducible regardless
    of the order in which they are created.
    """
    if master_seed < 0 or any(k < 0 for k in key):
        raise ValueError("seeds and stream keys must be non-negative integers")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class ProblemDims:
    m1: int
    m2: int
    r: int
    n: int

    def __post_init__(self):
        for name in ("m1", "m2", "r", "n"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive count")
        if not self.r < min(self.m1, self.m2):
            raise ValueError(f"rank r={self.r} must be below min(m1, m2)={min(self.m1, self.m2)}")

    @property
    def m_bar(self) -> int:
        return max(self.m1, self.m2)

    @property
    def m_star(self) -> int:
        return self.m1 + self.m2 - 2 * self.r


@dataclass(frozen=True)
class LowRankModel:
    """``M = U diag(lambdas) V^T`` plus the noise level ``sigma``."""

    dims: ProblemDims
    u: np.ndarray
    v: np.ndarray
    lambdas: np.ndarray
    sigma: float

    def __post_init__(self):
        u = check_orthonormal(self.u, "u", tol=1e-10)
        v = check_orthonormal(self.v, "v", tol=1e-10)
        lam = check_lambdas(self.lambdas)
        d = self.dims
        if u.shape != (d.m1, d.r) or v.shape != (d.m2, d.r) or lam.shape != (d.r,):
            raise DimensionError("factor shapes do not match dims")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        for name, arr in (("u", u), ("v", v), ("lambdas", lam)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def matrix(self) -> np.ndarray:
        return (self.u * self.lambdas) @ self.v.T

    @property
    def beta(self) -> float:
        return self.sigma / float(self.lambdas[-1])

    @property
    def inv_lambda_fro2(self) -> float:
        """``||Lambda^{-1}||_F^2``"""
        return float(np.sum(self.lambdas**-2.0))

    @property
    def inv_lambda2_fro(self) -> float:
        """``||Lambda^{-2}||_F``"""
        return float(np.sqrt(np.sum(self.lambdas**-4.0)))


@dataclass(frozen=True)
class Dataset:
    """``2n`` samples ``(X_i, y_i)`` split evenly at index ``n``.

    ``x`` has shape ``(2n, m1, m2)``; ``y`` has shape ``(2n,)``. The arrays
    are marked read-only on construction.
    """

    x: np.ndarray
    y: np.ndarray
    split: int = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if x.ndim != 3:
            raise DimensionError(f"x must have shape (2n, m1, m2), got {x.shape}")
        total = x.shape[0]
        if total != y.shape[0]:
            raise DimensionError(f"{total} design matrices but {y.shape[0]} responses")
        if total < 2 or total % 2:
            raise ValueError(f"need an even, positive sample count, got {total}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset has non-finite entries")
        # the dataset takes ownership of its arrays; they are frozen in place
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "split", total // 2)

    @property
    def n(self) -> int:
        return self.split

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape[1], self.x.shape[2]

    def first_half(self):
        return self.x[: self.split], self.y[: self.split]

    def second_half(self):
        return self.x[self.split :], self.y[self.split :]

    def swapped(self) -> "Dataset":
        """Same samples with the two halves exchanged."""
        s = self.split
        return Dataset(
            np.concatenate([self.x[s:], self.x[:s]]), np.concatenate([self.y[s:], self.y[:s]])
        )


def check_lambdas(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=np.float64).ravel()
    if lam.size == 0 or np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise ValueError(f"singular values must be finite and positive, got {lam.tolist()}")
    if np.any(np.diff(lam) > 0):
        raise ValueError(f"singular values must be non-increasing, got {lam.tolist()}")
    return lam


def geometric_lambdas(r: int) -> np.ndarray:
    """``lambda_k = 2^(r-k+1)``, k = 1..r."""
    return 2.0 ** np.arange(r, 0, -1)


def random_orthonormal(m: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal m x r frame from the QR factor of a Gaussian matrix.

    Columns are sign-fixed so that ``R`` has a positive diagonal, which makes
    the frame Haar-distributed.
    """
    if r > m:
        raise DimensionError(f"cannot draw {r} orthonormal columns in dimension {m}")
    q, rr = np.linalg.qr(rng.standard_normal((m, r)))
    signs = np.sign(np.diag(rr))
    signs[signs == 0] = 1.0
    return q * signs


def make_model(dims: ProblemDims, lambda_spec="geometric", sigma: float = 1.0, rng=None) -> LowRankModel:
    if rng is None:
        rng = np.random.default_rng()
    if isinstance(lambda_spec, str):
        if lambda_spec != "geometric":
            raise ValueError(f"unknown lambda spec {lambda_spec!r}")
        lam = geometric_lambdas(dims.r)
    else:
        lam = check_lambdas(lambda_spec)
        if lam.size != dims.r:
            raise ValueError(f"{lam.size} singular values given for rank {dims.r}")
    u = random_orthonormal(dims.m1, dims.r, rng)
    v = random_orthonormal(dims.m2, dims.r, rng)
    return LowRankModel(dims=dims, u=u, v=v, lambdas=lam, sigma=float(sigma))


def sample_dataset(model: LowRankModel, rng: np.random.Generator, n: int | None = None) -> Dataset:
    """Draw ``2n`` samples ``y = <M, X> + xi`` with standard Gaussian ``X``."""
    d = model.dims
    n = d.n if n is None else int(n)
    x = rng.standard_normal((2 * n, d.m1, d.m2))
    xi = rng.standard_normal(2 * n) * model.sigma
    y = x.reshape(2 * n, -1) @ model.matrix.ravel() + xi
    return Dataset(x, y)


def design_matrix(x) -> np.ndarray:
    """``(n, m1, m2)`` stack viewed as the ``n x (m1*m2)`` design (no copy when contiguous)."""
    x = np.asarray(x)
    return x.reshape(x.shape[0], -1)


__all__ = [
    "ProblemDims",
    "LowRankModel",
    "Dataset",
    "rng_stream",
    "geometric_lambdas",
    "random_orthonormal",
    "make_model",
    "sample_dataset",
    "design_matrix",
]

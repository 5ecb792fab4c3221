"""Seeded Monte Carlo experiments.

Every replication owns the stream ``rng_stream(master_seed, 1, n, rep)``;
the ground-truth model comes from ``rng_stream(master_seed, 0)`` and is
shared by all replications. Records are merged by ``(n, rep)`` so results do
not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from lowrank_ci.errors import SolverError, SvdConvergenceError
from lowrank_ci.inference import (
    confidence_region,
    debias,
    extract_subspace,
    sigma_hat2,
    t_statistic,
)
from lowrank_ci.linalg import SvdFactors, linear_term_norm2, normal_cdf, projection_distance2
from lowrank_ci.model import (
    LowRankModel,
    ProblemDims,
    check_lambdas,
    make_model,
    random_orthonormal,
    rng_stream,
    sample_dataset,
)
from lowrank_ci.solver import SolverConfig, default_lambda, solve_nuclear

MODES = ("loss", "normality_oracle", "normality_plugin", "coverage", "e1_oracle")
RECORD_COLUMNS = (
    "rep", "n", "dist2", "t_oracle", "t_plugin", "covered",
    "sigma2_hat", "solver_iters", "clamp_fired", "converged",
)
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    m1: int
    m2: int
    r: int
    sigma: float
    lambda_spec: object = "geometric"
    n_grid: tuple = (1500, 2500, 3500, 4500)
    reps: int = 50
    master_seed: int = 0
    alpha: float = 0.05
    mode: str = "loss"
    # penalty constant used when solver["lambda_reg"] is absent
    lambda_c: float = 2.0
    solver: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        for key in ("m1", "m2", "r", "reps", "workers"):
            v = getattr(self, key)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(key, f"must be a positive integer, got {v!r}")
        object.__setattr__(self, "n_grid", tuple(self.n_grid))
        if not self.n_grid:
            raise ConfigError("n_grid", "must be non-empty")
        for n in self.n_grid:
            if not isinstance(n, (int, np.integer)) or n < 1:
                raise ConfigError("n_grid", f"entries must be positive integers, got {n!r}")
        try:
            self.dims(self.n_grid[0])
        except ValueError as exc:
            raise ConfigError("r", str(exc)) from None
        if not (isinstance(self.sigma, (int, float)) and self.sigma >= 0):
            raise ConfigError("sigma", f"must be a non-negative number, got {self.sigma!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha", f"must lie in (0, 1), got {self.alpha!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.master_seed < 0:
            raise ConfigError("master_seed", "must be non-negative")
        if not self.lambda_c > 0:
            raise ConfigError("lambda_c", "must be positive")
        if isinstance(self.lambda_spec, str):
            if self.lambda_spec != "geometric":
                raise ConfigError("lambda_spec", f"unknown spec {self.lambda_spec!r}")
        else:
            try:
                lam = check_lambdas(self.lambda_spec)
            except (TypeError, ValueError) as exc:
                raise ConfigError("lambda_spec", str(exc)) from None
            if lam.size != self.r:
                raise ConfigError("lambda_spec", f"{lam.size} values given for rank {self.r}")
            object.__setattr__(self, "lambda_spec", tuple(float(x) for x in lam))
        unknown = set(self.solver) - _SOLVER_KEYS
        if unknown:
            raise ConfigError("solver", f"unknown solver fields {sorted(unknown)}")
        if self.mode != "e1_oracle" and self.sigma == 0 and "lambda_reg" not in self.solver:
            raise ConfigError("solver", "sigma = 0 needs an explicit lambda_reg")

    def dims(self, n: int) -> ProblemDims:
        return ProblemDims(self.m1, self.m2, self.r, n)

    def solver_config(self, n: int) -> SolverConfig:
        opts = dict(self.solver)
        if "lambda_reg" not in opts:
            opts["lambda_reg"] = default_lambda(self.sigma, self.m1, self.m2, n, self.lambda_c)
        try:
            return SolverConfig(**opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError("solver", str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config document must be an object")
        d = dict(d)
        if "dims" in d:
            dims = d.pop("dims")
            if not isinstance(dims, dict):
                raise ConfigError("dims", "must be an object with m1, m2, r")
            for k in ("m1", "m2", "r"):
                if k in dims:
                    d.setdefault(k, dims[k])
        names = {f.name for f in fields(cls)}
        for key in d:
            if key not in names:
                raise ConfigError(key, "unknown field")
        for key in ("m1", "m2", "r", "sigma"):
            if key not in d:
                raise ConfigError(key, "required field missing")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        if not isinstance(self.lambda_spec, str):
            out["lambda_spec"] = list(self.lambda_spec)
        return out


@dataclass
class ReplicationRecord:
    rep: int
    n: int
    dist2: float
    t_oracle: float | None
    t_plugin: float | None
    covered: bool | None
    sigma2_hat: float
    solver_iters: int
    clamp_fired: bool
    converged: bool


@dataclass
class NSummary:
    n: int
    records: int
    excluded: int
    clamp_count: int
    mean_dist2: float
    mean_sigma2_hat: float
    theory_first_order: float
    theory_empirical: float
    ratio_first_order: float
    ratio_empirical: float
    ks_oracle: float | None
    ks_plugin: float | None
    skew_oracle: float | None
    skew_plugin: float | None
    coverage_rate: float | None
    wall_time: float
    e1_mean: float | None = None
    e1_std: float | None = None
    e1_target: float | None = None


@dataclass
class SummaryReport:
    config: dict
    backend: str
    per_n: list

    def to_dict(self) -> dict:
        return {"config": self.config, "backend": self.backend, "per_n": [asdict(s) for s in self.per_n]}

    def by_n(self, n: int) -> NSummary:
        for s in self.per_n:
            if s.n == n:
                return s
        raise KeyError(n)


# ---------------------------------------------------------------- statistics

def ks_statistic(sample) -> float:
    """Two-sided Kolmogorov-Smirnov distance between the sample and N(0, 1)."""
    x = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("ks_statistic needs a non-empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("ks_statistic needs finite observations")
    n = x.size
    cdf = np.array([normal_cdf(v) for v in x])
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def skewness(sample) -> float:
    x = np.asarray(sample, dtype=np.float64).ravel()
    d = x - x.mean()
    m2 = float(np.mean(d**2))
    if m2 == 0:
        return 0.0
    return float(np.mean(d**3) / m2**1.5)


def first_order_loss(sigma2: float, lambdas, m_star: int, n: int) -> float:
    """``sigma2 * ||Lambda^-1||_F^2 * 2 m_star / n``."""
    lam = np.asarray(lambdas, dtype=np.float64)
    return float(sigma2 * np.sum(lam**-2.0) * 2.0 * m_star / n)


def oracle_scale(sigma2: float, lambdas, m_star: int, n: int) -> float:
    """``sqrt(8) * sigma2 * ||Lambda^-2||_F * sqrt(m_star) / n``."""
    lam = np.asarray(lambdas, dtype=np.float64)
    return math.sqrt(8.0) * sigma2 * math.sqrt(float(np.sum(lam**-4.0))) * math.sqrt(m_star) / n


# ----------------------------------------------------- solver-free E1 checks

def e1_oracle(dims: ProblemDims, lambdas, sigma: float, n: int, reps: int, rng):
    """Moments of ``(sum xi^2 / n^2) * sum_k z_k^2 / lambda_k^2`` from chi-square draws."""
    lam = check_lambdas(lambdas)
    if lam.size != dims.r:
        raise ValueError(f"{lam.size} singular values for rank {dims.r}")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    noise = sigma**2 * rng.chisquare(n, size=reps)
    z2 = rng.chisquare(dims.m_star, size=(reps, dims.r))
    vals = noise / n**2 * (z2 / lam**2).sum(axis=1)
    return float(vals.mean()), float(vals.std(ddof=1)) if reps > 1 else 0.0


def e1_matrix_values(dims: ProblemDims, lambdas, sigma: float, n: int, reps: int, rng) -> np.ndarray:
    """Per-replication ``||P_perp E1 C||_F^2`` with ``E1`` built from n Gaussian designs."""
    lam = check_lambdas(lambdas)
    u = random_orthonormal(dims.m1, dims.r, rng)
    v = random_orthonormal(dims.m2, dims.r, rng)
    factors = SvdFactors(u=u, s=lam, v=v)
    out = np.empty(reps)
    for k in range(reps):
        x = rng.standard_normal((n, dims.m1 * dims.m2))
        xi = sigma * rng.standard_normal(n)
        z1 = (xi @ x).reshape(dims.m1, dims.m2) / n
        # ||L(E)||^2 = 2 ||P_perp E C||^2
        out[k] = 0.5 * linear_term_norm2(factors, z1)
    return out


def e1_matrix_check(dims: ProblemDims, lambdas, sigma: float, n: int, reps: int, rng):
    vals = e1_matrix_values(dims, lambdas, sigma, n, reps, rng)
    return float(vals.mean()), float(vals.std(ddof=1)) if reps > 1 else 0.0


# --------------------------------------------------------------- replication

def _replicate(model: LowRankModel, n: int, rep: int, seed: int, cfg: SolverConfig, alpha: float):
    rng = rng_stream(seed, 1, n, rep)
    data = sample_dataset(model, rng, n=n)
    x1, y1 = data.first_half()
    x2, y2 = data.second_half()
    fit = solve_nuclear(x1, y1, cfg)
    est = extract_subspace(debias(fit.m_nuc, x2, y2), model.dims.r, n=n)
    s2 = sigma_hat2(fit.m_nuc, x2, y2)
    dist2 = projection_distance2(est.u_hat, est.v_hat, model.u, model.v)
    m_star = model.dims.m_star
    if s2 > 0:
        summ = confidence_region(est, s2, n, alpha)
        t_plugin = t_statistic(dist2, summ.b_n, summ.v_n, s2, m_star, n)
        covered = abs(dist2 - summ.center) <= summ.half_width
        clamp = summ.clamp_fired
    else:
        # exact fit: the region degenerates to the point dist2 = 0
        t_plugin = None
        covered = dist2 == 0.0
        clamp = False
    return ReplicationRecord(
        rep=rep, n=n, dist2=dist2, t_oracle=None, t_plugin=t_plugin, covered=bool(covered),
        sigma2_hat=s2, solver_iters=fit.iterations, clamp_fired=bool(clamp), converged=fit.converged,
    )


def _safe_replicate(model, n, rep, seed, cfg, alpha):
    try:
        return _replicate(model, n, rep, seed, cfg, alpha)
    except (SolverError, SvdConvergenceError):
        nan = float("nan")
        return ReplicationRecord(rep=rep, n=n, dist2=nan, t_oracle=None, t_plugin=None, covered=None,
                                 sigma2_hat=nan, solver_iters=0, clamp_fired=False, converged=False)


def _run_chunk(args):
    model, n, reps, seed, cfg, alpha = args
    with threadpool_limits(1):
        return [_safe_replicate(model, n, rep, seed, cfg, alpha) for rep in reps]


def _chunks(seq, k):
    k = max(1, min(k, len(seq)))
    size = -(-len(seq) // k)
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def _fill_oracle(records, model: LowRankModel, n: int):
    # two passes: centre at the Monte Carlo mean of the included replications
    kept = [r for r in records if r.converged]
    if not kept:
        return
    center = float(np.mean([r.dist2 for r in kept]))
    for r in records:
        if r.sigma2_hat > 0:
            r.t_oracle = (r.dist2 - center) / oracle_scale(r.sigma2_hat, model.lambdas, model.dims.m_star, n)


def _summarise(records, model: LowRankModel, n: int, wall: float) -> NSummary:
    kept = [r for r in records if r.converged]
    m_star = model.dims.m_star
    first = first_order_loss(model.sigma**2, model.lambdas, m_star, n)
    if kept:
        mean_d2 = float(np.mean([r.dist2 for r in kept]))
        mean_s2 = float(np.mean([r.sigma2_hat for r in kept]))
    else:
        mean_d2 = mean_s2 = float("nan")
    emp = first_order_loss(mean_s2, model.lambdas, m_star, n)
    t_or = [r.t_oracle for r in kept if r.t_oracle is not None]
    t_pl = [r.t_plugin for r in kept if r.t_plugin is not None]
    cov = [r.covered for r in kept if r.covered is not None]
    return NSummary(
        n=n,
        records=len(records),
        excluded=len(records) - len(kept),
        clamp_count=sum(r.clamp_fired for r in records),
        mean_dist2=mean_d2,
        mean_sigma2_hat=mean_s2,
        theory_first_order=first,
        theory_empirical=emp,
        ratio_first_order=mean_d2 / first if first > 0 else float("nan"),
        ratio_empirical=mean_d2 / emp if emp > 0 else float("nan"),
        ks_oracle=ks_statistic(t_or) if t_or else None,
        ks_plugin=ks_statistic(t_pl) if t_pl else None,
        skew_oracle=skewness(t_or) if t_or else None,
        skew_plugin=skewness(t_pl) if t_pl else None,
        coverage_rate=float(np.mean(cov)) if cov else None,
        wall_time=wall,
    )


def build_model(config: ExperimentConfig) -> LowRankModel:
    return make_model(
        config.dims(config.n_grid[0]), config.lambda_spec, config.sigma, rng_stream(config.master_seed, 0)
    )


def run_experiment(config: ExperimentConfig, workers: int | None = None, progress=None):
    """Run the sweep over ``config.n_grid``.

    Returns ``(records, report)``. ``workers`` overrides ``config.workers``;
    it never changes the numbers produced. ``progress`` is an optional
    callable receiving one ``NSummary`` per grid point.
    """
    from lowrank_ci import _kernels

    workers = config.workers if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be at least 1")
    model = build_model(config)
    all_records: list[ReplicationRecord] = []
    per_n = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 and config.mode != "e1_oracle" else None
    try:
        for n in config.n_grid:
            t0 = time.perf_counter()
            if config.mode == "e1_oracle":
                per_n.append(_e1_summary(config, model, n, t0))
                if progress:
                    progress(per_n[-1])
                continue
            cfg = config.solver_config(n)
            jobs = [(model, n, c, config.master_seed, cfg, config.alpha)
                    for c in _chunks(list(range(config.reps)), workers)]
            if pool is None:
                parts = [_run_chunk(j) for j in jobs]
            else:
                parts = list(pool.map(_run_chunk, jobs))
            records = sorted((r for p in parts for r in p), key=lambda r: r.rep)
            _fill_oracle(records, model, n)
            all_records.extend(records)
            per_n.append(_summarise(records, model, n, time.perf_counter() - t0))
            if progress:
                progress(per_n[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    return all_records, SummaryReport(config=config.to_dict(), backend=_kernels.BACKEND, per_n=per_n)


def _e1_summary(config, model, n, t0):
    dims = config.dims(n)
    mean, std = e1_oracle(dims, model.lambdas, config.sigma, n, config.reps, rng_stream(config.master_seed, 2, n))
    target = config.sigma**2 * dims.m_star / n * model.inv_lambda_fro2
    nan = float("nan")
    return NSummary(
        n=n, records=0, excluded=0, clamp_count=0, mean_dist2=nan, mean_sigma2_hat=nan,
        theory_first_order=first_order_loss(config.sigma**2, model.lambdas, dims.m_star, n),
        theory_empirical=nan, ratio_first_order=nan, ratio_empirical=nan,
        ks_oracle=None, ks_plugin=None, skew_oracle=None, skew_plugin=None, coverage_rate=None,
        wall_time=time.perf_counter() - t0, e1_mean=mean, e1_std=std, e1_target=target,
    )


# ------------------------------------------------------------------- output

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    return buf.getvalue()


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records))


def histogram_svg(sample, title: str = "") -> str:
    """640x480 SVG: 40-bin density histogram on [-4, 4] with the N(0, 1) density."""
    w, h, pad = 640, 480, 40
    lo, hi, bins = -4.0, 4.0, 40
    x = np.asarray(sample, dtype=np.float64).ravel()
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    width = (hi - lo) / bins
    dens = counts / max(x.size, 1) / width
    grid = np.linspace(lo, hi, 201)
    phi = np.exp(-0.5 * grid**2) / math.sqrt(2 * math.pi)
    top = max(float(dens.max()) if dens.size else 0.0, float(phi.max())) * 1.1

    def sx(v):
        return pad + (v - lo) / (hi - lo) * (w - 2 * pad)

    def sy(v):
        return h - pad - v / top * (h - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{w}" height="{h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
    ]
    for c, left in zip(dens, edges[:-1]):
        x0, x1 = sx(left), sx(left + width)
        y0 = sy(c)
        parts.append(
            f'<rect class="bar" x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" height="{h - pad - y0:.2f}" '
            'fill="#9ecae1" stroke="#3182bd" stroke-width="0.5"/>'
        )
    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(grid, phi))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="2"/>')
    for tick in range(-4, 5):
        parts.append(
            f'<text x="{sx(tick):.2f}" y="{h - pad + 16}" font-size="12" text-anchor="middle">{tick}</text>'
        )
    if title:
        parts.append(f'<text x="{w / 2}" y="{pad - 12}" font-size="14" text-anchor="middle">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

"""``lowrank-ci`` command-line interface."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from lowrank_ci import io as lio
from lowrank_ci.errors import DimensionError, FormatError, SolverError, SvdConvergenceError
from lowrank_ci.harness import ConfigError, ExperimentConfig, histogram_svg, run_experiment, write_records_csv
from lowrank_ci.inference import (
    InferenceSummary,
    SubspaceEstimate,
    confidence_region,
    debias,
    estimate_rank,
    extract_subspace,
    region_contains,
    sigma_hat2,
)
from lowrank_ci.linalg import projection_distance2, singular_values
from lowrank_ci.model import ProblemDims, make_model, rng_stream, sample_dataset
from lowrank_ci.solver import SolverConfig, default_lambda, solve_nuclear

EXIT_OK = 0
EXIT_NOT_CONTAINED = 1
EXIT_USAGE = 2
EXIT_SOLVER = 3


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.9g" % float(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(fmt(x) for x in v) + "]"
    if v is None:
        return "null"
    return str(v)


def emit(pairs, stream=None):
    stream = stream or sys.stdout
    for k, v in pairs:
        print(f"{k}={fmt(v)}", file=stream)


# ---------------------------------------------------------------- argument helpers

def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes for sim, BLAS threads otherwise (default: all cores)")
    p.add_argument("--out", type=str, default=None, help="output file or directory")
    p.add_argument("--config", type=str, default=None, help="JSON document with default option values")


def _add_penalty(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sigma", type=float, help="known noise level; penalty = c * sigma * sqrt(max(m1,m2)/n)")
    g.add_argument("--lambda", dest="lambda_reg", type=float, help="explicit penalty")
    p.add_argument("--lambda-c", type=float, default=2.0, help="penalty constant c used with --sigma")
    p.add_argument("--rho", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol-primal", type=float)
    p.add_argument("--tol-dual", type=float)
    p.add_argument("--cg-tol", type=float)
    p.add_argument("--cg-max-iter", type=int)
    p.add_argument("--linear-solver", choices=("auto", "cg", "woodbury"))


def _solver_config(args, m1, m2, n) -> SolverConfig:
    if (args.sigma is None) == (args.lambda_reg is None):
        raise _Usage("exactly one of --sigma or --lambda is required")
    lam = args.lambda_reg
    if lam is None:
        lam = default_lambda(args.sigma, m1, m2, n, args.lambda_c)
    opts = {"lambda_reg": lam}
    for key in ("rho", "max_iter", "tol_primal", "tol_dual", "cg_tol", "cg_max_iter", "linear_solver"):
        v = getattr(args, key)
        if v is not None:
            opts[key] = v
    return SolverConfig(**opts)


class _Usage(Exception):
    pass


def _apply_config_file(parser, args, argv):
    """Fill options not given on the command line from ``--config``."""
    if args.config is None or args.command == "sim":
        return args
    doc = lio.read_json(args.config)
    if not isinstance(doc, dict):
        raise _Usage(f"{args.config}: config document must be an object")
    given = {a.split("=")[0] for a in argv if a.startswith("--")}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise _Usage(f"{args.config}: unknown option {key!r}")
        if "--" + dest.replace("_", "-") not in given:
            setattr(args, dest, value)
    return args


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args):
    dims = ProblemDims(args.m1, args.m2, args.r, args.n)
    spec = args.lambdas if args.lambdas else "geometric"
    model = make_model(dims, spec, args.sigma, rng_stream(args.seed, 0))
    data = sample_dataset(model, rng_stream(args.seed, 1))
    out = Path(args.out or "data.trds")
    if out.suffix.lower() == ".csv":
        lio.write_dataset_csv(data, out)
    else:
        lio.write_dataset(data, out)
    pairs = [("dataset", str(out)), ("records", 2 * dims.n), ("beta", model.beta)]
    if args.with_truth:
        stem = out.with_suffix("")
        files = {k: f"{stem.name}.{k}.trmx" for k in ("u", "v", "m")}
        lio.write_matrix(model.u, out.parent / files["u"])
        lio.write_matrix(model.v, out.parent / files["v"])
        lio.write_matrix(model.matrix, out.parent / files["m"])
        truth = {
            "m1": dims.m1, "m2": dims.m2, "r": dims.r, "n": dims.n,
            "lambdas": model.lambdas, "sigma": model.sigma, "seed": args.seed, "files": files,
        }
        lio.write_json(truth, f"{stem}.truth.json")
        pairs.append(("truth", f"{stem}.truth.json"))
    emit(pairs)
    return EXIT_OK


def _fit(args, data):
    m1, m2 = data.shape
    cfg = _solver_config(args, m1, m2, data.n)
    x1, y1 = data.first_half()
    return solve_nuclear(x1, y1, cfg), cfg


def _report_fit(res, cfg):
    return [
        ("lambda_reg", cfg.lambda_reg), ("iterations", res.iterations), ("objective", res.objective),
        ("primal_residual", res.primal_residual), ("dual_residual", res.dual_residual),
        ("converged", res.converged), ("linear_solver", res.linear_solver),
    ]


def cmd_fit(args):
    data = lio.read_dataset(args.data)
    res, cfg = _fit(args, data)
    out = Path(args.out or "m_nuc.trmx")
    lio.write_matrix(res.m_nuc, out)
    emit([("m_nuc", str(out))] + _report_fit(res, cfg))
    if not res.converged:
        print(f"error: solver stopped after {res.iterations} iterations without converging", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _read_truth(path):
    path = Path(path)
    doc = lio.read_json(path)
    u = lio.read_matrix(path.parent / doc["files"]["u"])
    v = lio.read_matrix(path.parent / doc["files"]["v"])
    return doc, u, v


def _first_stage(args, data):
    if args.fit:
        m_nuc = lio.read_matrix(args.fit)
        if m_nuc.shape != data.shape:
            raise DimensionError(f"--fit matrix is {m_nuc.shape}, data matrices are {data.shape}")
        return m_nuc, []
    res, cfg = _fit(args, data)
    if not res.converged:
        emit(_report_fit(res, cfg), sys.stderr)
        raise SolverError(f"solver stopped after {res.iterations} iterations without converging", [])
    return res.m_nuc, _report_fit(res, cfg)


def cmd_infer(args):
    data = lio.read_dataset(args.data)
    m1, m2 = data.shape
    m_nuc, fit_pairs = _first_stage(args, data)
    x2, y2 = data.second_half()
    m_hat = debias(m_nuc, x2, y2)
    s2 = sigma_hat2(m_nuc, x2, y2)
    if args.r is not None:
        r = args.r
    elif args.estimate_rank:
        if s2 <= 0:
            raise _Usage("cannot estimate the rank from an exact fit (sigma_hat = 0)")
        r = estimate_rank(singular_values(m_hat), np.sqrt(s2), m1, m2, data.n, args.rank_c)
        if r < 1:
            raise _Usage("estimated rank is 0; no singular subspace to report")
    else:
        raise _Usage("give --r or --estimate-rank")
    est = extract_subspace(m_hat, r, n=data.n)
    summary = confidence_region(est, s2, data.n, args.alpha)
    out = _out_dir(args, "estimate")
    lio.write_matrix(est.u_hat, out / "u_hat.trmx")
    lio.write_matrix(est.v_hat, out / "v_hat.trmx")
    lio.write_matrix(est.m_hat, out / "m_hat.trmx")
    doc = {"m1": m1, "m2": m2, "r": r, "n": data.n, **summary.to_dict()}
    pairs = [("r", r)] + fit_pairs + [
        ("sigma2_hat", summary.sigma2_hat), ("lambda_hat", summary.lambda_hat),
        ("lambda_tilde2", summary.lambda_tilde2), ("b_n", summary.b_n), ("v_n", summary.v_n),
        ("center", summary.center), ("half_width", summary.half_width), ("alpha", summary.alpha),
        ("clamp_fired", summary.clamp_fired), ("beta_diag", summary.beta_diag),
    ]
    if args.truth:
        _, tu, tv = _read_truth(args.truth)
        d2 = projection_distance2(est.u_hat, est.v_hat, tu, tv)
        doc["dist2_truth"] = d2
        doc["truth_contained"] = bool(abs(d2 - summary.center) <= summary.half_width)
        pairs += [("dist2_truth", d2), ("truth_contained", doc["truth_contained"])]
    lio.write_json(doc, out / "summary.json")
    emit(pairs + [("estimate_dir", str(out))])
    return EXIT_OK


def _load_estimate(path):
    path = Path(path)
    doc = lio.read_json(path / "summary.json")
    u = lio.read_matrix(path / "u_hat.trmx")
    v = lio.read_matrix(path / "v_hat.trmx")
    summary = InferenceSummary.from_dict(doc)
    dims = ProblemDims(doc["m1"], doc["m2"], doc["r"], doc["n"])
    est = SubspaceEstimate(m_hat=np.zeros((dims.m1, dims.m2)), u_hat=u, v_hat=v,
                           lambda_hat=summary.lambda_hat, dims=dims)
    return est, summary


def cmd_check(args):
    est, summary = _load_estimate(args.estimate)
    if args.truth:
        _, cu, cv = _read_truth(args.truth)
    elif args.u and args.v:
        cu, cv = lio.read_matrix(args.u), lio.read_matrix(args.v)
    else:
        raise _Usage("give --u and --v, or --truth")
    inside = region_contains(est, cu, cv, summary)
    d2 = projection_distance2(cu, cv, est.u_hat, est.v_hat)
    emit([("contained", inside), ("dist2", d2), ("center", summary.center), ("half_width", summary.half_width)])
    return EXIT_OK if inside else EXIT_NOT_CONTAINED


def _sim_config(args) -> ExperimentConfig:
    doc = lio.read_json(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config document must be an object")
    overrides = {
        "m1": args.m1, "m2": args.m2, "r": args.r, "sigma": args.sigma, "reps": args.reps,
        "mode": args.mode, "alpha": args.alpha, "n_grid": args.n_grid, "lambda_c": args.lambda_c,
        "lambda_spec": args.lambdas,
    }
    for k, v in overrides.items():
        if v is not None:
            doc[k] = v
    if args.seed_given:
        doc["master_seed"] = args.seed
    if args.threads is not None:
        doc["workers"] = args.threads
    elif "workers" not in doc:
        doc["workers"] = os.cpu_count() or 1
    return ExperimentConfig.from_dict(doc)


def cmd_sim(args):
    cfg = _sim_config(args)
    out = _out_dir(args, "sim_out")

    def progress(s):
        print(f"n={s.n} done in {s.wall_time:.1f}s", file=sys.stderr)

    records, report = run_experiment(cfg, progress=progress)
    write_records_csv(records, out / "records.csv")
    lio.write_json(report.to_dict(), out / "summary.json")
    if args.svg and cfg.mode != "e1_oracle":
        for s in report.per_n:
            rows = [r for r in records if r.n == s.n and r.converged]
            for kind in ("oracle", "plugin"):
                vals = [getattr(r, f"t_{kind}") for r in rows if getattr(r, f"t_{kind}") is not None]
                (out / f"hist_{kind}_n{s.n}.svg").write_text(histogram_svg(vals, f"{kind} n={s.n}"))
    for s in report.per_n:
        emit([(f"n{s.n}.{k}", v) for k, v in s.__dict__.items() if v is not None])
    emit([("records", len(records)), ("out", str(out))])
    return EXIT_OK


def cmd_estimate_rank(args):
    data = lio.read_dataset(args.data)
    m1, m2 = data.shape
    m_nuc, fit_pairs = _first_stage(args, data)
    x2, y2 = data.second_half()
    m_hat = debias(m_nuc, x2, y2)
    s2 = sigma_hat2(m_nuc, x2, y2)
    if s2 <= 0:
        raise _Usage("sigma_hat is 0 (exact fit); the rank threshold is undefined")
    sv = singular_values(m_hat)
    sigma_hat = float(np.sqrt(s2))
    r_hat = estimate_rank(sv, sigma_hat, m1, m2, data.n, args.rank_c)
    thr = 2.0 * args.rank_c * sigma_hat * np.sqrt(max(m1, m2) / data.n)
    emit([("r_hat", r_hat), ("threshold", thr), ("sigma_hat", sigma_hat)]
         + fit_pairs + [("singular_values", sv[: max(r_hat + 3, 5)])])
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="lowrank-ci", description="Confidence regions for singular subspaces "
                                "in Gaussian trace regression.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate a dataset from a random low-rank model")
    _add_common(g)
    g.add_argument("--m1", type=int, required=True)
    g.add_argument("--m2", type=int, required=True)
    g.add_argument("--r", type=int, required=True)
    g.add_argument("--n", type=int, required=True, help="samples per half; 2n are written")
    g.add_argument("--sigma", type=float, required=True)
    g.add_argument("--lambdas", type=float, nargs="+", help="singular values (default 2^(r-k+1))")
    g.add_argument("--with-truth", action="store_true", help="also write the model factors")
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("fit", help="nuclear-norm penalised fit on the first half")
    _add_common(f)
    f.add_argument("--data", required=True)
    _add_penalty(f)
    f.set_defaults(func=cmd_fit)

    for name, func, hlp in (("infer", cmd_infer, "de-bias, extract subspaces, build the region"),
                            ("estimate-rank", cmd_estimate_rank, "threshold the de-biased spectrum")):
        q = sub.add_parser(name, help=hlp)
        _add_common(q)
        q.add_argument("--data", required=True)
        q.add_argument("--fit", help="precomputed first-stage matrix (TRMX); skips the solve")
        _add_penalty(q)
        q.add_argument("--rank-c", type=float, default=1.0, help="rank threshold constant (default 1)")
        if name == "infer":
            q.add_argument("--r", type=int)
            q.add_argument("--estimate-rank", action="store_true")
            q.add_argument("--alpha", type=float, default=0.05)
            q.add_argument("--truth", help="truth sidecar written by gen-data --with-truth")
        q.set_defaults(func=func)

    c = sub.add_parser("check", help="test whether a candidate (U, V) lies in a region")
    _add_common(c)
    c.add_argument("--estimate", required=True, help="directory written by infer")
    c.add_argument("--u")
    c.add_argument("--v")
    c.add_argument("--truth", help="use the factors from a gen-data truth sidecar")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("sim", help="Monte Carlo experiment")
    _add_common(s)
    s.add_argument("--m1", type=int)
    s.add_argument("--m2", type=int)
    s.add_argument("--r", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--lambdas", type=float, nargs="+")
    s.add_argument("--n-grid", type=int, nargs="+")
    s.add_argument("--reps", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--lambda-c", type=float)
    s.add_argument("--mode")
    s.add_argument("--svg", action="store_true", help="write histograms of both statistics")
    s.set_defaults(func=cmd_sim)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    try:
        args = _apply_config_file(parser, args, argv)
        if hasattr(args, "alpha") and args.alpha is not None and not 0 < args.alpha < 1:
            raise _Usage("--alpha must lie in (0, 1)")
        if args.command == "sim":
            return args.func(args)
        threads = args.threads or os.cpu_count() or 1
        with threadpool_limits(threads):
            return args.func(args)
    except (_Usage, ConfigError, FormatError, DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, SvdConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

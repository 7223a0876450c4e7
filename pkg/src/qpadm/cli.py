"""Command-line front end: generate, fit, bench, diagnose.

Exit codes: 0 converged (or all checks passed), 1 runtime/data failure or a
failed diagnostic, 2 iteration limit reached, 3 divergence, 4 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import data as data_mod
from .core import (DataError, Dataset, ParameterError, PenaltyKind, PenaltySpec, SolverConfig,
                   Variant, check_tau)
from .diagnostics import (build_gb_matrices, constraints_for, contraction_holds,
                          dump_trace, h_norm_trace, is_nonincreasing, min_eigenvalue,
                          prediction_correction_step, rate_witness, recorded_run)
from .metrics import evaluate_classification, evaluate_regression
from .nonconvex import LLAConfig, lla_solve
from .select import SelectionError, default_grid, grid_search
from .solvers import DivergenceError, build_scheme, solve

EXIT_OK, EXIT_FAIL, EXIT_MAX_ITER, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2, 3, 4
WORKERS_ENV = "QPADM_WORKERS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- generate

def cmd_generate(args) -> int:
    spec = data_mod.SynthSpec(args.n, args.p, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.prefix or f"synth_n{args.n}_p{args.p}_s{args.seed}"
    if args.task == "classification":
        synth = data_mod.synth_classification(spec)
        path = out / f"{stem}.libsvm"
        data_mod.write_libsvm(synth.dataset, path)
    else:
        synth = data_mod.synth_generate(spec, tau=args.tau)
        path = out / f"{stem}.csv"
        data_mod.write_csv(synth.dataset, path)
    truth = {
        "n": args.n, "p": args.p, "seed": args.seed, "task": args.task, "tau": args.tau,
        "beta_true": [float(v) for v in synth.beta_true],
        "support": list(synth.support), "hetero_index": synth.hetero_index,
        "data_file": path.name, "sha256": _sha256(path),
    }
    _write_json(truth, out / f"{stem}.truth.json")
    print(path)
    print(out / f"{stem}.truth.json")
    return EXIT_OK


# ---------------------------------------------------------------- fit

def _solver_config(args) -> SolverConfig:
    return SolverConfig(tau=args.tau, mu=args.mu, nu=args.nu, M=args.M, max_iter=args.max_iter,
                        tol=args.tol, variant=args.variant, seed=args.seed,
                        consensus_tol=None if args.consensus_tol <= 0 else args.consensus_tol)


def _load(args) -> Dataset:
    fmt = args.format
    if fmt == "auto":
        fmt = None
    try:
        return data_mod.load_dataset(args.data, fmt, intercept=args.intercept)
    except OSError as exc:
        raise DataError(f"cannot read {args.data}: {exc.strerror or exc}") from None


def cmd_fit(args) -> int:
    cfg = _solver_config(args)
    ds = _load(args)
    check_tau(cfg.tau, ds.task)
    part = data_mod.partition(ds.n, cfg.M, shuffle=args.shuffle, seed=args.seed)
    kind = PenaltyKind(args.penalty)
    lla = LLAConfig(max_outer=args.max_outer, inner_cfg=cfg)
    record = {}
    if args.lam is None:
        grid = default_grid(ds, cfg.tau, args.n_lambdas)
        best, path = grid_search(ds, grid, kind, cfg, a=args.a, lla=lla, part=part)
        fit, lam = best.fit, best.lambda_scalar
        record["hbic_path"] = [{"lambda": r.lambda_scalar, "hbic": r.hbic,
                                "support_size": r.support_size, "diverged": r.diverged}
                               for r in path]
    else:
        lam = args.lam
        pen = PenaltySpec.uniform(kind, lam, ds.p, ds.has_intercept, args.a)
        fit = solve(ds, pen, cfg, part=part) if kind is PenaltyKind.WEIGHTED_L1 \
            else lla_solve(ds, pen, lla, part=part)
    record.update({
        "variant": cfg.variant.value, "tau": cfg.tau, "mu": cfg.mu, "nu": cfg.nu, "M": cfg.M,
        "penalty": kind.value, "lambda": lam, "seed": args.seed, "shuffle": args.shuffle,
        "intercept": ds.has_intercept, "data": str(args.data),
        "beta": [float(v) for v in fit.beta], "iterations": fit.n_iter,
        "converged": fit.converged, "outer_steps": fit.outer_steps,
        "stop_history": [float(v) for v in fit.stop_history], "wall_time": fit.wall_time,
        "objective": fit.trace.objective[-1] if fit.trace.objective else None,
    })
    _write_json(record, args.out)
    if args.trace:
        dump_trace(fit.trace.as_columns(), args.trace)
    return EXIT_OK if fit.converged else EXIT_MAX_ITER


# ---------------------------------------------------------------- bench

BENCH_DEFAULTS = {
    "task": "regression", "tau": 0.7, "replications": 10, "seed": 0,
    "variants": [v.value for v in Variant], "M": [1], "penalty": "l1", "lambda": None,
    "a": None, "mu": 10.0, "nu": 0.75, "tol": 1e-4, "max_iter": 500, "consensus_tol": 1e-2,
    "n_lambdas": 20, "max_outer": 3, "n_test": None,
}


def load_descriptor(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    unknown = set(raw) - set(BENCH_DEFAULTS) - {"name", "n", "p", "description"}
    if unknown:
        raise UsageError(f"{path}: unknown descriptor keys {sorted(unknown)}")
    for key in ("n", "p"):
        if key not in raw:
            raise UsageError(f"{path}: missing required key {key!r}")
    desc = {**BENCH_DEFAULTS, **raw}
    desc.setdefault("name", Path(path).stem)
    desc["variants"] = [Variant(v).value for v in desc["variants"]]
    desc["M"] = [int(m) for m in desc["M"]]
    return desc


def _fit_one(ds: Dataset, desc: dict, variant: str, M: int):
    cfg = SolverConfig(tau=desc["tau"], mu=desc["mu"], nu=desc["nu"], M=M,
                       max_iter=desc["max_iter"], tol=desc["tol"], variant=variant,
                       consensus_tol=desc["consensus_tol"])
    kind = PenaltyKind(desc["penalty"])
    lla = LLAConfig(max_outer=desc["max_outer"], inner_cfg=cfg)

    def fixed(lam):
        pen = PenaltySpec.uniform(kind, lam, ds.p, ds.has_intercept, desc["a"])
        return solve(ds, pen, cfg) if kind is PenaltyKind.WEIGHTED_L1 else lla_solve(ds, pen, lla)

    if desc["lambda"] is not None:
        return fixed(float(desc["lambda"])), float(desc["lambda"])
    grid = default_grid(ds, cfg.tau, desc["n_lambdas"])
    best, _ = grid_search(ds, grid, kind, cfg, a=desc["a"], lla=lla)
    # iterations are reported for a cold-start refit at the selected level
    return fixed(best.lambda_scalar), best.lambda_scalar


def run_replication(desc: dict, rep: int) -> List[dict]:
    """All (variant, M) fits for one replication; one record per fit."""
    seed = int(desc["seed"]) + rep
    spec = data_mod.SynthSpec(int(desc["n"]), int(desc["p"]), seed)
    test = None
    if desc["task"] == "classification":
        train = data_mod.synth_classification(spec)
        n_test = desc["n_test"] or int(desc["n"])
        test = data_mod.synth_classification(
            data_mod.SynthSpec(n_test, int(desc["p"]), seed + 1_000_003)).dataset
    else:
        train = data_mod.synth_generate(spec, tau=desc["tau"])
    out = []
    for variant in desc["variants"]:
        for M in desc["M"]:
            rec = {"replication": rep, "seed": seed, "variant": variant, "M": M}
            try:
                fit, lam = _fit_one(train.dataset, desc, variant, M)
            except (DivergenceError, SelectionError) as exc:
                rec.update(status="failed", error=str(exc))
                out.append(rec)
                continue
            if desc["task"] == "classification":
                rep_ = evaluate_classification(fit.beta, train.dataset, test, fit.n_iter,
                                               fit.wall_time)
            else:
                rep_ = evaluate_regression(fit.beta, train.beta_true, fit.n_iter, fit.wall_time)
            rec.update(status="converged" if fit.converged else "max_iter", **rep_.as_dict())
            rec["lambda"] = lam
            out.append(rec)
    return out


REGRESSION_COLUMNS = [("P1", "p1", 100.0), ("P2", "p2", 100.0), ("AE", "ae", 1.0),
                      ("Nonzero", "nonzero", 1.0), ("Ite", "iterations", 1.0)]
CLASSIFICATION_COLUMNS = [("Train", "train_acc", 1.0), ("Test", "test_acc", 1.0),
                          ("Nonzero", "nonzero", 1.0), ("Sparsity", "sparsity", 1.0),
                          ("Ite", "iterations", 1.0)]


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.6g}"


def aggregate(desc: dict, records: List[dict]) -> List[dict]:
    """Mean and sample standard deviation per (variant, M) over successful fits."""
    cols = CLASSIFICATION_COLUMNS if desc["task"] == "classification" else REGRESSION_COLUMNS
    rows = []
    for variant in desc["variants"]:
        for M in desc["M"]:
            group = [r for r in records if r["variant"] == variant and r["M"] == M]
            ok = [r for r in group if r["status"] != "failed"]
            row = {"variant": variant, "M": M, "reps": len(group), "failures": len(group) - len(ok),
                   "max_iter_hits": sum(r["status"] == "max_iter" for r in ok)}
            for name, key, scale in cols:
                vals = np.array([r[key] for r in ok], dtype=float) * scale
                row[name] = float(vals.mean()) if vals.size else None
                row[f"{name}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else None
            rows.append(row)
    return rows


def write_bench_csv(rows: List[dict], path) -> None:
    header = list(rows[0])
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(r[k]) if isinstance(r[k], (str, int)) and not isinstance(r[k], bool)
                              else _fmt(r[k]) for k in header))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _workers(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return 1


def cmd_bench(args) -> int:
    desc = load_descriptor(args.config)
    if args.replications is not None:
        desc["replications"] = args.replications
    if args.seed is not None:
        desc["seed"] = args.seed
    reps = int(desc["replications"])
    if reps < 1:
        raise UsageError("replications must be >= 1")
    workers = _workers(args.workers)
    t0 = time.perf_counter()
    if workers == 1:
        per_rep = [run_replication(desc, r) for r in range(reps)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(run_replication, [desc] * reps, range(reps)))
    records = [rec for chunk in per_rep for rec in chunk]
    rows = aggregate(desc, records)
    out = Path(args.out)
    write_bench_csv(rows, out)
    manifest = {
        "descriptor": desc, "workers": workers, "records": records, "aggregate": rows,
        "csv": str(out), "elapsed": time.perf_counter() - t0,
    }
    _write_json(manifest, args.manifest or out.with_suffix(".manifest.json"))
    print(out.read_text(encoding="utf-8"), end="")
    return EXIT_OK


# ---------------------------------------------------------------- diagnose

def _toy(M: int, n_m: int, p: int, seed: int, tau: float) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((M * n_m, p))
    beta = np.zeros(p)
    beta[0] = 1.0
    y = X @ beta + 0.5 * rng.standard_normal(M * n_m)
    return Dataset.regression(X, y)


def diagnose_checks(M=2, n_m=5, p=3, nu=0.75, mu=1.0, tau=0.5, lam=0.1, seed=0,
                    iterations=50, break_correction=False, tol=1e-8):
    """Run the algebraic and trace checks on a toy instance.

    Returns ({check name: passed}, {variant: observed rate constant}).
    """
    ds = _toy(M, n_m, p, seed, tau)
    w = np.full(p, lam)
    results: Dict[str, bool] = {}
    witnesses: Dict[str, float] = {}
    for ordering in ("standard", "modified"):
        cs = constraints_for(ds, M, ordering, tau)
        gb = build_gb_matrices(cs, mu, nu)
        scale = max(1.0, float(np.abs(gb.Q).max()))
        results[f"{ordering}: HM = Q"] = float(np.abs(gb.H @ gb.M - gb.Q).max()) <= 1e-12 * scale
        G2 = gb.Q.T + gb.Q - gb.M.T @ gb.H @ gb.M
        results[f"{ordering}: G identity"] = float(np.abs(G2 - gb.G).max()) <= 1e-12 * scale
        results[f"{ordering}: H positive definite"] = min_eigenvalue(gb.H) > 0
        results[f"{ordering}: G positive definite"] = min_eigenvalue(gb.G) > 0
    for variant in (Variant.QPADM_SLACK_GB, Variant.MQPADM_SLACK_GB):
        cfg = SolverConfig(tau=tau, mu=mu, nu=nu, M=M, variant=variant, clamp=False,
                           break_correction=break_correction, max_iter=20000, tol=tol)
        scheme = build_scheme(ds, w, cfg)
        cs = constraints_for(ds, M, scheme.ordering, tau)
        gb_step = build_gb_matrices(cs, mu, nu, flip=break_correction)
        g = scheme.g_vector()
        err = 0.0
        for _ in range(iterations):
            g_ref, _ = prediction_correction_step(g, cs, w, mu, nu, gb=gb_step)
            scheme.step()
            g = scheme.g_vector()
            err = max(err, float(np.abs(g_ref - g).max()))
        results[f"{variant.value}: prediction-correction equivalence"] = err <= 1e-12 * max(1.0, float(np.abs(g).max()))
        rr = recorded_run(ds, w, cfg)
        tr = h_norm_trace(rr.history, rr.gb, rr.g_inf)
        results[f"{variant.value}: contraction"] = contraction_holds([b for _, b in tr], 1e-8)
        results[f"{variant.value}: residual monotonicity"] = is_nonincreasing([a for a, _ in tr], 1e-10)
        witnesses[variant.value] = rate_witness(rr.history, rr.gb, rr.g_inf)
    return results, witnesses


def cmd_diagnose(args) -> int:
    results, witnesses = diagnose_checks(M=args.M, n_m=args.n_m, p=args.p, nu=args.nu, mu=args.mu,
                              tau=args.tau, lam=args.lam, seed=args.seed,
                              break_correction=args.break_correction)
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    for name, c in witnesses.items():
        print(f"INFO  {name}: k*||g^k - g^k+1||_H^2 <= ||g^0 - g^inf||_H^2 / c with c = {c:.4g}")
    return EXIT_OK if all(results.values()) else EXIT_FAIL


# ---------------------------------------------------------------- parser

def _nu(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"nu must lie in (0, 1), got {v}")
    return v


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qpadm", description="Parallel ADMM for penalized quantile regression and SVMs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic benchmark dataset")
    g.add_argument("--n", type=_positive(int), required=True)
    g.add_argument("--p", type=_positive(int), required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tau", type=float, default=0.7, help="quantile for the truth sidecar")
    g.add_argument("--task", choices=["regression", "classification"], default="regression")
    g.add_argument("--out-dir", default=".")
    g.add_argument("--prefix", default=None)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit one model")
    f.add_argument("data")
    f.add_argument("--format", choices=["auto", "csv", "libsvm"], default="auto")
    f.add_argument("--variant", choices=[v.value for v in Variant], default="m-slack-gb")
    f.add_argument("--tau", type=float, default=0.5)
    f.add_argument("--mu", type=_positive(float), default=10.0)
    f.add_argument("--nu", type=_nu, default=0.75)
    f.add_argument("--M", type=_positive(int), default=1)
    f.add_argument("--penalty", choices=["l1", "scad", "mcp"], default="l1")
    f.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="penalty level; omitted selects by HBIC")
    f.add_argument("--a", type=float, default=None)
    f.add_argument("--tol", type=_positive(float), default=1e-4)
    f.add_argument("--consensus-tol", type=float, default=1e-2, help="<= 0 disables")
    f.add_argument("--max-iter", type=_positive(int), default=500)
    f.add_argument("--max-outer", type=_positive(int), default=3)
    f.add_argument("--n-lambdas", type=_positive(int), default=20)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--shuffle", action="store_true")
    f.add_argument("--intercept", action="store_true")
    f.add_argument("--out", default="-")
    f.add_argument("--trace", default=None, help="per-iteration trace CSV")
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("bench", help="run an experiment descriptor")
    b.add_argument("config")
    b.add_argument("--out", default="bench.csv")
    b.add_argument("--manifest", default=None)
    b.add_argument("--replications", type=int, default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--workers", type=int, default=None, help=f"default from ${WORKERS_ENV} or 1")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("diagnose", help="check the convergence machinery on a toy instance")
    d.add_argument("--M", type=_positive(int), default=2)
    d.add_argument("--n-m", dest="n_m", type=_positive(int), default=5)
    d.add_argument("--p", type=_positive(int), default=3)
    d.add_argument("--nu", type=_nu, default=0.75)
    d.add_argument("--mu", type=_positive(float), default=1.0)
    d.add_argument("--tau", type=float, default=0.5)
    d.add_argument("--lambda", dest="lam", type=float, default=0.1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--break-correction", action="store_true",
                   help="corrupt the back-substitution sign (negative control)")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, SelectionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface, CSV/JSON input and output, PCA preprocessing.

Estimates are written as JSON (floats keep full precision and round-trip
bit-exactly); metric tables are written as CSV.  All stochastic commands
require a seed and produce byte-identical outputs when repeated, apart from
the ``timestamp`` field of JSON payloads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .align import align_exhaustive, align_greedy, align_transfer, apply_alignment_theta
from .core import (
    GmmParams,
    NotPositiveDefiniteError,
    TaskData,
    ThetaEstimate,
    log_likelihood,
    misclustering_error,
)
from .em import MtlFitResult, TuningSchedule, em_single_task, fit_mtl_gmm
from .modelselect import CvGrid, cv_select_mtl, cv_select_tl
from .simbench import (
    SimConfig,
    initial_estimates,
    rate_probe,
    run_replications,
    run_sweep,
)
from .transfer import TlSchedule, fit_tl_gmm

USAGE_ERROR = 1
NUMERICAL_ERROR = 2


def read_task_csv(path: str | Path) -> TaskData:
    """Read one task from CSV: header row, numeric feature columns, and an
    optional final column named ``label`` with values in {1, 2}."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        has_label = len(header) > 0 and header[-1].strip().lower() == "label"
        width = len(header)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from exc
            if has_label:
                label = values[-1]
                if label not in (1.0, 2.0):
                    raise ValueError(f"{path}:{lineno}: labels must be 1 or 2")
                labels.append(int(label))
                values = values[:-1]
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    z = np.asarray(rows, dtype=float)
    return TaskData(z, labels=np.asarray(labels) if has_label else None)


def write_task_csv(path: str | Path, task: TaskData):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"x{j + 1}" for j in range(task.p)]
        if task.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(task.n):
            row = [repr(float(value)) for value in task.z[i]]
            if task.labels is not None:
                row.append(str(int(task.labels[i])))
            writer.writerow(row)


def pca_preprocess(
    tasks: list[TaskData], n_components: int, test_tasks: list[TaskData] | None = None
):
    """Per-task PCA: center on the training mean, project train (and test)
    onto the top eigenvectors of the training covariance.

    Loadings are ordered by descending eigenvalue with each column's
    largest-magnitude entry made positive.  Returns (projected train,
    projected test or None, list of (loadings, mean) pairs).
    """
    if test_tasks is not None and len(test_tasks) != len(tasks):
        raise ValueError("need one test set per task")
    out_train, out_test, loadings = [], [], []
    for k, task in enumerate(tasks):
        if n_components > task.p:
            raise ValueError(f"task {k}: n_components exceeds dimension {task.p}")
        if task.n <= n_components:
            raise ValueError(f"task {k}: need more than n_components observations")
        mean = task.z.mean(axis=0)
        centered = task.z - mean
        cov = centered.T @ centered / (task.n - 1)
        eigval, eigvec = np.linalg.eigh(cov)
        order = np.argsort(eigval)[::-1][:n_components]
        if eigval[order[-1]] <= 1e-12 * max(float(eigval.max()), 1.0):
            raise ValueError(f"task {k}: training data has rank below {n_components}")
        basis = eigvec[:, order]
        anchors = np.argmax(np.abs(basis), axis=0)
        basis = basis * np.sign(basis[anchors, np.arange(basis.shape[1])])
        out_train.append(TaskData(centered @ basis, labels=task.labels))
        if test_tasks is not None:
            test = test_tasks[k]
            if test.p != task.p:
                raise ValueError(f"task {k}: test dimension mismatch")
            out_test.append(TaskData((test.z - mean) @ basis, labels=test.labels))
        loadings.append((basis, mean))
    return out_train, (out_test if test_tasks is not None else None), loadings


# ---------------------------------------------------------------------------
# JSON serialization of estimates
# ---------------------------------------------------------------------------


def theta_to_json(theta: ThetaEstimate) -> dict:
    return {
        "w": theta.w,
        "mu1": theta.mu1.tolist(),
        "mu2": theta.mu2.tolist(),
        "beta": theta.beta.tolist(),
    }


def theta_from_json(obj: dict) -> ThetaEstimate:
    return ThetaEstimate(obj["w"], np.array(obj["mu1"]), np.array(obj["mu2"]), np.array(obj["beta"]))


def mtl_fit_to_json(fit: MtlFitResult) -> dict:
    return {
        "kind": "mtl",
        "tasks": [
            {**theta_to_json(theta), "sigma": sigma.tolist()}
            for theta, sigma in zip(fit.per_task, fit.sigmas)
        ],
        "centers": theta_to_json(fit.centers),
        "iterations": fit.iterations,
        "lambdas": [list(l) for l in fit.lambdas],
    }


def write_json(path: str | Path, payload: dict):
    payload = dict(payload)
    payload["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    with Path(path).open("w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)


def _schedule_from_config(obj: dict, transfer: bool):
    common = {
        "c1_w": obj["c1_w"],
        "c1_mu": obj["c1_mu"],
        "c1_beta": obj["c1_beta"],
        "c2_w": obj.get("c2_w", 0.0),
        "c2_mu": obj.get("c2_mu", 0.0),
        "c2_beta": obj.get("c2_beta", 0.0),
        "script_c": tuple(obj.get("script_c", (1.0, 1.0, 1.0, 1.0))),
    }
    if transfer:
        return TlSchedule(kappa0=obj.get("kappa", 1.0 / 3.0), **common)
    return TuningSchedule(kappa=obj.get("kappa", 1.0 / 3.0), **common)


def _grid_from_config(obj: dict) -> CvGrid:
    return CvGrid(
        values_w=tuple(obj.get("values_w", CvGrid().values_w)),
        values_rest=tuple(obj.get("values_rest", CvGrid().values_rest)),
        folds=obj.get("folds", 5),
    )


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    return read_json(path)


def _prepare_inits(tasks: list[TaskData], method: str) -> list[ThetaEstimate]:
    thetas = [initial_estimates(task.z)[0] for task in tasks]
    pairs = [(t.mu1, t.mu2) for t in thetas]
    search = align_greedy if method == "greedy" else align_exhaustive
    return apply_alignment_theta(thetas, search(pairs))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    methods = tuple(args.methods.split(","))
    if args.h_w is None:
        # transfer scenarios default to the reported target spread
        args.h_w = 0.15 if args.scenario.startswith("tl") else 0.05
    config = SimConfig(
        scenario=args.scenario,
        K=args.K,
        n=args.n,
        p=args.p,
        h_w=args.h_w,
        h_mu=args.h_mu,
        h_beta=args.h_beta,
        n_outliers=args.outliers,
        n_test=args.n_test,
        reps=args.reps,
        seed=args.seed,
        alignment=args.alignment,
    )
    grid = _grid_from_config(_load_config(args.config).get("cv", {}))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    sweep_param = None
    values = None
    for param in ("h_mu", "h_beta", "h_w"):
        grid_arg = getattr(args, f"{param}_grid")
        if grid_arg:
            sweep_param = param
            values = [float(v) for v in grid_arg.split(",")]
            break

    rows = []
    if sweep_param is None:
        results = [(None, run_replications(config, methods, grid=grid, threads=args.threads))]
    else:
        results = run_sweep(config, sweep_param, values, methods, grid=grid, threads=args.threads)
    for value, result in results:
        for row in result.rows:
            rows.append(
                {
                    "scenario": config.scenario,
                    "sweep_param": sweep_param or "",
                    "sweep_value": "" if value is None else repr(value),
                    "method": row.method,
                    "metric": row.metric,
                    "mean": repr(row.mean),
                    "sd": repr(row.sd),
                    "reps_ok": row.reps_ok,
                    "reps_failed": row.reps_failed,
                }
            )
    with (out_dir / "metrics.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {out_dir / 'metrics.csv'} ({len(rows)} rows)")
    return 0


def _cmd_fit_single(args) -> int:
    task = read_task_csv(args.task)
    theta0, _ = initial_estimates(task.z)
    theta, sigma = em_single_task(task, theta0, tol=args.tol)
    write_json(
        args.out,
        {"kind": "single", "tasks": [{**theta_to_json(theta), "sigma": sigma.tolist()}]},
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_fit_mtl(args) -> int:
    tasks = [read_task_csv(path) for path in args.tasks]
    config = _load_config(args.config)
    inits = _prepare_inits(tasks, args.alignment)
    if "schedule" in config:
        schedule = _schedule_from_config(config["schedule"], transfer=False)
    else:
        schedule, _ = cv_select_mtl(
            tasks, inits, _grid_from_config(config.get("cv", {})), seed=args.seed
        )
    fit = fit_mtl_gmm(tasks, inits, schedule, T=config.get("rounds"), tol=args.tol)
    write_json(args.out, mtl_fit_to_json(fit))
    print(f"wrote {args.out}")
    return 0


def _cmd_fit_tl(args) -> int:
    target = read_task_csv(args.target)
    sources = [read_task_csv(path) for path in args.tasks]
    config = _load_config(args.config)

    thetas = [initial_estimates(t.z)[0] for t in [target] + sources]
    pairs = [(t.mu1, t.mu2) for t in thetas]
    search = align_greedy if args.alignment == "greedy" else align_exhaustive
    source_alignment = search(pairs[1:])
    alignment = align_transfer(pairs[0], source_alignment, pairs[1:])
    thetas = apply_alignment_theta(thetas, alignment)

    grid = _grid_from_config(config.get("cv", {}))
    if "source_schedule" in config:
        source_schedule = _schedule_from_config(config["source_schedule"], transfer=False)
    else:
        source_schedule, _ = cv_select_mtl(sources, thetas[1:], grid, seed=args.seed)
    source_fit = fit_mtl_gmm(sources, thetas[1:], source_schedule, tol=args.tol)

    if "schedule" in config:
        schedule = _schedule_from_config(config["schedule"], transfer=True)
    else:
        schedule, _ = cv_select_tl(
            target, thetas[0], source_fit.centers, grid, seed=args.seed
        )
    fit = fit_tl_gmm(target, thetas[0], source_fit.centers, schedule, T0=config.get("rounds"), tol=args.tol)
    write_json(
        args.out,
        {
            "kind": "tl",
            "tasks": [{**theta_to_json(fit.theta0), "sigma": fit.sigma0.tolist()}],
            "anchors": theta_to_json(fit.anchors),
            "iterations": fit.iterations,
        },
    )
    print(f"wrote {args.out}")
    return 0


def _greedy_with_restarts(pairs, restarts: int, seed: int):
    """Greedy search from random label orders; returns the most frequent
    output (up to global flip).  A remedy for bad initial alignments."""
    from collections import Counter

    rng = np.random.default_rng(seed)
    votes: Counter = Counter()
    outputs = {}
    for _ in range(restarts):
        flips = rng.random(len(pairs)) < 0.5
        shuffled = [
            (p2, p1) if flip else (p1, p2) for (p1, p2), flip in zip(pairs, flips)
        ]
        result = align_greedy(shuffled)
        # undo the random shuffle and canonicalize to r[0] = 1
        r = np.where(flips, result.r_prime, result.r)
        if r[0] == 2:
            r = 3 - r
        key = tuple(int(v) for v in r)
        votes[key] += 1
        outputs[key] = r
    winner = outputs[votes.most_common(1)[0][0]]
    from .align import Alignment

    return Alignment(winner, 3 - winner)


def _cmd_align(args) -> int:
    tasks = [read_task_csv(path) for path in args.tasks]
    thetas = [initial_estimates(task.z)[0] for task in tasks]
    pairs = [(t.mu1, t.mu2) for t in thetas]
    if args.method == "greedy" and args.restarts > 0:
        alignment = _greedy_with_restarts(pairs, args.restarts, args.seed)
    else:
        search = align_greedy if args.method == "greedy" else align_exhaustive
        alignment = search(pairs)
    print("r      :", " ".join(str(v) for v in alignment.r))
    print("r_prime:", " ".join(str(v) for v in alignment.r_prime))
    return 0


def _cmd_cv(args) -> int:
    tasks = [read_task_csv(path) for path in args.tasks]
    config = _load_config(args.config)
    grid = _grid_from_config(config.get("cv", {}))
    if args.mode == "mtl":
        inits = _prepare_inits(tasks, args.alignment)
        schedule, table = cv_select_mtl(tasks, inits, grid, seed=args.seed)
        chosen = {"c_w": schedule.c1_w, "c_rest": schedule.c1_mu}
    else:
        if args.target is None:
            print("error: --target is required for --mode tl", file=sys.stderr)
            return USAGE_ERROR
        target = read_task_csv(args.target)
        thetas = [initial_estimates(t.z)[0] for t in [target] + tasks]
        pairs = [(t.mu1, t.mu2) for t in thetas]
        source_alignment = align_exhaustive(pairs[1:])
        alignment = align_transfer(pairs[0], source_alignment, pairs[1:])
        thetas = apply_alignment_theta(thetas, alignment)
        source_schedule, _ = cv_select_mtl(tasks, thetas[1:], grid, seed=args.seed)
        source_fit = fit_mtl_gmm(tasks, thetas[1:], source_schedule)
        schedule, table = cv_select_tl(target, thetas[0], source_fit.centers, grid, seed=args.seed)
        chosen = {"c_w": schedule.c1_w, "c_rest": schedule.c1_mu}
    write_json(args.out, {"kind": f"cv-{args.mode}", "chosen": chosen, "table": table})
    print(f"wrote {args.out}: chose c_w={chosen['c_w']} c_rest={chosen['c_rest']}")
    return 0


def _cmd_evaluate(args) -> int:
    payload = read_json(args.fit)
    test = read_task_csv(args.test)
    if test.labels is None:
        print("error: test data must carry a label column", file=sys.stderr)
        return USAGE_ERROR
    entry = payload["tasks"][args.task_index]
    theta = theta_from_json(entry)
    error = misclustering_error(theta, test)
    result = {"misclustering_error": error}
    if "sigma" in entry:
        params = GmmParams(theta.w, theta.mu1, theta.mu2, np.array(entry["sigma"]))
        result["log_likelihood"] = log_likelihood(params, test)
    print(json.dumps(result, sort_keys=True))
    if args.out:
        write_json(args.out, {"kind": "evaluation", **result})
    return 0


def _cmd_pca(args) -> int:
    tasks = [read_task_csv(path) for path in args.tasks]
    tests = [read_task_csv(path) for path in args.test] if args.test else None
    train_out, test_out, loadings = pca_preprocess(tasks, args.components, tests)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, task in enumerate(train_out):
        write_task_csv(out_dir / f"task{k}_train.csv", task)
    if test_out is not None:
        for k, task in enumerate(test_out):
            write_task_csv(out_dir / f"task{k}_test.csv", task)
    write_json(
        out_dir / "loadings.json",
        {
            "kind": "pca",
            "components": args.components,
            "tasks": [
                {"loadings": basis.tolist(), "mean": mean.tolist()}
                for basis, mean in loadings
            ],
        },
    )
    print(f"wrote {out_dir}")
    return 0


def _cmd_rate_probe(args) -> int:
    n_list = [int(v) for v in args.n_list.split(",")]
    result = rate_probe(
        p=args.p, n_list=n_list, reps=args.reps, seed=args.seed, method=args.method
    )
    payload = {
        "kind": "rate-probe",
        "method": result.method,
        "ns": result.ns,
        "mean_d": result.mean_d,
        "slope": result.slope,
        "ci": list(result.ci),
    }
    print(json.dumps({k: payload[k] for k in ("slope", "ci")}, sort_keys=True))
    if args.out:
        write_json(args.out, payload)
    return 0


def _default_threads() -> int:
    env = os.environ.get("MTGMM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtgmm",
        description="Multi-task and transfer learning for binary Gaussian mixtures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a synthetic benchmark scenario")
    sim.add_argument("--scenario", required=True, choices=["mtl-sim1", "mtl-sim2", "tl-sim1", "tl-sim2"])
    sim.add_argument("--K", type=int, default=10)
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--p", type=int, default=5)
    sim.add_argument("--h-w", dest="h_w", type=float, default=None)
    sim.add_argument("--h-mu", dest="h_mu", type=float, default=0.0)
    sim.add_argument("--h-beta", dest="h_beta", type=float, default=0.0)
    sim.add_argument("--h-mu-grid", dest="h_mu_grid", default="")
    sim.add_argument("--h-beta-grid", dest="h_beta_grid", default="")
    sim.add_argument("--h-w-grid", dest="h_w_grid", default="")
    sim.add_argument("--outliers", type=int, default=0)
    sim.add_argument("--n-test", dest="n_test", type=int, default=500)
    sim.add_argument("--reps", type=int, default=50)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--methods", default="single,pooled,mtl")
    sim.add_argument("--alignment", default="exhaustive", choices=["exhaustive", "greedy"])
    sim.add_argument("--config", default=None)
    sim.add_argument("--threads", type=int, default=_default_threads())
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    fit_s = sub.add_parser("fit-single", help="standard EM on one task")
    fit_s.add_argument("--task", required=True)
    fit_s.add_argument("--tol", type=float, default=1e-6)
    fit_s.add_argument("--out", required=True)
    fit_s.set_defaults(func=_cmd_fit_single)

    fit_m = sub.add_parser("fit-mtl", help="penalized multi-task EM")
    fit_m.add_argument("--tasks", nargs="+", required=True)
    fit_m.add_argument("--config", default=None)
    fit_m.add_argument("--alignment", default="exhaustive", choices=["exhaustive", "greedy"])
    fit_m.add_argument("--tol", type=float, default=1e-6)
    fit_m.add_argument("--seed", type=int, default=0)
    fit_m.add_argument("--out", required=True)
    fit_m.set_defaults(func=_cmd_fit_mtl)

    fit_t = sub.add_parser("fit-tl", help="penalized transfer EM on a target task")
    fit_t.add_argument("--target", required=True)
    fit_t.add_argument("--tasks", nargs="+", required=True, help="source task CSVs")
    fit_t.add_argument("--config", default=None)
    fit_t.add_argument("--alignment", default="exhaustive", choices=["exhaustive", "greedy"])
    fit_t.add_argument("--tol", type=float, default=1e-6)
    fit_t.add_argument("--seed", type=int, default=0)
    fit_t.add_argument("--out", required=True)
    fit_t.set_defaults(func=_cmd_fit_tl)

    al = sub.add_parser("align", help="align cluster labels across tasks")
    al.add_argument("--tasks", nargs="+", required=True)
    al.add_argument("--method", default="exhaustive", choices=["exhaustive", "greedy"])
    al.add_argument("--restarts", type=int, default=0, help="greedy restarts from random label orders")
    al.add_argument("--seed", type=int, default=0)
    al.set_defaults(func=_cmd_align)

    cv = sub.add_parser("cv", help="cross-validate schedule constants")
    cv.add_argument("--tasks", nargs="+", required=True)
    cv.add_argument("--target", default=None)
    cv.add_argument("--mode", default="mtl", choices=["mtl", "tl"])
    cv.add_argument("--alignment", default="exhaustive", choices=["exhaustive", "greedy"])
    cv.add_argument("--config", default=None)
    cv.add_argument("--seed", type=int, default=0)
    cv.add_argument("--out", required=True)
    cv.set_defaults(func=_cmd_cv)

    ev = sub.add_parser("evaluate", help="score a fit on labeled test data")
    ev.add_argument("--fit", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--task-index", dest="task_index", type=int, default=0)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=_cmd_evaluate)

    pca = sub.add_parser("pca-preprocess", help="per-task PCA projection")
    pca.add_argument("--tasks", nargs="+", required=True)
    pca.add_argument("--test", nargs="*", default=None)
    pca.add_argument("--components", type=int, required=True)
    pca.add_argument("--out", required=True)
    pca.set_defaults(func=_cmd_pca)

    rp = sub.add_parser("rate-probe", help="empirical convergence-rate check")
    rp.add_argument("--p", type=int, default=5)
    rp.add_argument("--n-list", dest="n_list", default="100,400,1600")
    rp.add_argument("--reps", type=int, default=100)
    rp.add_argument("--seed", type=int, required=True)
    rp.add_argument("--method", default="single", choices=["single", "mtl"])
    rp.add_argument("--out", default=None)
    rp.set_defaults(func=_cmd_rate_probe)

    return parser


def cli_dispatch(argv: list[str]) -> int:
    """Parse and run one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else USAGE_ERROR
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, NotPositiveDefiniteError, np.linalg.LinAlgError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))

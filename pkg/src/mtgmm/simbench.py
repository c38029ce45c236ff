"""Synthetic benchmark harness: generators, replication runner, rate probe.

The four scenarios reproduce the synthetic designs the method was reported
on: means drawn around a shared center with controllable spread (sim 1),
shared discriminant structure with heterogeneous AR(1) covariances and
heavy-tailed outlier tasks (sim 2), and their transfer-learning analogues
where task 0 is the target.  All randomness flows through explicit
generators; replication r of a run with seed s uses the stream seeded by
(s, r), so runs are reproducible and replications are independent jobs.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .align import align_exhaustive, align_greedy, align_transfer, apply_alignment_theta
from .core import (
    GmmParams,
    TaskData,
    ThetaEstimate,
    distance_d,
    misclustering_error,
    solve_spd,
)
from .em import MtlFitResult, _ensure_pd, em_single_task, em_step, fit_mtl_gmm
from .modelselect import CvGrid, cv_select_mtl, cv_select_tl, mtl_schedule_from_cell
from .prox import clamp_w
from .transfer import fit_tl_gmm

SCENARIOS = ("mtl-sim1", "mtl-sim2", "tl-sim1", "tl-sim2")
MTL_METHODS = ("single", "pooled", "mtl")
TL_METHODS = ("target-only", "pooled", "mtl", "mtl-center", "tl")
EST_METRICS = ("w", "mu1", "mu2", "beta", "sigma")


@dataclass(frozen=True)
class SimConfig:
    """One benchmark setting; ``reps`` replications are run under ``seed``."""

    scenario: str
    K: int = 10
    n: int = 100
    p: int = 5
    h_w: float = 0.05
    h_mu: float = 0.0
    h_beta: float = 0.0
    n_outliers: int = 0
    n_test: int = 500
    reps: int = 50
    seed: int = 0
    alignment: str = "exhaustive"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_outliers >= self.K:
            raise ValueError("n_outliers must be smaller than K")
        if min(self.h_w, self.h_mu, self.h_beta) < 0.0:
            raise ValueError("heterogeneity levels must be nonnegative")
        if self.alignment not in ("exhaustive", "greedy"):
            raise ValueError("alignment must be 'exhaustive' or 'greedy'")

    @property
    def is_transfer(self) -> bool:
        return self.scenario.startswith("tl")


@dataclass(eq=False)
class SimData:
    """Generated tasks: training data, labeled test data, truths, inlier mask.

    For transfer scenarios the lists have K + 1 entries and index 0 is the
    target; ``in_set`` is True wherever the task follows its nominal GMM
    (outlier tasks carry ``truths[k] is None`` in scenario sim 2).
    """

    train: list[TaskData]
    test: list[TaskData]
    truths: list[GmmParams | None]
    in_set: np.ndarray
    target_index: int | None = None


@dataclass(eq=False)
class RepMetrics:
    """Per-replication errors of one method, averaged over the inlier tasks."""

    method: str
    est_errors: dict[str, float]
    test_errors: np.ndarray


@dataclass(frozen=True)
class MetricRow:
    method: str
    metric: str
    mean: float
    sd: float
    reps_ok: int
    reps_failed: int


@dataclass(eq=False)
class SimulationResult:
    config: SimConfig
    rows: list[MetricRow]
    failures: list[tuple[int, str, str]]
    schedules: dict

    def mean(self, method: str, metric: str) -> float:
        for row in self.rows:
            if row.method == method and row.metric == metric:
                return row.mean
        raise KeyError(f"no row for ({method}, {metric})")


def ar1_cov(p: int, rho: float) -> np.ndarray:
    """AR(1)-style covariance (rho^|i-j|); positive definite for |rho| < 1."""
    if not abs(rho) < 1.0:
        raise ValueError("need |rho| < 1 for positive definiteness")
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _unit_sphere(rng: np.random.Generator, p: int, radius: float = 1.0) -> np.ndarray:
    g = rng.standard_normal(p)
    return radius * g / np.linalg.norm(g)


def _sample_gmm(params: GmmParams, n: int, rng: np.random.Generator):
    """Draw n observations; labels in {1, 2} with P(label 2) = w."""
    labels = np.where(rng.random(n) < params.w, 2, 1)
    chol = np.linalg.cholesky(params.sigma)
    z = rng.standard_normal((n, params.p)) @ chol.T
    z += np.where((labels == 1)[:, None], params.mu1, params.mu2)
    return z, labels


def _make_task_pair(params: GmmParams, config: SimConfig, rng: np.random.Generator):
    z_train, _ = _sample_gmm(params, config.n, rng)
    z_test, y_test = _sample_gmm(params, config.n_test, rng)
    return TaskData(z_train), TaskData(z_test, labels=y_test)


def _choose_outliers(
    rng: np.random.Generator, n_tasks: int, n_outliers: int, excluded: tuple[int, ...] = ()
) -> set[int]:
    candidates = np.array([k for k in range(n_tasks) if k not in excluded])
    if n_outliers == 0:
        return set()
    picked = rng.choice(candidates, size=n_outliers, replace=False)
    return set(int(k) for k in picked)


def _gen_sim1_family(
    config: SimConfig,
    rng: np.random.Generator,
    n_tasks: int,
    pinned: tuple[int, ...] = (),
) -> SimData:
    base = np.zeros(config.p)
    base[0] = 2.0
    sigma = ar1_cov(config.p, 0.2)
    outliers = _choose_outliers(rng, n_tasks, config.n_outliers, excluded=pinned)
    train, test, truths = [], [], []
    in_set = np.ones(n_tasks, dtype=bool)
    for k in range(n_tasks):
        if k in outliers:
            w = rng.uniform(0.2, 0.4)
            mu1 = _unit_sphere(rng, config.p, radius=0.1)
            in_set[k] = False
        else:
            w = 0.5 + config.h_w * (rng.random() - 0.5)
            mu1 = base + config.h_mu * _unit_sphere(rng, config.p)
        params = GmmParams(w, mu1, -mu1, sigma)
        tr, te = _make_task_pair(params, config, rng)
        train.append(tr)
        test.append(te)
        truths.append(params)
    return SimData(train, test, truths, in_set)


def gen_mtl_sim1(config: SimConfig, rng: np.random.Generator) -> SimData:
    """Simulation 1: means on a sphere around (2, 0, ..., 0), shared covariance."""
    return _gen_sim1_family(config, rng, config.K)


def sim2_cov_scale(h_beta: float, p: int = 5, tol: float = 1e-6) -> float:
    """Largest a in [0.5, 1) keeping ||beta(a) - beta_ref|| <= h_beta.

    beta(a) solves ar1_cov(a) beta = ar1_cov(0.5) beta_ref; the gap grows
    monotonically in a (checked numerically on a coarse grid).
    """
    if h_beta < 0.0:
        raise ValueError("h_beta must be nonnegative")
    beta_ref = np.zeros(p)
    beta_ref[0] = 2.5
    m = ar1_cov(p, 0.5) @ beta_ref

    def gap(a: float) -> float:
        return float(np.linalg.norm(solve_spd(ar1_cov(p, a), m) - beta_ref))

    grid = np.linspace(0.5, 1.0 - 1e-6, 7)
    gaps = [gap(a) for a in grid]
    if any(g2 < g1 - 1e-9 for g1, g2 in zip(gaps, gaps[1:])):
        raise AssertionError("covariance-scale gap is not monotone in a")

    lo, hi = 0.5, 1.0 - 1e-6
    if gap(lo) > h_beta:
        raise ValueError("h_beta bound violated even at a = 0.5; inconsistent config")
    if gap(hi) <= h_beta:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) <= h_beta:
            lo = mid
        else:
            hi = mid
    return lo


def gen_mtl_sim2(config: SimConfig, rng: np.random.Generator) -> SimData:
    """Simulation 2: shared discriminant direction, heterogeneous covariances.

    Task 0 is pinned inside the inlier set.  Outlier tasks mix a Gaussian
    cluster with per-coordinate t(4) noise and carry no GMM truth.
    """
    p = config.p
    beta_ref = np.zeros(p)
    beta_ref[0] = 2.5
    sigma_ref = ar1_cov(p, 0.5)
    m = sigma_ref @ beta_ref
    a = sim2_cov_scale(config.h_beta, p)
    outliers = _choose_outliers(rng, config.K, config.n_outliers, excluded=(0,))
    sigma_alt = ar1_cov(p, a)

    train, test, truths = [], [], []
    in_set = np.ones(config.K, dtype=bool)
    for k in range(config.K):
        if k in outliers:
            in_set[k] = False
            w = rng.uniform(0.2, 0.4)
            sigma_k = sigma_ref if rng.random() < 0.5 else sigma_alt
            mu1 = sigma_k @ np.full(p, -2.5)
            tr_z, _ = _sample_outlier_task(w, mu1, sigma_k, config.n, rng)
            te_z, te_y = _sample_outlier_task(w, mu1, sigma_k, config.n_test, rng)
            train.append(TaskData(tr_z))
            test.append(TaskData(te_z, labels=te_y))
            truths.append(None)
            continue
        w = 0.5 + config.h_w * (rng.random() - 0.5)
        if k == 0:
            sigma_k = sigma_ref
        else:
            sigma_k = sigma_ref if rng.random() < 0.5 else sigma_alt
        params = GmmParams(w, m, np.zeros(p), sigma_k)
        tr, te = _make_task_pair(params, config, rng)
        train.append(tr)
        test.append(te)
        truths.append(params)
    return SimData(train, test, truths, in_set)


def _sample_outlier_task(w, mu1, sigma, n, rng):
    labels = np.where(rng.random(n) < w, 2, 1)
    chol = np.linalg.cholesky(sigma)
    z = np.empty((n, len(mu1)))
    first = labels == 1
    z[first] = mu1 + rng.standard_normal((int(first.sum()), len(mu1))) @ chol.T
    z[~first] = rng.standard_t(4, size=(int((~first).sum()), len(mu1)))
    return z, labels


def gen_tl_sim1(config: SimConfig, rng: np.random.Generator) -> SimData:
    """Transfer simulation 1: identical sources, target perturbed by h_mu, h_w."""
    p = config.p
    base = np.zeros(p)
    base[0] = 2.0
    sigma = ar1_cov(p, 0.2)
    w0 = 0.5 + config.h_w * (rng.random() - 0.5)
    mu1_0 = base + config.h_mu * _unit_sphere(rng, p)
    target = GmmParams(w0, mu1_0, -mu1_0, sigma)
    source = GmmParams(0.5, base, -base, sigma)

    train, test, truths = [], [], []
    for params in [target] + [source] * config.K:
        tr, te = _make_task_pair(params, config, rng)
        train.append(tr)
        test.append(te)
        truths.append(params)
    return SimData(train, test, truths, np.ones(config.K + 1, dtype=bool), target_index=0)


def gen_tl_sim2(config: SimConfig, rng: np.random.Generator) -> SimData:
    """Transfer simulation 2: target and sources all drawn as in simulation 1.

    Delegates to the sim-1 family with K + 1 tasks; the target (index 0) is
    pinned inside the inlier set so outliers only occur among sources.
    """
    data = _gen_sim1_family(config, rng, config.K + 1, pinned=(0,))
    data.target_index = 0
    return data


def generate(config: SimConfig, rng: np.random.Generator) -> SimData:
    return {
        "mtl-sim1": gen_mtl_sim1,
        "mtl-sim2": gen_mtl_sim2,
        "tl-sim1": gen_tl_sim1,
        "tl-sim2": gen_tl_sim2,
    }[config.scenario](config, rng)


# ---------------------------------------------------------------------------
# Initialization: 2-means with farthest-pair seeding, then a few EM steps.
# ---------------------------------------------------------------------------


def _two_means_labels(z: np.ndarray, max_iter: int = 100) -> np.ndarray:
    sq = np.sum(z * z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    c1, c2 = z[i], z[j]
    labels = np.ones(len(z), dtype=int)
    for _ in range(max_iter):
        new_labels = np.where(
            np.linalg.norm(z - c1, axis=1) <= np.linalg.norm(z - c2, axis=1), 1, 2
        )
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        if np.any(labels == 1):
            c1 = z[labels == 1].mean(axis=0)
        if np.any(labels == 2):
            c2 = z[labels == 2].mean(axis=0)
    return labels


def moment_start(z: np.ndarray) -> tuple[ThetaEstimate, np.ndarray]:
    """Deterministic starting estimate from a farthest-pair 2-means split."""
    labels = _two_means_labels(z)
    n = len(z)
    in2 = labels == 2
    if not in2.any() or in2.all():
        raise ValueError("2-means split produced an empty cluster")
    w = clamp_w(float(in2.mean()))
    mu1 = z[~in2].mean(axis=0)
    mu2 = z[in2].mean(axis=0)
    r1 = z[~in2] - mu1
    r2 = z[in2] - mu2
    sigma = _ensure_pd((r1.T @ r1 + r2.T @ r2) / n)
    beta = solve_spd(sigma, mu1 - mu2)
    return ThetaEstimate(w, mu1, mu2, beta), sigma


def initial_estimates(z: np.ndarray, em_iters: int = 10) -> tuple[ThetaEstimate, np.ndarray]:
    """Moment start refined by a fixed number of EM steps.

    A step that degenerates (all posterior mass on one side) stops the
    refinement early and keeps the last valid iterate, so outlier tasks
    still produce a usable, if meaningless, initialization.
    """
    theta, sigma = moment_start(z)
    for _ in range(em_iters):
        try:
            theta, sigma = em_step(z, theta)
        except ValueError:
            break
    return theta, sigma


# ---------------------------------------------------------------------------
# Replication runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmSettings:
    tol: float = 1e-6
    max_iter: int = 300
    T: int | None = None


def _align_inits(data: SimData, config: SimConfig) -> list[ThetaEstimate]:
    thetas = [initial_estimates(task.z)[0] for task in data.train]
    pairs = [(t.mu1, t.mu2) for t in thetas]
    search = align_exhaustive if config.alignment == "exhaustive" else align_greedy
    if data.target_index is None:
        alignment = search(pairs)
    else:
        source_alignment = search(pairs[1:])
        alignment = align_transfer(pairs[0], source_alignment, pairs[1:])
    return apply_alignment_theta(thetas, alignment)


def _spectral_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2))


def _component_errors(theta: ThetaEstimate, truth: GmmParams, flip: bool) -> dict[str, float]:
    est = theta.flipped() if flip else theta
    return {
        "w": abs(est.w - truth.w),
        "mu1": float(np.linalg.norm(est.mu1 - truth.mu1)),
        "mu2": float(np.linalg.norm(est.mu2 - truth.mu2)),
        "beta": float(np.linalg.norm(est.beta - truth.beta)),
    }


def _flip_resolved_errors(
    thetas: list[ThetaEstimate],
    sigmas: list[np.ndarray] | None,
    truths: list[GmmParams | None],
    eval_idx: np.ndarray,
) -> dict[str, float]:
    """Mean estimation errors over the evaluated tasks, after resolving the
    one global label flip that minimizes the summed component distances."""
    totals = {False: 0.0, True: 0.0}
    for flip in (False, True):
        for k in eval_idx:
            errs = _component_errors(thetas[k], truths[k], flip)
            totals[flip] += sum(errs.values())
    flip = totals[True] < totals[False]
    out = {name: 0.0 for name in EST_METRICS}
    for k in eval_idx:
        errs = _component_errors(thetas[k], truths[k], flip)
        for name in ("w", "mu1", "mu2", "beta"):
            out[name] += errs[name]
        if sigmas is None:
            out["sigma"] = math.nan
        else:
            out["sigma"] += _spectral_norm(sigmas[k] - truths[k].sigma)
    count = len(eval_idx)
    return {name: value / count if not math.isnan(value) else value for name, value in out.items()}


def _metrics_from_fit(
    method: str,
    thetas: list[ThetaEstimate],
    sigmas: list[np.ndarray] | None,
    data: SimData,
    eval_idx: np.ndarray,
) -> RepMetrics:
    est = _flip_resolved_errors(thetas, sigmas, data.truths, eval_idx)
    test_errors = np.array(
        [misclustering_error(thetas[k], data.test[k]) for k in eval_idx]
    )
    return RepMetrics(method, est, test_errors)


def _eval_indices(data: SimData) -> np.ndarray:
    if data.target_index is not None:
        return np.array([data.target_index])
    return np.where(data.in_set)[0]


def _pooled_fit(data: SimData, em: EmSettings) -> tuple[ThetaEstimate, np.ndarray]:
    merged = np.vstack([task.z for task in data.train])
    theta0, _ = initial_estimates(merged)
    return em_single_task(TaskData(merged), theta0, max_iter=em.max_iter, tol=em.tol)


def _run_rep(
    config: SimConfig,
    rep: int,
    methods: tuple[str, ...],
    schedules: dict,
    em: EmSettings,
) -> dict[str, RepMetrics]:
    rng = np.random.default_rng((config.seed, rep))
    data = generate(config, rng)
    inits = _align_inits(data, config)
    eval_idx = _eval_indices(data)
    K_all = len(data.train)
    out: dict[str, RepMetrics] = {}

    source_fit: MtlFitResult | None = None
    if data.target_index is not None and ("tl" in methods or "mtl-center" in methods):
        source_fit = fit_mtl_gmm(
            data.train[1:], inits[1:], schedules["mtl_sources"], T=em.T, tol=em.tol
        )

    for method in methods:
        if method in ("single", "target-only"):
            thetas: list = [None] * K_all
            sigmas: list = [None] * K_all
            for k in eval_idx:
                thetas[k], sigmas[k] = em_single_task(
                    data.train[k], inits[k], max_iter=em.max_iter, tol=em.tol
                )
            out[method] = _metrics_from_fit(method, thetas, sigmas, data, eval_idx)
        elif method == "pooled":
            theta, sigma = _pooled_fit(data, em)
            out[method] = _metrics_from_fit(
                method, [theta] * K_all, [sigma] * K_all, data, eval_idx
            )
        elif method == "mtl":
            fit = fit_mtl_gmm(data.train, inits, schedules["mtl"], T=em.T, tol=em.tol)
            out[method] = _metrics_from_fit(method, fit.per_task, fit.sigmas, data, eval_idx)
        elif method == "mtl-center":
            assert source_fit is not None
            thetas = [source_fit.centers] * K_all
            out[method] = _metrics_from_fit(method, thetas, None, data, eval_idx)
        elif method == "tl":
            assert source_fit is not None
            fit0 = fit_tl_gmm(
                data.train[0], inits[0], source_fit.centers, schedules["tl"], T0=em.T, tol=em.tol
            )
            thetas = [fit0.theta0] * K_all
            sigmas = [fit0.sigma0] * K_all
            out[method] = _metrics_from_fit(method, thetas, sigmas, data, eval_idx)
        else:
            raise ValueError(f"unknown method {method!r}")
    return out


def _prepare_schedules(
    config: SimConfig,
    methods: tuple[str, ...],
    grid: CvGrid,
    em: EmSettings,
    cv_seed: int,
) -> dict:
    """Cross-validate the schedule constants on one generated dataset."""
    rng = np.random.default_rng((config.seed, 0))
    data = generate(config, rng)
    inits = _align_inits(data, config)
    schedules: dict = {}
    if data.target_index is None:
        if "mtl" in methods:
            schedules["mtl"], _ = cv_select_mtl(
                data.train, inits, grid, T=em.T, seed=cv_seed
            )
        return schedules
    if "mtl" in methods:
        schedules["mtl"], _ = cv_select_mtl(data.train, inits, grid, T=em.T, seed=cv_seed)
    if "tl" in methods or "mtl-center" in methods:
        schedules["mtl_sources"], _ = cv_select_mtl(
            data.train[1:], inits[1:], grid, T=em.T, seed=cv_seed
        )
    if "tl" in methods:
        source_fit = fit_mtl_gmm(
            data.train[1:], inits[1:], schedules["mtl_sources"], T=em.T, tol=em.tol
        )
        schedules["tl"], _ = cv_select_tl(
            data.train[0], inits[0], source_fit.centers, grid, T0=em.T, seed=cv_seed
        )
    return schedules


def _aggregate(
    config: SimConfig,
    methods: tuple[str, ...],
    collected: dict[str, list[RepMetrics]],
    failures: list[tuple[int, str, str]],
    schedules: dict,
) -> SimulationResult:
    rows: list[MetricRow] = []
    failed_counts = {m: sum(1 for _, fm, _ in failures if fm == m) for m in methods}
    for method in sorted(methods):
        reps = collected[method]
        per_metric: dict[str, list[float]] = {m: [] for m in EST_METRICS}
        per_metric["test_error"] = []
        for rm in reps:
            for name in EST_METRICS:
                per_metric[name].append(rm.est_errors[name])
            per_metric["test_error"].append(float(np.mean(rm.test_errors)))
        for metric in (*EST_METRICS, "test_error"):
            values = np.asarray(per_metric[metric], dtype=float)
            if len(values) == 0 or np.all(np.isnan(values)):
                mean, sd = math.nan, math.nan
            else:
                mean = float(np.mean(values))
                sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            rows.append(
                MetricRow(method, metric, mean, sd, len(reps), failed_counts[method])
            )
    return SimulationResult(config, rows, failures, schedules)


def _validate_methods(config: SimConfig, methods) -> tuple[str, ...]:
    methods = tuple(methods)
    allowed = TL_METHODS if config.is_transfer else MTL_METHODS
    for m in methods:
        if m not in allowed:
            raise ValueError(f"method {m!r} is not valid for scenario {config.scenario}")
    if not methods:
        raise ValueError("need at least one method")
    return methods


def run_replications(
    config: SimConfig,
    methods,
    grid: CvGrid | None = None,
    schedules: dict | None = None,
    em: EmSettings | None = None,
    threads: int = 1,
) -> SimulationResult:
    """Run ``config.reps`` replications of each method and aggregate the metrics.

    Schedule constants are cross-validated once per setting, on the dataset of
    the first replication stream, and reused across replications (pass
    ``schedules`` to override).  A replication whose fit fails is recorded
    under ``failures`` and excluded from that method's aggregates.
    """
    methods = _validate_methods(config, methods)
    em = em or EmSettings()
    grid = grid or CvGrid()
    if schedules is None:
        schedules = _prepare_schedules(config, methods, grid, em, cv_seed=config.seed)

    collected: dict[str, list[RepMetrics]] = {m: [] for m in methods}
    failures: list[tuple[int, str, str]] = []

    def handle(rep: int, result: dict[str, RepMetrics] | Exception):
        if isinstance(result, Exception):
            for m in methods:
                failures.append((rep, m, str(result)))
            return
        for m in methods:
            collected[m].append(result[m])

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {
                rep: pool.submit(_rep_worker, config, rep, methods, schedules, em)
                for rep in range(config.reps)
            }
            for rep in range(config.reps):
                try:
                    handle(rep, futures[rep].result())
                except Exception as exc:  # noqa: BLE001 - recorded, not dropped
                    handle(rep, exc)
    else:
        for rep in range(config.reps):
            try:
                handle(rep, _run_rep(config, rep, methods, schedules, em))
            except Exception as exc:  # noqa: BLE001 - recorded, not dropped
                handle(rep, exc)
    return _aggregate(config, methods, collected, failures, schedules)


def _rep_worker(config, rep, methods, schedules, em):
    return _run_rep(config, rep, methods, schedules, em)


def run_sweep(
    config: SimConfig,
    param: str,
    values,
    methods,
    grid: CvGrid | None = None,
    em: EmSettings | None = None,
    threads: int = 1,
) -> list[tuple[float, SimulationResult]]:
    """Re-run the benchmark at each value of one heterogeneity parameter."""
    if param not in ("h_w", "h_mu", "h_beta", "n_outliers"):
        raise ValueError(f"cannot sweep parameter {param!r}")
    out = []
    for value in values:
        cfg = dataclasses.replace(config, **{param: value})
        out.append((value, run_replications(cfg, methods, grid=grid, em=em, threads=threads)))
    return out


# ---------------------------------------------------------------------------
# Empirical convergence-rate probe
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RateProbeResult:
    ns: list[int]
    mean_d: list[float]
    slope: float
    ci: tuple[float, float]
    method: str


def _flip_min_distance(theta: ThetaEstimate, truth: GmmParams) -> float:
    direct = distance_d(theta, truth.theta()).value
    flipped = distance_d(theta.flipped(), truth.theta()).value
    return min(direct, flipped)


def rate_probe(
    p: int = 5,
    n_list=(100, 400, 1600),
    reps: int = 100,
    seed: int = 0,
    method: str = "single",
    K: int = 5,
    bootstrap: int = 200,
) -> RateProbeResult:
    """Slope of log mean-parameter-distance against log total sample size.

    Identical tasks, no outliers.  Under the root-n convergence of the
    estimators the slope should sit near -1/2.  The confidence interval is a
    bootstrap over replications.
    """
    if method not in ("single", "mtl"):
        raise ValueError("method must be 'single' or 'mtl'")
    base = np.zeros(p)
    base[0] = 2.0
    truth = GmmParams(0.5, base, -base, ar1_cov(p, 0.2))
    schedule = mtl_schedule_from_cell(0.5, 0.5)

    samples: list[np.ndarray] = []
    for n in n_list:
        dists = np.empty(reps)
        for rep in range(reps):
            rng = np.random.default_rng((seed, n, rep))
            if method == "single":
                z, _ = _sample_gmm(truth, n, rng)
                theta0, _ = initial_estimates(z)
                theta, _ = em_single_task(TaskData(z), theta0)
                dists[rep] = _flip_min_distance(theta, truth)
            else:
                tasks, inits = [], []
                for _ in range(K):
                    z, _ = _sample_gmm(truth, n, rng)
                    tasks.append(TaskData(z))
                    inits.append(initial_estimates(z)[0])
                pairs = [(t.mu1, t.mu2) for t in inits]
                inits = apply_alignment_theta(inits, align_exhaustive(pairs))
                fit = fit_mtl_gmm(tasks, inits, schedule)
                dists[rep] = float(
                    np.mean([_flip_min_distance(t, truth) for t in fit.per_task])
                )
        samples.append(dists)

    scale = 1 if method == "single" else K
    log_n = np.log([scale * n for n in n_list])

    def slope_of(means: np.ndarray) -> float:
        return float(np.polyfit(log_n, np.log(means), 1)[0])

    means = np.array([s.mean() for s in samples])
    slope = slope_of(means)
    boot_rng = np.random.default_rng((seed, 777))
    boot_slopes = np.empty(bootstrap)
    for b in range(bootstrap):
        boot_means = np.array(
            [s[boot_rng.integers(0, len(s), len(s))].mean() for s in samples]
        )
        boot_slopes[b] = slope_of(boot_means)
    ci = (float(np.quantile(boot_slopes, 0.025)), float(np.quantile(boot_slopes, 0.975)))
    return RateProbeResult(list(n_list), [float(m) for m in means], slope, ci, method)

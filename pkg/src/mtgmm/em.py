"""Single-task EM and the penalized multi-task EM loop.

One outer round freezes the posteriors at the previous iterate, solves the
three joint penalized problems (weights, both component means), refreshes the
per-task pooled covariances, and finishes with the joint penalized
discriminant problem.  With all penalties at zero the round reproduces the
standard per-task EM update exactly (same arithmetic path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateComponentError,
    NotPositiveDefiniteError,
    TaskData,
    ThetaEstimate,
    cholesky_spd,
    distance_d,
    posterior_gamma,
    solve_spd,
)
from .prox import clamp_w, solve_joint_penalized, weighted_geometric_median

SIGMA_RIDGE = 1e-8
DEGENERATE_GAMMA = 1e-12


@dataclass(frozen=True)
class TuningSchedule:
    """Constants driving the per-round penalty levels of the multi-task fit.

    ``c1_*``/``c2_*`` are the base constants (applied at round 1) of the two
    terms in each penalty; ``script_c`` holds the four coupling constants of
    the recurrence and ``kappa`` its contraction factor.  At round t the
    penalties are

        lambda_w    = C_w^(1)[t]    sqrt(p + log K) + C_w^(2)[t]    max_k sqrt(n_k)
        lambda_mu   = C_mu^(1)[t]   sqrt(p + log K) + C_mu^(2)[t]   max_k sqrt(n_k)
        lambda_beta = C_beta^(1)[t] sqrt(p + log K) + C_beta^(2)[t] max_k sqrt(n_k)

    where for t >= 2 each C^(1) constant is its base value plus kappa times a
    shared mix of the previous C^(1) values, each C^(2) constant is kappa
    times the mix of previous C^(2) values, and the beta constants
    additionally pick up script_c[3] times the current mu constant of the
    same tier.  The second tier decays geometrically iff
    kappa * (script_c[0] + script_c[1] + script_c[2] * (1 + script_c[3])) < 1.
    """

    c1_w: float
    c1_mu: float
    c1_beta: float
    c2_w: float = 0.0
    c2_mu: float = 0.0
    c2_beta: float = 0.0
    script_c: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    kappa: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError("kappa must lie in [0, 1)")
        constants = (self.c1_w, self.c1_mu, self.c1_beta, self.c2_w, self.c2_mu, self.c2_beta)
        if min(constants) < 0.0:
            raise ValueError("schedule constants must be nonnegative")
        # The statistical guarantees assume positive first-tier constants, but
        # zero constants are legitimate fit configurations (no pooling of the
        # corresponding block), e.g. during cross-validation or reduction tests.
        if len(self.script_c) != 4 or min(self.script_c) < 0.0:
            raise ValueError("script_c must be four nonnegative scalars")

    def constants_at(self, t: int) -> tuple[float, float, float, float, float, float]:
        """(C_w^(1), C_mu^(1), C_beta^(1), C_w^(2), C_mu^(2), C_beta^(2)) at round t."""
        if t < 1:
            raise ValueError("round index starts at 1")
        s1, s2, s3, s4 = self.script_c
        c1w, c1m, c1b = self.c1_w, self.c1_mu, self.c1_beta
        c2w, c2m, c2b = self.c2_w, self.c2_mu, self.c2_beta
        for _ in range(t - 1):
            mix1 = self.kappa * (s1 * c1w + s2 * c1m + s3 * c1b)
            mix2 = self.kappa * (s1 * c2w + s2 * c2m + s3 * c2b)
            c1w, c2w = self.c1_w + mix1, mix2
            c1m, c2m = self.c1_mu + mix1, mix2
            c1b, c2b = self.c1_beta + s4 * c1m + mix1, s4 * c2m + mix2
        return c1w, c1m, c1b, c2w, c2m, c2b


def zero_schedule() -> TuningSchedule:
    """All-zero penalties (single-task reduction); intended for testing."""
    return TuningSchedule(0.0, 0.0, 0.0, kappa=0.0)


def tuning_lambda(
    schedule: TuningSchedule, t: int, p: int, n_tasks: int, max_nk: int
) -> tuple[float, float, float]:
    """Penalty levels (lambda_w, lambda_mu, lambda_beta) for round t."""
    c1w, c1m, c1b, c2w, c2m, c2b = schedule.constants_at(t)
    base = math.sqrt(p + math.log(n_tasks))
    root_n = math.sqrt(max_nk)
    return (
        c1w * base + c2w * root_n,
        c1m * base + c2m * root_n,
        c1b * base + c2b * root_n,
    )


def _estep_stats(theta: ThetaEstimate, z: np.ndarray):
    """Posterior weights and the sufficient statistics of one EM round."""
    gamma = posterior_gamma(theta, z)
    if np.all(gamma <= DEGENERATE_GAMMA):
        raise DegenerateComponentError(2)
    if np.all(gamma >= 1.0 - DEGENERATE_GAMMA):
        raise DegenerateComponentError(1)
    comp = 1.0 - gamma
    a1 = float(comp.sum())
    a2 = float(gamma.sum())
    gbar = a2 / len(gamma)
    m1 = (comp @ z) / a1
    m2 = (gamma @ z) / a2
    return gamma, gbar, a1, m1, a2, m2


def _pooled_covariance(
    z: np.ndarray, gamma: np.ndarray, mu1: np.ndarray, mu2: np.ndarray
) -> np.ndarray:
    r1 = z - mu1
    r2 = z - mu2
    comp = 1.0 - gamma
    sigma = (r1.T @ (r1 * comp[:, None]) + r2.T @ (r2 * gamma[:, None])) / len(gamma)
    return 0.5 * (sigma + sigma.T)


def _ensure_pd(sigma: np.ndarray) -> np.ndarray:
    """Return sigma, ridged by 1e-8 trace/p if the Cholesky factorization fails."""
    try:
        cholesky_spd(sigma)
        return sigma
    except NotPositiveDefiniteError:
        pass
    p = sigma.shape[0]
    ridge = SIGMA_RIDGE * float(np.trace(sigma)) / p
    if ridge <= 0.0:
        raise NotPositiveDefiniteError("covariance update is singular even after ridging")
    sigma = sigma + ridge * np.eye(p)
    cholesky_spd(sigma)  # still singular -> error
    return sigma


def em_step(z: np.ndarray, theta: ThetaEstimate) -> tuple[ThetaEstimate, np.ndarray]:
    """One standard EM update of (w, mu1, mu2, sigma, beta)."""
    gamma, gbar, _, m1, _, m2 = _estep_stats(theta, z)
    w = clamp_w(gbar)
    sigma = _ensure_pd(_pooled_covariance(z, gamma, m1, m2))
    beta = solve_spd(sigma, m1 - m2)
    return ThetaEstimate(w, m1, m2, beta), sigma


def iter_em(data: TaskData, init: ThetaEstimate):
    """Infinite generator of EM iterates (theta, sigma), starting after one step."""
    theta = init
    while True:
        theta, sigma = em_step(data.z, theta)
        yield theta, sigma


def check_spread(z: np.ndarray):
    """Reject constant data: its covariance stays singular even after ridging."""
    if np.all(z == z[0]):
        raise ValueError(
            "all observations are identical; the covariance update is singular "
            "even after ridging"
        )


def em_single_task(
    data: TaskData,
    init: ThetaEstimate,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> tuple[ThetaEstimate, np.ndarray]:
    """Standard EM on one task, stopped when d(theta_t, theta_{t-1}) < tol."""
    if init.p != data.p:
        raise ValueError("initial estimate dimension does not match the data")
    if data.n < data.p + 2:
        raise ValueError(f"need at least p + 2 = {data.p + 2} observations, got {data.n}")
    check_spread(data.z)
    theta = init
    sigma = None
    for _ in range(max_iter):
        new_theta, sigma = em_step(data.z, theta)
        delta = distance_d(new_theta, theta).value
        theta = new_theta
        if delta < tol:
            break
    if sigma is None:
        raise ValueError("max_iter must be at least 1")
    return theta, sigma


@dataclass(eq=False)
class MtlFitResult:
    """Output of the multi-task fit: per-task estimates plus the shared centers."""

    per_task: list[ThetaEstimate]
    sigmas: list[np.ndarray]
    centers: ThetaEstimate
    lambdas: list[tuple[float, float, float]]
    max_changes: list[float]
    iterations: int
    history: list[list[ThetaEstimate]] | None = None

    @property
    def trajectory(self) -> dict:
        return {"lambdas": self.lambdas, "max_changes": self.max_changes}


def default_rounds(total_n: int, p: int) -> int:
    """Default round cap: ceil(5 log(sum_k n_k / p)) + 10."""
    return int(math.ceil(5.0 * math.log(total_n / p))) + 10


def fit_mtl_gmm(
    tasks: list[TaskData],
    inits: list[ThetaEstimate],
    schedule: TuningSchedule,
    T: int | None = None,
    tol: float = 1e-6,
    keep_history: bool = False,
) -> MtlFitResult:
    """Penalized multi-task EM across K tasks with pre-aligned initializations.

    Per round: set the penalty levels from ``schedule``; solve the joint
    penalized problems for the weights and the two component means; update
    each task's pooled covariance; solve the joint penalized discriminant
    problem.  Posteriors are computed once per round per task at the previous
    iterate.  Stops early when the largest per-task parameter change falls
    below ``tol``.
    """
    K = len(tasks)
    if K == 0 or len(inits) != K:
        raise ValueError("need one initialization per task")
    p = tasks[0].p
    if any(task.p != p for task in tasks) or any(init.p != p for init in inits):
        raise ValueError("all tasks and initializations must share one dimension")
    ns = [task.n for task in tasks]
    for k, task in enumerate(tasks):
        try:
            check_spread(task.z)
        except ValueError as exc:
            raise ValueError(f"task {k}: {exc}") from exc
    if T is None:
        T = default_rounds(sum(ns), p)
    if T < 1:
        raise ValueError("at least one round is required")
    max_nk = max(ns)

    thetas = list(inits)
    sigmas: list[np.ndarray] = []
    centers: ThetaEstimate | None = None
    lambdas: list[tuple[float, float, float]] = []
    max_changes: list[float] = []
    history: list[list[ThetaEstimate]] | None = [] if keep_history else None

    rounds_done = 0
    for t in range(1, T + 1):
        lam_w, lam_mu, lam_beta = tuning_lambda(schedule, t, p, K, max_nk)
        lambdas.append((lam_w, lam_mu, lam_beta))

        stats = []
        for k, task in enumerate(tasks):
            try:
                stats.append(_estep_stats(thetas[k], task.z))
            except DegenerateComponentError as exc:
                raise DegenerateComponentError(
                    exc.component, f"task {k}: {exc}"
                ) from exc

        w_sol = solve_joint_penalized(
            "scalar-w", [(s[1],) for s in stats], ns, lam_w
        )
        mu1_sol = solve_joint_penalized(
            "vector-mu", [(s[2], s[3]) for s in stats], ns, lam_mu
        )
        mu2_sol = solve_joint_penalized(
            "vector-mu", [(s[4], s[5]) for s in stats], ns, lam_mu
        )

        new_sigmas = []
        beta_blocks = []
        for k, task in enumerate(tasks):
            try:
                sigma = _ensure_pd(
                    _pooled_covariance(task.z, stats[k][0], mu1_sol.per_task[k], mu2_sol.per_task[k])
                )
            except NotPositiveDefiniteError as exc:
                raise NotPositiveDefiniteError(f"task {k}: {exc}") from exc
            new_sigmas.append(sigma)
            beta_blocks.append((sigma, mu1_sol.per_task[k] - mu2_sol.per_task[k]))
        beta_sol = solve_joint_penalized("vector-beta", beta_blocks, ns, lam_beta)

        new_thetas = [
            ThetaEstimate(
                w_sol.per_task[k], mu1_sol.per_task[k], mu2_sol.per_task[k], beta_sol.per_task[k]
            )
            for k in range(K)
        ]
        change = max(distance_d(new_thetas[k], thetas[k]).value for k in range(K))
        max_changes.append(change)
        thetas = new_thetas
        sigmas = new_sigmas
        centers = ThetaEstimate(
            clamp_w(w_sol.center), mu1_sol.center, mu2_sol.center, beta_sol.center
        )
        if keep_history:
            history.append(list(thetas))
        rounds_done = t
        if change < tol:
            break

    assert centers is not None
    return MtlFitResult(thetas, sigmas, centers, lambdas, max_changes, rounds_done, history)


def pooled_center_initialization(
    inits: list[ThetaEstimate], ns: list[int]
) -> ThetaEstimate:
    """Weighted geometric median of per-task estimates, as a center estimate."""
    sqrt_ns = np.sqrt(np.asarray(ns, dtype=float))
    w = weighted_geometric_median(np.array([t.w for t in inits]), sqrt_ns)
    mu1 = weighted_geometric_median(np.array([t.mu1 for t in inits]), sqrt_ns)
    mu2 = weighted_geometric_median(np.array([t.mu2 for t in inits]), sqrt_ns)
    beta = weighted_geometric_median(np.array([t.beta for t in inits]), sqrt_ns)
    return ThetaEstimate(clamp_w(w), mu1, mu2, beta)

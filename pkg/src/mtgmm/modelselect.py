"""Cross-validated choice of the tuning-schedule base constants.

The grid is two-dimensional: one candidate value is shared by the pair of
weight constants, the other by the four mean/discriminant constants.  Each
cell is scored by the summed held-out log-likelihood of the fitted mixture
(w, mu1, mu2, sigma); the contraction factor is fixed at 1/3 and all
coupling constants at 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GmmParams, TaskData, ThetaEstimate, log_likelihood
from .em import TuningSchedule, fit_mtl_gmm
from .transfer import TlSchedule, fit_tl_gmm

CV_KAPPA = 1.0 / 3.0
# The coupled constant recurrence contracts iff kappa * (C1 + C2 + C3 (1 + C4))
# < 1.  At kappa = 1/3 unit coupling constants give radius 4/3, which blows
# the penalties up geometrically and collapses every nonzero grid cell into
# full pooling; 1/2 keeps the pinned kappa while the second-tier constants
# decay (radius 7/12).
CV_SCRIPT_C = (0.5, 0.5, 0.5, 0.5)


@dataclass(frozen=True)
class CvGrid:
    """Candidate values for the tied weight pair and the tied rest quadruple."""

    values_w: tuple[float, ...] = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
    values_rest: tuple[float, ...] = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
    folds: int = 5

    def __post_init__(self):
        if not self.values_w or not self.values_rest:
            raise ValueError("grids must be nonempty")
        if min(self.values_w) < 0.0 or min(self.values_rest) < 0.0:
            raise ValueError("grid candidates must be nonnegative")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")

    def cells(self) -> list[tuple[float, float]]:
        """All (c_w, c_rest) cells, ascending, so ties resolve to smaller constants."""
        return [(cw, cr) for cw in sorted(self.values_w) for cr in sorted(self.values_rest)]


def mtl_schedule_from_cell(c_w: float, c_rest: float) -> TuningSchedule:
    return TuningSchedule(
        c1_w=c_w, c1_mu=c_rest, c1_beta=c_rest,
        c2_w=c_w, c2_mu=c_rest, c2_beta=c_rest,
        script_c=CV_SCRIPT_C, kappa=CV_KAPPA,
    )


def tl_schedule_from_cell(c_w: float, c_rest: float) -> TlSchedule:
    return TlSchedule(
        c1_w=c_w, c1_mu=c_rest, c1_beta=c_rest,
        c2_w=c_w, c2_mu=c_rest, c2_beta=c_rest,
        script_c=CV_SCRIPT_C, kappa0=CV_KAPPA,
    )


def _fold_indices(n: int, folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, folds)]


def _split_task(task: TaskData, fold: np.ndarray) -> tuple[TaskData, TaskData]:
    mask = np.zeros(task.n, dtype=bool)
    mask[fold] = True
    return TaskData(task.z[~mask]), TaskData(task.z[mask])


def _check_fold_sizes(tasks: Sequence[TaskData], folds: int):
    for k, task in enumerate(tasks):
        if task.n < folds * (task.p + 2):
            raise ValueError(
                f"task {k}: need at least folds * (p + 2) = {folds * (task.p + 2)} "
                f"observations for {folds}-fold selection, got {task.n}"
            )


def cv_select_mtl(
    tasks: Sequence[TaskData],
    inits: Sequence[ThetaEstimate],
    grid: CvGrid | None = None,
    T: int | None = None,
    seed: int = 0,
) -> tuple[TuningSchedule, list[dict]]:
    """Pick multi-task schedule constants by held-out mixture log-likelihood.

    Observations are split into folds independently per task from one seed.
    Every grid cell is fitted on each training split (with the provided
    initializations) and scored by the summed validation log-likelihood of
    the per-task fitted (w, mu1, mu2, sigma).  A cell whose fit fails
    records -inf.  Returns the winning schedule and the full table.
    """
    grid = grid or CvGrid()
    _check_fold_sizes(tasks, grid.folds)
    rng = np.random.default_rng(seed)
    per_task_folds = [_fold_indices(task.n, grid.folds, rng) for task in tasks]

    splits = []
    for f in range(grid.folds):
        pairs = [_split_task(task, per_task_folds[k][f]) for k, task in enumerate(tasks)]
        splits.append(pairs)

    table: list[dict] = []
    best_cell: tuple[float, float] | None = None
    best_loglik = -np.inf
    for c_w, c_rest in grid.cells():
        schedule = mtl_schedule_from_cell(c_w, c_rest)
        total = 0.0
        try:
            for pairs in splits:
                fit = fit_mtl_gmm([tr for tr, _ in pairs], list(inits), schedule, T=T)
                for k, (_, val) in enumerate(pairs):
                    theta = fit.per_task[k]
                    params = GmmParams(theta.w, theta.mu1, theta.mu2, fit.sigmas[k])
                    total += log_likelihood(params, val)
        except (ValueError, np.linalg.LinAlgError):
            total = -np.inf
        table.append({"c_w": c_w, "c_rest": c_rest, "loglik": total})
        if total > best_loglik:
            best_loglik = total
            best_cell = (c_w, c_rest)
    if best_cell is None:
        raise ValueError("every grid cell failed to fit")
    return mtl_schedule_from_cell(*best_cell), table


def cv_select_tl(
    target: TaskData,
    init0: ThetaEstimate,
    anchors: ThetaEstimate,
    grid: CvGrid | None = None,
    T0: int | None = None,
    seed: int = 0,
) -> tuple[TlSchedule, list[dict]]:
    """Transfer-learning analogue of cv_select_mtl on the target task only."""
    grid = grid or CvGrid()
    _check_fold_sizes([target], grid.folds)
    rng = np.random.default_rng(seed)
    folds = _fold_indices(target.n, grid.folds, rng)
    splits = [_split_task(target, fold) for fold in folds]

    table: list[dict] = []
    best_cell: tuple[float, float] | None = None
    best_loglik = -np.inf
    for c_w, c_rest in grid.cells():
        schedule = tl_schedule_from_cell(c_w, c_rest)
        total = 0.0
        try:
            for train, val in splits:
                fit = fit_tl_gmm(train, init0, anchors, schedule, T0=T0)
                params = GmmParams(fit.theta0.w, fit.theta0.mu1, fit.theta0.mu2, fit.sigma0)
                total += log_likelihood(params, val)
        except (ValueError, np.linalg.LinAlgError):
            total = -np.inf
        table.append({"c_w": c_w, "c_rest": c_rest, "loglik": total})
        if total > best_loglik:
            best_loglik = total
            best_cell = (c_w, c_rest)
    if best_cell is None:
        raise ValueError("every grid cell failed to fit")
    return tl_schedule_from_cell(*best_cell), table

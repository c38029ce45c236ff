"""Penalized EM on a target task anchored at centers learned from sources.

Each round runs the single-task specializations of the penalized M-steps:
every block shrinks toward a fixed anchor (the source centers) instead of a
jointly estimated one.  With all penalties at zero the procedure is exactly
the standard EM on the target data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateComponentError,
    TaskData,
    ThetaEstimate,
    distance_d,
)
from .em import _ensure_pd, _estep_stats, _pooled_covariance, check_spread, default_rounds
from .prox import prox_scalar_w, prox_vector_beta, prox_vector_mu


@dataclass(frozen=True)
class TlSchedule:
    """Constants driving the per-round penalty levels of the transfer fit.

    Mirrors the multi-task schedule, but the penalties scale with sqrt(p)
    (no log K term) and sqrt(n0):

        lambda_* = C_*^(1)[t] sqrt(p) + C_*^(2)[t] sqrt(n0)

    ``beta2_uses_mu1`` keeps the recurrence for the second-tier beta constant
    coupled to the first-tier mu constant, as printed in the source
    derivation; set it False for the variant symmetric with the multi-task
    recurrence (coupling to the second-tier mu constant).
    """

    c1_w: float
    c1_mu: float
    c1_beta: float
    c2_w: float = 0.0
    c2_mu: float = 0.0
    c2_beta: float = 0.0
    script_c: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    kappa0: float = 1.0 / 3.0
    beta2_uses_mu1: bool = True

    def __post_init__(self):
        if not 0.0 <= self.kappa0 < 1.0:
            raise ValueError("kappa0 must lie in [0, 1)")
        constants = (self.c1_w, self.c1_mu, self.c1_beta, self.c2_w, self.c2_mu, self.c2_beta)
        if min(constants) < 0.0:
            raise ValueError("schedule constants must be nonnegative")
        if len(self.script_c) != 4 or min(self.script_c) < 0.0:
            raise ValueError("script_c must be four nonnegative scalars")

    def constants_at(self, t: int) -> tuple[float, float, float, float, float, float]:
        if t < 1:
            raise ValueError("round index starts at 1")
        s1, s2, s3, s4 = self.script_c
        c1w, c1m, c1b = self.c1_w, self.c1_mu, self.c1_beta
        c2w, c2m, c2b = self.c2_w, self.c2_mu, self.c2_beta
        for _ in range(t - 1):
            mix1 = self.kappa0 * (s1 * c1w + s2 * c1m + s3 * c1b)
            mix2 = self.kappa0 * (s1 * c2w + s2 * c2m + s3 * c2b)
            c1w, c2w = self.c1_w + mix1, mix2
            c1m, c2m = self.c1_mu + mix1, mix2
            c1b_new = self.c1_beta + s4 * c1m + mix1
            c2b_new = s4 * (c1m if self.beta2_uses_mu1 else c2m) + mix2
            c1b, c2b = c1b_new, c2b_new
        return c1w, c1m, c1b, c2w, c2m, c2b


def tl_tuning_lambda(
    schedule: TlSchedule, t: int, p: int, n0: int
) -> tuple[float, float, float]:
    """Penalty levels (lambda_w, lambda_mu, lambda_beta) for target round t."""
    c1w, c1m, c1b, c2w, c2m, c2b = schedule.constants_at(t)
    base = math.sqrt(p)
    root_n = math.sqrt(n0)
    return (
        c1w * base + c2w * root_n,
        c1m * base + c2m * root_n,
        c1b * base + c2b * root_n,
    )


@dataclass(eq=False)
class TlFitResult:
    """Output of the transfer fit on the target task."""

    theta0: ThetaEstimate
    sigma0: np.ndarray
    anchors: ThetaEstimate
    iterations: int
    lambdas: list[tuple[float, float, float]] | None = None


def fit_tl_gmm(
    target: TaskData,
    init0: ThetaEstimate,
    anchors: ThetaEstimate,
    schedule: TlSchedule,
    T0: int | None = None,
    tol: float = 1e-6,
) -> TlFitResult:
    """Penalized EM on the target, shrinking toward the fixed source centers.

    ``anchors`` holds the center estimates (w, mu1, mu2, beta) from a
    completed multi-task fit on the sources; they are never re-estimated.
    ``init0`` must already be aligned to the anchors.
    """
    if anchors.p != target.p or init0.p != target.p:
        raise ValueError("anchor and initialization dimensions must match the target")
    n0 = target.n
    if n0 < target.p + 2:
        raise ValueError(f"need at least p + 2 = {target.p + 2} observations, got {n0}")
    check_spread(target.z)
    if T0 is None:
        T0 = default_rounds(n0, target.p)
    if T0 < 1:
        raise ValueError("at least one round is required")

    theta = init0
    sigma = None
    lambdas: list[tuple[float, float, float]] = []
    rounds_done = 0
    for t in range(1, T0 + 1):
        lam_w, lam_mu, lam_beta = tl_tuning_lambda(schedule, t, target.p, n0)
        lambdas.append((lam_w, lam_mu, lam_beta))
        try:
            gamma, gbar, a1, m1, a2, m2 = _estep_stats(theta, target.z)
        except DegenerateComponentError as exc:
            raise DegenerateComponentError(exc.component, f"target task: {exc}") from exc
        w = prox_scalar_w(gbar, n0, lam_w, anchors.w)
        mu1 = prox_vector_mu(a1, m1, n0, lam_mu, anchors.mu1)
        mu2 = prox_vector_mu(a2, m2, n0, lam_mu, anchors.mu2)
        sigma = _ensure_pd(_pooled_covariance(target.z, gamma, mu1, mu2))
        beta = prox_vector_beta(sigma, mu1 - mu2, n0, lam_beta, anchors.beta)
        new_theta = ThetaEstimate(w, mu1, mu2, beta)
        delta = distance_d(new_theta, theta).value
        theta = new_theta
        rounds_done = t
        if delta < tol:
            break
    assert sigma is not None
    return TlFitResult(theta, sigma, anchors, rounds_done, lambdas)


def zero_tl_schedule() -> TlSchedule:
    """All-zero penalties (target-only reduction); intended for testing."""
    return TlSchedule(0.0, 0.0, 0.0, kappa0=0.0)

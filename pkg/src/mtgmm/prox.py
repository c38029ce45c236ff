"""Convex subproblem solvers for the penalized M-steps.

Each M-step of the multi-task procedure couples K per-task quadratic losses
through a Euclidean-norm penalty toward a shared center.  With the center
fixed, every per-task block has a closed form (scalar and vector soft
thresholds) except the discriminant block, which reduces to a scalar root
find.  With the per-task values fixed, the center is a weighted geometric
median.  ``solve_joint_penalized`` alternates the two until stationary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import NotPositiveDefiniteError, solve_spd

# Weights are clamped into [W_CLAMP, 1 - W_CLAMP] after every update so that
# posterior odds stay finite.
W_CLAMP = 1e-6

_BISECT_REL_TOL = 1e-10
_COINCIDENCE_EPS = 1e-12


def clamp_w(w: float) -> float:
    """Clamp a mixture proportion into [1e-6, 1 - 1e-6]."""
    return min(max(w, W_CLAMP), 1.0 - W_CLAMP)


def prox_scalar_w(gbar: float, n: int, lam: float, anchor: float) -> float:
    """Minimize n/2 (w - gbar)^2 + sqrt(n) lam |w - anchor|, then clamp.

    The solution is the scalar soft threshold of ``gbar`` toward ``anchor``
    with radius lam / sqrt(n).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if lam < 0.0:
        raise ValueError("penalty weight must be nonnegative")
    if lam == 0.0:
        return clamp_w(gbar)
    threshold = lam / np.sqrt(n)
    diff = gbar - anchor
    if abs(diff) <= threshold:
        return clamp_w(anchor)
    return clamp_w(anchor + np.sign(diff) * (abs(diff) - threshold))


def prox_vector_mu(
    weight_sum: float,
    weighted_mean: np.ndarray,
    n: int,
    lam: float,
    anchor: np.ndarray,
) -> np.ndarray:
    """Minimize A/2 ||mu - m||^2 + sqrt(n) lam ||mu - anchor|| (block soft threshold).

    ``weight_sum`` is the total posterior weight A of the component and
    ``weighted_mean`` the posterior-weighted sample mean m.  A <= 0 signals a
    degenerate E-step and is rejected.
    """
    if weight_sum <= 0.0:
        raise ValueError("posterior weight sum must be positive (degenerate E-step)")
    if lam < 0.0:
        raise ValueError("penalty weight must be nonnegative")
    m = np.asarray(weighted_mean, dtype=float)
    if lam == 0.0:
        return m.copy()
    anchor = np.asarray(anchor, dtype=float)
    diff = m - anchor
    gap = float(np.linalg.norm(diff))
    radius = np.sqrt(n) * lam / weight_sum
    if gap <= radius:
        return anchor.copy()
    return anchor + (1.0 - radius / gap) * diff


def prox_vector_beta(
    sigma_hat: np.ndarray,
    d_vec: np.ndarray,
    n: int,
    lam: float,
    anchor: np.ndarray,
) -> np.ndarray:
    """Minimize n [1/2 b' sigma_hat b - b' d] + sqrt(n) lam ||b - anchor||.

    First tests the subgradient stationarity of the anchor
    (||sigma_hat @ anchor - d|| <= lam / sqrt(n)); otherwise solves the
    scalar equation in r = ||b - anchor|| by bisection on
    r in (0, ||sigma_hat^{-1} d - anchor||], where
    b(r) = (sigma_hat + (lam / (sqrt(n) r)) I)^{-1} (d + (lam / (sqrt(n) r)) anchor).
    """
    if lam < 0.0:
        raise ValueError("penalty weight must be nonnegative")
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    d_vec = np.asarray(d_vec, dtype=float)
    if lam == 0.0:
        return solve_spd(sigma_hat, d_vec)
    anchor = np.asarray(anchor, dtype=float)
    threshold = lam / np.sqrt(n)
    resid = sigma_hat @ anchor - d_vec
    if np.linalg.norm(resid) <= threshold:
        return anchor.copy()

    # One eigendecomposition makes each bisection step O(p): in the eigenbasis
    # b(r) - anchor = (L + (threshold/r) I)^{-1} Q'(d - sigma_hat anchor).
    eigval, eigvec = np.linalg.eigh(sigma_hat)
    if eigval[0] <= 0.0:
        raise NotPositiveDefiniteError("sigma_hat is not positive definite")
    v = eigvec.T @ (-resid)

    def gap_minus_r(r: float) -> float:
        return float(np.linalg.norm(v / (eigval + threshold / r))) - r

    unpen = solve_spd(sigma_hat, d_vec)
    hi = float(np.linalg.norm(unpen - anchor))
    if hi <= 0.0 or gap_minus_r(hi) > 0.0:
        raise ValueError("bisection bracket failed; inconsistent prox inputs")
    lo = 0.0
    # gap_minus_r(0+) > 0 because the stationarity test above failed.
    while hi - lo > _BISECT_REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        if gap_minus_r(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    c = threshold / r
    return solve_spd(sigma_hat + c * np.eye(len(d_vec)), d_vec + c * anchor)


def _vertex_optimum(pts: np.ndarray, wts: np.ndarray, eps: float) -> np.ndarray | None:
    """The data point satisfying the geometric-median KKT condition, if any.

    Point i is optimal iff the pull of the others, sum over j of
    w_j (p_j - p_i) / ||p_j - p_i||, has norm at most the weight sitting at
    p_i (coinciding points pooled).  Only strict dominance is accepted: at
    equality the minimizer set extends beyond the vertex and the Weiszfeld
    limit (e.g. the midpoint for two equal weights) is preferred."""
    seen: list[np.ndarray] = []
    for i in range(pts.shape[0]):
        if any(np.linalg.norm(pts[i] - s) <= eps for s in seen):
            continue
        seen.append(pts[i])
        diff = pts - pts[i]
        dist = np.sqrt((diff * diff).sum(axis=1))
        near = dist <= eps
        inv = wts[~near] / dist[~near]
        pull = inv @ diff[~near]
        weight = float(wts[near].sum())
        # relative margin so that exact ties (pull norm equal to the vertex
        # weight up to rounding) fall through to the Weiszfeld iteration
        if float(np.sqrt(pull @ pull)) < weight * (1.0 - 1e-10):
            return pts[i].copy()
    return None


def _weighted_median_1d(points: np.ndarray, weights: np.ndarray) -> float:
    """Exact minimizer of sum_k w_k |x - p_k| (ties return the interval midpoint)."""
    order = np.argsort(points)
    pts = points[order]
    wts = weights[order]
    half = 0.5 * float(wts.sum())
    cum = np.cumsum(wts)
    idx = int(np.searchsorted(cum, half))
    if cum[idx] == half:
        # knife edge: every point of [pts[idx], pts[idx + 1]] is optimal
        return 0.5 * (pts[idx] + pts[idx + 1])
    return float(pts[idx])


def weighted_geometric_median(
    points: Sequence[np.ndarray] | np.ndarray,
    weights: Sequence[float],
    tol: float = 1e-10,
    max_iter: int = 10_000,
    x0: np.ndarray | None = None,
) -> float | np.ndarray:
    """Weiszfeld iteration for argmin_x sum_k weights_k ||x - points_k||.

    Candidates that land on a data point (within 1e-12) are kept only if the
    subgradient condition ||sum_{j != i} w_j (x_j - x_i)/||x_j - x_i|| || <= w_i
    holds; otherwise the update continues with the coinciding terms dropped
    and a damped step (the Vardi-Zhang correction), which avoids oscillating
    around a non-optimal vertex.  Converges to KKT residual <= tol times the
    total weight.

    Scalar input (a 1-d array of points) returns a float computed as the
    exact weighted median; the plain Weiszfeld iteration approaches vertex
    solutions, which are generic in one dimension, only sublinearly.
    """
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    wts = np.asarray(weights, dtype=float)
    if np.any(wts <= 0.0):
        raise ValueError("weights must be positive")
    if len(wts) != pts.shape[0]:
        raise ValueError("one weight per point required")
    if scalar:
        if pts.shape[0] == 1:
            return float(pts[0])
        return _weighted_median_1d(pts, wts)
    if pts.shape[0] == 1:
        return pts[0].copy()

    total = float(wts.sum())
    centered = pts - (wts @ pts) / total
    scale = max(float(np.sqrt((centered * centered).sum(axis=1).max())), 1.0)
    eps = _COINCIDENCE_EPS * scale
    kkt_floor = tol * total

    # Data points are frequent optima (and Weiszfeld approaches them only
    # sublinearly), so test the subgradient condition at each one first.
    vertex = _vertex_optimum(pts, wts, eps)
    if vertex is not None:
        return vertex

    x = (wts @ pts) / total if x0 is None else np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        diff = pts - x
        dist = np.sqrt((diff * diff).sum(axis=1))
        on_point = dist < eps
        anchor_weight = float(wts[on_point].sum())
        if on_point.all():
            break  # all points coincide with the iterate
        if anchor_weight > 0.0:
            active = ~on_point
            inv = wts[active] / dist[active]
            pull = inv @ diff[active]  # negative subgradient of the active terms
            residual = float(np.sqrt(pull @ pull))
            if residual <= anchor_weight:
                break
            target = (inv @ pts[active]) / inv.sum()
            damp = min(1.0, anchor_weight / residual)
            new_x = (1.0 - damp) * target + damp * x
        else:
            inv = wts / dist
            pull = inv @ diff
            residual = float(np.sqrt(pull @ pull))
            if residual <= kkt_floor:
                break
            new_x = (inv @ pts) / inv.sum()
        # Fixed point to machine precision: the KKT residual cannot improve
        # further (its floor scales with eps over the cluster diameter).
        step = new_x - x
        x = new_x
        if float(np.abs(step).max()) <= 1e-15 * (1.0 + float(np.abs(x).max())):
            break
    return x


def geometric_median_residual(points, weights, x) -> float:
    """Norm of the KKT residual of the weighted geometric median objective at x."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
        x = np.atleast_1d(x)
    wts = np.asarray(weights, dtype=float)
    diff = pts - np.asarray(x, dtype=float)
    dist = np.linalg.norm(diff, axis=1)
    on_point = dist < _COINCIDENCE_EPS * max(float(dist.max()), 1.0)
    inv = np.zeros_like(dist)
    inv[~on_point] = wts[~on_point] / dist[~on_point]
    grad = -inv @ diff
    slack = float(wts[on_point].sum())
    return max(0.0, float(np.linalg.norm(grad)) - slack)


@dataclass(frozen=True, eq=False)
class ProxProblem:
    """Canonical per-task block: minimize 1/2 x' H x - b' x + tau ||x - anchor||.

    ``kind`` selects the specialization ("scalar-w", "vector-mu",
    "vector-beta"); ``curvature`` is H (a positive scalar or a PD matrix),
    ``target`` the unpenalized minimizer H^{-1} b, ``penalty_weight`` the
    nonnegative tau (already including any sqrt(n) factor), and ``anchor``
    the center being shrunk toward.
    """

    kind: str
    curvature: float | np.ndarray
    target: float | np.ndarray
    penalty_weight: float
    anchor: float | np.ndarray

    def __post_init__(self):
        if self.kind not in ("scalar-w", "vector-mu", "vector-beta"):
            raise ValueError(f"unknown prox kind {self.kind!r}")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty weight must be nonnegative")
        if self.kind == "vector-beta":
            if np.ndim(self.curvature) != 2:
                raise ValueError("vector-beta curvature must be a matrix")
        elif not np.isscalar(self.curvature) and np.ndim(self.curvature) != 0:
            raise ValueError(f"{self.kind} curvature must be a positive scalar")

    def solve(self):
        """Exact minimizer of the block."""
        if self.kind == "scalar-w":
            # 1/2 H (w - g)^2 + tau |w - anchor|: soft threshold of radius tau / H,
            # obtained from the n = 1 specialization with lam = tau / H.
            h = float(self.curvature)
            if h <= 0.0:
                raise ValueError("scalar curvature must be positive")
            return prox_scalar_w(
                float(self.target), 1, self.penalty_weight / h, float(self.anchor)
            )
        if self.kind == "vector-mu":
            return prox_vector_mu(
                float(self.curvature), self.target, 1, self.penalty_weight, self.anchor
            )
        sigma = np.asarray(self.curvature, dtype=float)
        d_vec = sigma @ np.asarray(self.target, dtype=float)
        return prox_vector_beta(sigma, d_vec, 1, self.penalty_weight, self.anchor)


@dataclass(eq=False)
class JointPenalizedSolution:
    """Output of one alternating solve of a joint penalized block."""

    per_task: list
    center: float | np.ndarray
    inner_iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)


def _block_objective(kind, blocks, sqrt_ns, lam, per_task, center) -> float:
    total = 0.0
    for k, block in enumerate(blocks):
        x = per_task[k]
        if kind == "scalar-w":
            (gbar,) = block
            n = sqrt_ns[k] ** 2
            total += 0.5 * n * (x - gbar) ** 2 + sqrt_ns[k] * lam * abs(x - center)
        elif kind == "vector-mu":
            a, m = block
            total += 0.5 * a * float(np.sum((x - m) ** 2))
            total += sqrt_ns[k] * lam * float(np.linalg.norm(x - center))
        else:
            sigma, d = block
            n = sqrt_ns[k] ** 2
            total += n * (0.5 * float(x @ sigma @ x) - float(x @ d))
            total += sqrt_ns[k] * lam * float(np.linalg.norm(x - center))
    return total


def _unpenalized(kind, block):
    if kind == "scalar-w":
        return clamp_w(block[0])
    if kind == "vector-mu":
        return np.asarray(block[1], dtype=float).copy()
    sigma, d = block
    return solve_spd(sigma, d)


def _prox_one(kind, block, n, lam, anchor):
    if kind == "scalar-w":
        return prox_scalar_w(block[0], n, lam, anchor)
    if kind == "vector-mu":
        a, m = block
        return prox_vector_mu(a, m, n, lam, anchor)
    sigma, d = block
    return prox_vector_beta(sigma, d, n, lam, anchor)


def solve_joint_penalized(
    kind: str,
    blocks: Sequence[tuple],
    ns: Sequence[int],
    lam: float,
    init_per_task: Sequence | None = None,
    init_center=None,
    tol: float = 1e-8,
    max_sweeps: int = 200,
) -> JointPenalizedSolution:
    """Jointly minimize the K per-task blocks plus the shared-center penalty.

    ``blocks`` holds the per-task quadratic data: ``(gbar,)`` for
    "scalar-w", ``(weight_sum, weighted_mean)`` for "vector-mu",
    ``(sigma_hat, d_vec)`` for "vector-beta".  Alternates all per-task proxes
    (center fixed) with the weighted geometric median of the solutions
    (weights sqrt(n_k)) until the largest component change drops below
    ``tol`` or ``max_sweeps`` is hit.  The objective is jointly convex and
    decreases monotonically across sweeps.

    When no warm start is given, per-task values start at their unpenalized
    minimizers and the center at their weighted geometric median, so the
    full-shrinkage limit lands on a robust pooled center rather than on an
    arbitrary initial value.
    """
    if kind not in ("scalar-w", "vector-mu", "vector-beta"):
        raise ValueError(f"unknown joint block kind {kind!r}")
    if lam < 0.0:
        raise ValueError("penalty weight must be nonnegative")
    K = len(blocks)
    if len(ns) != K:
        raise ValueError("one sample size per task required")
    sqrt_ns = np.sqrt(np.asarray(ns, dtype=float))

    if init_per_task is None:
        per_task = [_unpenalized(kind, b) for b in blocks]
    else:
        per_task = [
            float(x) if kind == "scalar-w" else np.asarray(x, dtype=float).copy()
            for x in init_per_task
        ]
    if init_center is None:
        center = weighted_geometric_median(
            np.asarray(per_task, dtype=float), sqrt_ns, tol=tol, max_iter=200
        )
    else:
        center = (
            float(init_center)
            if kind == "scalar-w"
            else np.asarray(init_center, dtype=float).copy()
        )

    trace = [_block_objective(kind, blocks, sqrt_ns, lam, per_task, center)]
    if lam == 0.0:
        # Penalty off: blocks decouple; the center is still reported as the
        # weighted geometric median of the unpenalized solutions.
        per_task = [_unpenalized(kind, b) for b in blocks]
        center = weighted_geometric_median(np.asarray(per_task, dtype=float), sqrt_ns, tol=tol)
        trace.append(_block_objective(kind, blocks, sqrt_ns, lam, per_task, center))
        return JointPenalizedSolution(per_task, center, 1, True, trace)

    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        new_per_task = []
        for k, block in enumerate(blocks):
            x = _prox_one(kind, block, ns[k], lam, center)
            change = max(change, float(np.max(np.abs(np.asarray(x) - np.asarray(per_task[k])))))
            new_per_task.append(x)
        per_task = new_per_task
        # The per-sweep median refinement is capped; warm starts make the
        # refinement accumulate across sweeps while the outer change
        # criterion still governs convergence of the alternation.
        new_center = weighted_geometric_median(
            np.asarray(per_task, dtype=float),
            sqrt_ns,
            tol=tol,
            max_iter=60,
            x0=None if kind == "scalar-w" else center,
        )
        change = max(change, float(np.max(np.abs(np.asarray(new_center) - np.asarray(center)))))
        center = new_center
        trace.append(_block_objective(kind, blocks, sqrt_ns, lam, per_task, center))
        if change < tol:
            converged = True
            break
    return JointPenalizedSolution(per_task, center, sweeps, converged, trace)

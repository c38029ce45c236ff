"""Cluster-label alignment across tasks.

A binary mixture is identified only up to swapping its two cluster labels, so
per-task initial estimates must be relabeled before any cross-task shrinkage
makes sense.  An alignment assigns each task its label order; its score sums,
over ordered task pairs, the distances between same-label mean estimates.
Lower is better, and the score is invariant under flipping every task at
once, so all comparisons here are "up to global flip".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ThetaEstimate

EXHAUSTIVE_MAX_TASKS = 25
_ENUM_CHUNK = 1 << 14


@dataclass(frozen=True, eq=False)
class Alignment:
    """Per-task label orders r, r' in {1,2}^K with r_k != r'_k for every k."""

    r: np.ndarray
    r_prime: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=int)
        rp = np.asarray(self.r_prime, dtype=int)
        if r.shape != rp.shape or r.ndim != 1:
            raise ValueError("r and r_prime must be 1-d arrays of equal length")
        if not (np.all(np.isin(r, (1, 2))) and np.all(np.isin(rp, (1, 2)))):
            raise ValueError("labels must take values in {1, 2}")
        if np.any(r == rp):
            raise ValueError("r_k and r'_k must differ for every task")
        r.setflags(write=False)
        rp.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "r_prime", rp)

    def __len__(self) -> int:
        return len(self.r)

    def flipped(self) -> "Alignment":
        return Alignment(self.r_prime, self.r)

    def equals_up_to_flip(self, other: "Alignment", subset=None) -> bool:
        """True if the two alignments agree, possibly after a global flip,
        on the given task subset (all tasks by default)."""
        idx = np.arange(len(self.r)) if subset is None else np.asarray(list(subset), int)
        same = np.array_equal(self.r[idx], other.r[idx])
        flip = np.array_equal(self.r[idx], other.r_prime[idx])
        return same or flip

    @staticmethod
    def identity(n_tasks: int) -> "Alignment":
        return Alignment(np.ones(n_tasks, dtype=int), np.full(n_tasks, 2, dtype=int))


@dataclass(frozen=True, eq=False)
class AlignmentDiagnostics:
    """Ground-truth alignment indices and the correctness proportion p_a."""

    i_k: np.ndarray
    j_k: np.ndarray
    p_a: float


def _stack_pairs(mu_pairs) -> tuple[np.ndarray, np.ndarray]:
    firsts = np.atleast_2d(np.asarray([np.asarray(p[0], float) for p in mu_pairs]))
    seconds = np.atleast_2d(np.asarray([np.asarray(p[1], float) for p in mu_pairs]))
    if firsts.shape != seconds.shape:
        raise ValueError("all mean pairs must share one dimension")
    return firsts, seconds


def _pairwise_norms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


def _cost_matrices(mu_pairs) -> tuple[np.ndarray, np.ndarray]:
    """(same, diff): pair costs when two tasks keep the same or opposite flip.

    same[i, j] = ||m1_i - m1_j|| + ||m2_i - m2_j||;
    diff[i, j] = ||m1_i - m2_j|| + ||m2_i - m1_j||.  Diagonals are zeroed
    because the score only sums over distinct tasks.
    """
    m1, m2 = _stack_pairs(mu_pairs)
    same = _pairwise_norms(m1, m1) + _pairwise_norms(m2, m2)
    diff = _pairwise_norms(m1, m2) + _pairwise_norms(m2, m1)
    np.fill_diagonal(same, 0.0)
    np.fill_diagonal(diff, 0.0)
    return same, diff


def _score_of_flips(same: np.ndarray, diff: np.ndarray, flips: np.ndarray) -> float:
    opposite = flips[:, None] != flips[None, :]
    return float(np.where(opposite, diff, same).sum())


def alignment_score(mu_pairs: Sequence, alignment: Alignment) -> float:
    """Sum over ordered task pairs of same-label mean distances under ``alignment``.

    Each unordered pair is counted twice.  Symmetric under the global flip.
    """
    if len(alignment) != len(mu_pairs):
        raise ValueError("alignment length must match the number of tasks")
    same, diff = _cost_matrices(mu_pairs)
    return _score_of_flips(same, diff, np.asarray(alignment.r) == 2)


def _alignment_from_flips(flips: np.ndarray) -> Alignment:
    r = np.where(flips, 2, 1)
    return Alignment(r, 3 - r)


def align_exhaustive(mu_pairs: Sequence) -> Alignment:
    """Global score minimizer over all label assignments (first task fixed).

    By global-flip symmetry only 2^(K-1) candidates are scored.  Ties break
    toward the lexicographically smallest r with r_1 = 1.  Guarded at K <= 25;
    use the greedy search beyond that.
    """
    K = len(mu_pairs)
    if K == 0:
        raise ValueError("need at least one task")
    if K > EXHAUSTIVE_MAX_TASKS:
        raise ValueError(
            f"exhaustive search is limited to K <= {EXHAUSTIVE_MAX_TASKS} tasks "
            "(2^K candidates); use align_greedy instead"
        )
    same, diff = _cost_matrices(mu_pairs)
    if K == 1:
        return Alignment.identity(1)

    # score(flips) = sum_same + sum over opposite-flip pairs of (diff - same):
    # a quadratic form in the flip indicators, evaluated for all candidates.
    gap = diff - same
    const = float(same.sum())
    row_plus_col = gap.sum(axis=0) + gap.sum(axis=1)

    best_score = np.inf
    best_flips: np.ndarray | None = None
    n_candidates = 1 << (K - 1)
    shifts = np.arange(K - 2, -1, -1)  # task 2 is the most significant bit
    for start in range(0, n_candidates, _ENUM_CHUNK):
        codes = np.arange(start, min(start + _ENUM_CHUNK, n_candidates), dtype=np.int64)
        flips = ((codes[:, None] >> shifts[None, :]) & 1).astype(float)
        flips = np.concatenate([np.zeros((len(codes), 1)), flips], axis=1)
        linear = flips @ row_plus_col
        quad = np.einsum("ci,ij,cj->c", flips, gap, flips)
        scores = const + linear - 2.0 * quad
        idx = int(np.argmin(scores))
        if scores[idx] < best_score:
            best_score = float(scores[idx])
            best_flips = flips[idx].astype(bool)
    assert best_flips is not None
    return _alignment_from_flips(best_flips)


def align_greedy(mu_pairs: Sequence) -> Alignment:
    """One greedy sweep: flip task k iff doing so strictly lowers the score."""
    K = len(mu_pairs)
    if K == 0:
        raise ValueError("need at least one task")
    same, diff = _cost_matrices(mu_pairs)
    flips = np.zeros(K, dtype=bool)
    for k in range(K):
        current = _score_of_flips(same, diff, flips)
        flips[k] = ~flips[k]
        swapped = _score_of_flips(same, diff, flips)
        if not current > swapped:
            flips[k] = ~flips[k]  # keep the alignment before the swap
    return _alignment_from_flips(flips)


def align_transfer(
    target_pair: tuple, source_alignment: Alignment, mu_pairs: Sequence
) -> Alignment:
    """Align a target pair to already-aligned sources (entry 0 of the output).

    Source entries are kept as given; the target starts at (1, 2) and flips
    iff that strictly lowers the score over the target plus all sources.
    """
    if len(source_alignment) != len(mu_pairs):
        raise ValueError("source alignment length must match the source pairs")
    all_pairs = [tuple(target_pair)] + [tuple(p) for p in mu_pairs]
    same, diff = _cost_matrices(all_pairs)
    source_flips = np.asarray(source_alignment.r) == 2
    keep = np.concatenate([[False], source_flips])
    swap = np.concatenate([[True], source_flips])
    if _score_of_flips(same, diff, keep) > _score_of_flips(same, diff, swap):
        return _alignment_from_flips(swap)
    return _alignment_from_flips(keep)


def alignment_diagnostics(
    estimated_pairs: Sequence,
    truth_pairs: Sequence,
    in_set: Sequence[int],
) -> AlignmentDiagnostics:
    """Nearest-truth labels and the correctness proportion over the task set.

    For each task, r_k (r'_k) is the index of the estimated mean closest to
    the true first (second) component mean; exact ties, or both argmins
    selecting the same estimate, are errors.  p_a is the smaller label
    fraction among tasks in ``in_set``, always in [0, 1/2].
    """
    est1, est2 = _stack_pairs(estimated_pairs)
    tru1, tru2 = _stack_pairs(truth_pairs)
    if est1.shape != tru1.shape:
        raise ValueError("estimated and true pairs must share shape")
    K = est1.shape[0]
    i_k = np.zeros(K, dtype=int)
    j_k = np.zeros(K, dtype=int)
    for k in range(K):
        d_to_1 = (np.linalg.norm(est1[k] - tru1[k]), np.linalg.norm(est2[k] - tru1[k]))
        d_to_2 = (np.linalg.norm(est1[k] - tru2[k]), np.linalg.norm(est2[k] - tru2[k]))
        if d_to_1[0] == d_to_1[1] or d_to_2[0] == d_to_2[1]:
            raise ValueError(f"task {k}: nearest-truth assignment is an exact tie")
        r_k = 1 if d_to_1[0] < d_to_1[1] else 2
        rp_k = 1 if d_to_2[0] < d_to_2[1] else 2
        if r_k == rp_k:
            raise ValueError(
                f"task {k}: both true means are closest to the same estimate"
            )
        i_k[k] = r_k
        j_k[k] = rp_k
    idx = np.asarray(list(in_set), dtype=int)
    ones = int(np.sum(i_k[idx] == 1))
    p_a = min(ones, len(idx) - ones) / len(idx)
    return AlignmentDiagnostics(i_k, j_k, p_a)


def apply_alignment(mu_pairs: Sequence, alignment: Alignment) -> list:
    """Reorder each task's mean pair according to the alignment."""
    if len(alignment) != len(mu_pairs):
        raise ValueError("alignment length must match the number of tasks")
    out = []
    for k, pair in enumerate(mu_pairs):
        if alignment.r[k] == 1:
            out.append((pair[0], pair[1]))
        else:
            out.append((pair[1], pair[0]))
    return out


def apply_alignment_theta(
    thetas: Sequence[ThetaEstimate], alignment: Alignment
) -> list[ThetaEstimate]:
    """Relabel full parameter estimates: a flipped task maps
    (w, mu1, mu2, beta) to (1 - w, mu2, mu1, -beta)."""
    if len(alignment) != len(thetas):
        raise ValueError("alignment length must match the number of estimates")
    return [
        theta if alignment.r[k] == 1 else theta.flipped()
        for k, theta in enumerate(thetas)
    ]

"""Core types and math for two-component Gaussian mixtures with shared covariance.

The model: an observation belongs to cluster 1 with probability ``1 - w`` and
to cluster 2 with probability ``w``; conditional on the cluster it is Gaussian
with mean ``mu1`` or ``mu2`` and common covariance ``sigma``.  The linear
discriminant direction ``beta = sigma^{-1} (mu1 - mu2)`` drives both the
posterior and the plug-in classifier.

Everything here is an immutable value object; instances are safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

# exp() overflows just above 709; clamping at 700 keeps posteriors finite
# while leaving them strictly inside (0, 1).
MAX_EXPONENT = 700.0

# Largest float64 interval strictly inside (0, 1): 1/(1 + exp(t)) rounds to
# exactly 1.0 once t < about -36, so the posterior is clipped back in.
_GAMMA_MIN = 1.0 / (1.0 + np.exp(MAX_EXPONENT))
_GAMMA_MAX = np.nextafter(1.0, 0.0)

LOG_2PI = float(np.log(2.0 * np.pi))


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be symmetric positive-definite is not."""


class DegenerateComponentError(ValueError):
    """An E-step put essentially all posterior mass on one component."""

    def __init__(self, component: int, message: str | None = None):
        self.component = component
        super().__init__(
            message or f"mixture component {component} collapsed (no posterior mass)"
        )


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def cholesky_spd(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``sigma``; raises if not positive-definite."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc


def solve_spd(sigma: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``sigma @ x = rhs`` for symmetric positive-definite ``sigma``.

    Uses a Cholesky factorization; the matrix is never inverted explicitly.
    """
    try:
        factor = cho_factor(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    return cho_solve(factor, rhs, check_finite=False)


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Full parameter set of one binary GMM: (w, mu1, mu2, sigma).

    ``beta`` is derived on demand.  Construction validates that ``w`` lies in
    (0, 1), that ``sigma`` is symmetric (to 1e-10) positive-definite, and that
    all dimensions agree.
    """

    w: float
    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        w = float(self.w)
        if not 0.0 < w < 1.0:
            raise ValueError(f"mixture proportion must lie in (0, 1), got {w}")
        mu1 = _freeze(np.atleast_1d(self.mu1))
        mu2 = _freeze(np.atleast_1d(self.mu2))
        sigma = _freeze(np.atleast_2d(self.sigma))
        p = mu1.shape[0]
        if mu1.ndim != 1 or mu2.shape != (p,):
            raise ValueError("mu1 and mu2 must be vectors of the same length")
        if sigma.shape != (p, p):
            raise ValueError(f"sigma must be {p}x{p}, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=1e-10, rtol=0.0):
            raise ValueError("sigma must be symmetric to within 1e-10")
        cholesky_spd(sigma)  # PD check
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "mu2", mu2)
        object.__setattr__(self, "sigma", sigma)

    @property
    def p(self) -> int:
        return self.mu1.shape[0]

    @cached_property
    def beta(self) -> np.ndarray:
        """Discriminant coefficient sigma^{-1} (mu1 - mu2)."""
        return _freeze(solve_spd(self.sigma, self.mu1 - self.mu2))

    def theta(self) -> "ThetaEstimate":
        """The (w, mu1, mu2, beta) view used by the EM iterations."""
        return ThetaEstimate(self.w, self.mu1, self.mu2, self.beta)


@dataclass(frozen=True, eq=False)
class ThetaEstimate:
    """The 4-tuple (w, mu1, mu2, beta) that the EM iterations update."""

    w: float
    mu1: np.ndarray
    mu2: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        w = float(self.w)
        if not 0.0 < w < 1.0:
            raise ValueError(f"mixture proportion must lie in (0, 1), got {w}")
        mu1 = _freeze(np.atleast_1d(self.mu1))
        mu2 = _freeze(np.atleast_1d(self.mu2))
        beta = _freeze(np.atleast_1d(self.beta))
        p = mu1.shape[0]
        if mu2.shape != (p,) or beta.shape != (p,):
            raise ValueError("mu1, mu2 and beta must share one dimension")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "mu2", mu2)
        object.__setattr__(self, "beta", beta)

    @property
    def p(self) -> int:
        return self.mu1.shape[0]

    def flipped(self) -> "ThetaEstimate":
        """Relabel the two clusters: (w, mu1, mu2, beta) -> (1-w, mu2, mu1, -beta)."""
        return ThetaEstimate(1.0 - self.w, self.mu2, self.mu1, -self.beta)


@dataclass(frozen=True, eq=False)
class TaskData:
    """One task's observations (n x p), with optional held-out labels.

    Labels are for evaluation only; no fitting routine reads them.
    """

    z: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        z = _freeze(np.atleast_2d(self.z))
        if z.ndim != 2:
            raise ValueError("z must be a 2-d array")
        n, p = z.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got shape {z.shape}")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (n,):
                raise ValueError("labels must have one entry per observation")
            if not np.all(np.isin(labels, (1, 2))):
                raise ValueError("labels must take values in {1, 2}")
            labels = labels.astype(int)
            labels.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class ParamDistance:
    """Max over the four component distances between two parameter sets."""

    value: float

    def __post_init__(self):
        if self.value < 0.0:
            raise ValueError("distance cannot be negative")

    def __float__(self) -> float:
        return self.value


def _check_same_p(theta: ThetaEstimate, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != theta.p:
        raise ValueError(f"dimension mismatch: theta has p={theta.p}, z has {z.shape[-1]}")
    return z


def posterior_gamma(theta: ThetaEstimate, z: np.ndarray) -> float | np.ndarray:
    """Posterior probability of cluster 2: w / (w + (1-w) exp[beta' (z - (mu1+mu2)/2)]).

    Accepts a single observation (p,) or a batch (n, p); computed in log
    space with the exponent clamped to +-700, so the result is always finite
    and strictly inside (0, 1).
    """
    z = _check_same_p(theta, z)
    mid = 0.5 * (theta.mu1 + theta.mu2)
    expo = (z - mid) @ theta.beta + np.log((1.0 - theta.w) / theta.w)
    expo = np.clip(expo, -MAX_EXPONENT, MAX_EXPONENT)
    gamma = np.clip(1.0 / (1.0 + np.exp(expo)), _GAMMA_MIN, _GAMMA_MAX)
    if np.ndim(gamma) == 0:
        return float(gamma)
    return gamma


def bayes_classify(theta: ThetaEstimate, z: np.ndarray) -> int | np.ndarray:
    """Plug-in LDA rule: label 1 iff (z - (mu1+mu2)/2)' beta >= log(w / (1-w)).

    The boundary tie goes to label 1.  Accepts a single observation or a
    batch; returns an int or an int array of labels in {1, 2}.
    """
    z = _check_same_p(theta, z)
    mid = 0.5 * (theta.mu1 + theta.mu2)
    score = (z - mid) @ theta.beta
    cut = np.log(theta.w / (1.0 - theta.w))
    label = np.where(score >= cut, 1, 2)
    if np.ndim(label) == 0:
        return int(label)
    return label.astype(int)


def log_likelihood(params: GmmParams, data: TaskData) -> float:
    """Observed-data log-likelihood of the mixture, via log-sum-exp.

    sum_i log[(1-w) N(z_i; mu1, sigma) + w N(z_i; mu2, sigma)]
    """
    if data.p != params.p:
        raise ValueError("data dimension does not match parameters")
    chol = cholesky_spd(params.sigma)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    z = data.z

    def comp_logpdf(mu: np.ndarray) -> np.ndarray:
        y = solve_triangular(chol, (z - mu).T, lower=True, check_finite=False)
        maha = np.sum(y * y, axis=0)
        return -0.5 * (params.p * LOG_2PI + log_det + maha)

    log1 = np.log1p(-params.w) + comp_logpdf(params.mu1)
    log2 = np.log(params.w) + comp_logpdf(params.mu2)
    hi = np.maximum(log1, log2)
    return float(np.sum(hi + np.log(np.exp(log1 - hi) + np.exp(log2 - hi))))


def distance_d(a: ThetaEstimate, b: ThetaEstimate) -> ParamDistance:
    """d(theta, theta') = |w-w'| v ||mu1-mu1'|| v ||mu2-mu2'|| v ||beta-beta'||."""
    if a.p != b.p:
        raise ValueError("parameter sets have different dimensions")
    value = max(
        abs(a.w - b.w),
        float(np.linalg.norm(a.mu1 - b.mu1)),
        float(np.linalg.norm(a.mu2 - b.mu2)),
        float(np.linalg.norm(a.beta - b.beta)),
    )
    return ParamDistance(value)


def mahalanobis_delta(params: GmmParams) -> float:
    """Signal-to-noise ratio: sqrt((mu1-mu2)' sigma^{-1} (mu1-mu2))."""
    diff = params.mu1 - params.mu2
    return float(np.sqrt(diff @ solve_spd(params.sigma, diff)))


def misclustering_error(classifier, test: TaskData) -> float:
    """Empirical mis-clustering rate, minimized over the two label permutations.

    ``classifier`` is either a ThetaEstimate (the plug-in rule is applied) or
    a callable mapping an (n, p) array to labels in {1, 2}.  Always <= 0.5.
    """
    if test.labels is None:
        raise ValueError("test data has no labels to score against")
    if isinstance(classifier, ThetaEstimate):
        predicted = bayes_classify(classifier, test.z)
    else:
        predicted = np.asarray(classifier(test.z))
    mismatch = float(np.mean(predicted != test.labels))
    return min(mismatch, 1.0 - mismatch)

"""Proposal fitting from weighted failure samples.

Every fitter weights archived failure points by the standard-normal
density of the point itself (generating proposals are treated as uniform
unless the archive's reweighting flag is set).  The mean, covariance and
scalar-variance fits are the closed-form stationary points of the
weighted log-likelihood sum_i w_i ln q(x_i); the skew shape is fit by
safeguarded gradient ascent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import log_ndtr

from .distributions import (
    LOG_2PI,
    LN_2,
    GaussianProposal,
    MixtureProposal,
    SkewNormalProposal,
    log_density_standard_normal,
    ridge_cholesky,
)
from .errors import ContractError, FitError

# Two archived points closer than this are considered one; repeated draws
# of an archived point would otherwise make fitted covariances singular.
DEDUP_RADIUS = 1e-12

_VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class FailureSample:
    """A failing point with its cached log standard-normal density."""

    point: np.ndarray
    log_weight: float
    log_mixture_density: float = -math.inf


class FailureSet:
    """Deduplicated archive of failure points in one variation space.

    Points carry their log standard-normal density (the fitting weight).
    When ``reweight_by_generator`` is set the archive also tracks, per
    point, the draw-count-weighted mixture of every generator density
    that has been noted; fitting weights then become p(x)/g_mix(x).
    Dividing by the point's own generator instead is unusable: points
    produced by a late narrow proposal would carry a permanent penalty
    of hundreds of log units against early wide-proposal points, pinning
    the effective sample size near 1.
    """

    def __init__(self, dim: int, reweight_by_generator: bool = False):
        if dim < 1:
            raise ContractError("dim must be >= 1")
        self.dim = int(dim)
        self.reweight_by_generator = bool(reweight_by_generator)
        self._points = np.empty((0, self.dim))
        self._log_weights = np.empty(0)
        # per point: logsumexp over generators of log(n_draws_s) + log q_s(x)
        self._log_mix = np.empty(0)
        self.n_generators = 0

    @classmethod
    def from_points(cls, points: np.ndarray, **kwargs) -> "FailureSet":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        fs = cls(points.shape[1], **kwargs)
        fs.extend(points)
        return fs

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def log_weights(self) -> np.ndarray:
        """Cached log standard-normal densities."""
        return self._log_weights

    @property
    def effective_log_weights(self) -> np.ndarray:
        if not self.reweight_by_generator:
            return self._log_weights
        if len(self._points) and not np.all(np.isfinite(self._log_mix)):
            raise ContractError(
                "generator-reweighted archive holds points not covered by "
                "any noted generator"
            )
        return self._log_weights - self._log_mix

    def add_generator(self, log_density: np.ndarray, n_draws: int) -> None:
        """Fold one generator into the per-point mixture densities.

        ``log_density`` must be that generator's log density evaluated at
        every archived point, in archive order; ``n_draws`` is how many
        draws it contributed.  No-op unless reweighting is enabled.
        """
        if not self.reweight_by_generator:
            return
        log_density = np.atleast_1d(np.asarray(log_density, dtype=float))
        if len(log_density) != len(self._points):
            raise ContractError("one generator density per archived point")
        if n_draws < 1:
            raise ContractError("n_draws must be >= 1")
        self._log_mix = np.logaddexp(
            self._log_mix, math.log(n_draws) + log_density
        )
        self.n_generators += 1

    def samples(self) -> list[FailureSample]:
        return [
            FailureSample(p, float(lw), float(lm))
            for p, lw, lm in zip(self._points, self._log_weights, self._log_mix)
        ]

    def extend(
        self,
        points: np.ndarray,
        log_weights: np.ndarray | None = None,
    ) -> int:
        """Add points, dropping anything within DEDUP_RADIUS of the archive
        or of an earlier point in the same batch.  Returns the count added."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ContractError(
                f"points have dimension {points.shape[1]}, archive has {self.dim}"
            )
        n = len(points)
        if n == 0:
            return 0
        if log_weights is None:
            log_weights = log_density_standard_normal(points)
        log_weights = np.atleast_1d(np.asarray(log_weights, dtype=float))
        if len(log_weights) != n:
            raise ContractError("one weight per point required")

        keep = np.ones(n, dtype=bool)
        if len(self._points):
            hits = cKDTree(self._points).query_ball_point(points, r=DEDUP_RADIUS)
            keep &= np.array([len(h) == 0 for h in hits])
        if keep.sum() > 1:
            sub = np.flatnonzero(keep)
            for i, j in cKDTree(points[sub]).query_pairs(DEDUP_RADIUS):
                keep[sub[max(i, j)]] = False

        self._points = np.concatenate([self._points, points[keep]])
        self._log_weights = np.concatenate([self._log_weights, log_weights[keep]])
        self._log_mix = np.concatenate(
            [self._log_mix, np.full(int(keep.sum()), -math.inf)]
        )
        return int(keep.sum())

    def subset(self, mask: np.ndarray) -> "FailureSet":
        """View of the archive restricted to ``mask`` (already deduplicated)."""
        sub = FailureSet(self.dim, self.reweight_by_generator)
        sub._points = self._points[mask]
        sub._log_weights = self._log_weights[mask]
        sub._log_mix = self._log_mix[mask]
        sub.n_generators = self.n_generators
        return sub


class FitTier(Enum):
    """Proposal families in increasing order of fitted structure."""

    MEAN_SHIFT_ONLY = "mean_shift"
    FULL_COVARIANCE = "full_covariance"
    SCALAR_SSS = "scalar_sss"
    SKEW_NORMAL = "skew_normal"
    MIXTURE_SKEW_NORMAL = "mixture_skew_normal"


@dataclass
class FitConfig:
    tier: FitTier = FitTier.MIXTURE_SKEW_NORMAL
    alpha_step: float = 0.05
    alpha_max_iters: int = 500
    alpha_tol: float = 1e-6
    cluster_k_max: int = 8
    cluster_accept_threshold: float = 0.25

    def __post_init__(self):
        if self.alpha_step <= 0:
            raise ContractError("alpha_step must be positive")
        if self.alpha_max_iters < 1:
            raise ContractError("alpha_max_iters must be >= 1")
        if self.alpha_tol <= 0:
            raise ContractError("alpha_tol must be positive")
        if self.cluster_k_max < 1:
            raise ContractError("cluster_k_max must be >= 1")


def _require_nonempty(fs: FailureSet) -> None:
    if len(fs) == 0:
        raise ContractError("failure set is empty")


def _normalized_from_log(log_weights: np.ndarray) -> np.ndarray:
    w = np.exp(log_weights - log_weights.max())
    return w / w.sum()


def normalized_weights(fs: FailureSet) -> np.ndarray:
    """Self-normalized density weights, computed in log space.

    Raw densities underflow around D ~ 100 at radius ~ 10, so the maximum
    log weight is subtracted before exponentiating.
    """
    _require_nonempty(fs)
    return _normalized_from_log(fs.effective_log_weights)


def true_omsv(fs: FailureSet) -> np.ndarray:
    """Density-weighted mean of the failure points.

    Unlike the minimum-norm failure point, this shift lies beyond the
    failure boundary (inside the region's convex hull).
    """
    _require_nonempty(fs)
    return normalized_weights(fs) @ fs.points


def full_sss_covariance(fs: FailureSet, mu: np.ndarray) -> np.ndarray:
    """Density-weighted covariance about ``mu``, ridge-regularized."""
    _require_nonempty(fs)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (fs.dim,):
        raise ContractError("mu must match the archive dimension")
    w = normalized_weights(fs)
    delta = fs.points - mu
    cov = (w[:, None] * delta).T @ delta
    cov = 0.5 * (cov + cov.T)
    ridged, _ = ridge_cholesky(cov)
    return ridged


def scalar_sss_variance(fs: FailureSet, mu: np.ndarray) -> float:
    """Isotropic variance fit: weighted mean squared distance over D.

    The per-dimension division makes the D=1 case agree with the full
    covariance fit; without it the proposal over-disperses in high D.
    """
    _require_nonempty(fs)
    mu = np.asarray(mu, dtype=float)
    w = normalized_weights(fs)
    sq = np.einsum("ij,ij->i", fs.points - mu, fs.points - mu)
    return max(float(w @ sq) / fs.dim, _VARIANCE_FLOOR)


def fit_alpha(
    fs: FailureSet,
    mu: np.ndarray,
    sigma: np.ndarray,
    *,
    step: float = 0.05,
    max_iters: int = 500,
    tol: float = 1e-6,
) -> np.ndarray:
    """Skew-shape vector maximizing the weighted skew-normal log-likelihood.

    Only the ln Phi(alpha.(x - mu)) term depends on alpha; gradient ascent
    starts at alpha = 0 with step halving whenever a step would decrease
    the objective, so the returned iterate never scores below alpha = 0.
    """
    _require_nonempty(fs)
    mu = np.asarray(mu, dtype=float)
    w = normalized_weights(fs)
    centered = fs.points - mu

    # the alpha-independent part must be finite or the fit is meaningless
    base_proposal = GaussianProposal(mu, sigma)
    base = float(w @ (LN_2 + np.atleast_1d(base_proposal.log_density(fs.points))))
    if not np.isfinite(base):
        raise FitError("non-finite skew-normal objective at alpha = 0")

    def skew_term(alpha: np.ndarray) -> float:
        return float(w @ log_ndtr(centered @ alpha))

    alpha = np.zeros(fs.dim)
    f_cur = skew_term(alpha)
    best_alpha, best_f = alpha, f_cur
    for _ in range(max_iters):
        s = centered @ alpha
        # inverse Mills ratio phi(s)/Phi(s), stable in both tails
        ratio = np.exp(-0.5 * (LOG_2PI + s * s) - log_ndtr(s))
        grad = (w * ratio) @ centered
        if np.max(np.abs(grad)) < tol:
            break
        moved = False
        while step > 1e-12:
            candidate = alpha + step * grad
            f_new = skew_term(candidate)
            if f_new >= f_cur:
                alpha, f_cur = candidate, f_new
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        if f_cur > best_f:
            best_alpha, best_f = alpha, f_cur
    return best_alpha


# A weighted covariance fit has ~ESS degrees of freedom, not N, and its
# spectrum carries relative noise ~sqrt(D/ESS): below these floors the
# smallest eigenvalues undershoot badly and the proposal pinches onto the
# sampled slab.  Between the floors, per-axis variances stay well
# conditioned because every axis pools the entire weighted sample.  Below
# the identity floor even a scalar dispersion is noise (one point can
# hold nearly all the weight, reading as a near-delta at its location),
# so the fit keeps the nominal unit scale and only shifts the mean.
_IDENTITY_ESS_FLOOR = 6.0
_DIAG_ESS_FLOOR = lambda d: d + 2  # noqa: E731
_FULL_ESS_FLOOR = lambda d: 25.0 * d  # noqa: E731


def _diagonal_sss_variances(fs: FailureSet, mu: np.ndarray) -> np.ndarray:
    w = normalized_weights(fs)
    delta = fs.points - mu
    return np.maximum(w @ (delta * delta), _VARIANCE_FLOOR)


def _fit_component(fs: FailureSet, cfg: FitConfig) -> SkewNormalProposal:
    mu = true_omsv(fs)
    n, d = len(fs), fs.dim
    # ESS <= N, so these gates subsume raw-count checks
    w = normalized_weights(fs)
    ess = 1.0 / float(w @ w)
    if cfg.tier is FitTier.MEAN_SHIFT_ONLY or n < 2 or ess < _IDENTITY_ESS_FLOOR:
        scale = np.eye(d)
    elif cfg.tier is FitTier.SCALAR_SSS or ess < _DIAG_ESS_FLOOR(d):
        scale = scalar_sss_variance(fs, mu) * np.eye(d)
    elif d > 1 and ess < _FULL_ESS_FLOOR(d):
        scale = np.diag(_diagonal_sss_variances(fs, mu))
    else:
        scale = full_sss_covariance(fs, mu)
    if cfg.tier in (FitTier.SKEW_NORMAL, FitTier.MIXTURE_SKEW_NORMAL):
        alpha = fit_alpha(
            fs,
            mu,
            scale,
            step=cfg.alpha_step,
            max_iters=cfg.alpha_max_iters,
            tol=cfg.alpha_tol,
        )
    else:
        alpha = np.zeros(d)
    return SkewNormalProposal(mu, scale, alpha)


def fit_mixture(fs: FailureSet, cfg: FitConfig, clusterer=None) -> MixtureProposal:
    """Fit the tier's proposal from the archive.

    Every tier returns a mixture (of one component below the mixture
    tier).  ``clusterer`` maps an (N, D) array to a ClusteringResult and
    is consulted only for the mixture tier; component weights are cluster
    occupancy fractions.
    """
    _require_nonempty(fs)
    n = len(fs)
    labels = np.zeros(n, dtype=int)
    n_clusters = 1
    if cfg.tier is FitTier.MIXTURE_SKEW_NORMAL and clusterer is not None and n >= 2:
        result = clusterer(fs.points)
        labels = result.labels
        n_clusters = result.n_clusters
    components = []
    weights = np.empty(n_clusters)
    for m in range(n_clusters):
        mask = labels == m
        components.append(_fit_component(fs.subset(mask), cfg))
        weights[m] = mask.sum() / n
    return MixtureProposal(components, weights)

"""Proposal densities and samplers over the standard-normal variation space.

All densities are evaluated in log space.  Each sampler consumes a fixed
number of variates per output point, in row order, so drawing n points in
one call is bit-identical to drawing the same n points over several calls
on the same generator.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, logsumexp, ndtr

from .errors import ContractError, FitError

LOG_2PI = float(np.log(2.0 * np.pi))
LN_2 = float(np.log(2.0))

# Ridge ladder for near-singular covariances: add eps*(tr(S)/D)*I before
# factorization, escalating tenfold until Cholesky succeeds.
_RIDGE_EPS_FIRST = 1e-6
_RIDGE_EPS_LAST = 1e-2

_SYMMETRY_TOL = 1e-10


def log_density_standard_normal(x: np.ndarray) -> np.ndarray | float:
    """Log density of N(0, I) at ``x``.

    Parameters
    ----------
    x : array, shape (..., D)
        Points in variation space; the last axis indexes coordinates.

    Returns
    -------
    Log densities, shape ``x.shape[:-1]``; a bare float for a single vector.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ContractError("x must carry at least one coordinate axis")
    d = x.shape[-1]
    out = -0.5 * (d * LOG_2PI + np.einsum("...i,...i->...", x, x))
    return float(out) if np.ndim(out) == 0 else out


def ridge_cholesky(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inflate ``cov`` just enough to factor it; return (matrix, lower factor).

    Degenerate fits (single point, duplicated samples) produce singular
    matrices.  A scaled identity ridge is added, escalating until the
    factorization succeeds; a zero-trace matrix falls back to unit scale so
    the all-degenerate case yields eps*I rather than the zero matrix.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    scale = float(np.trace(cov)) / d
    if scale <= 0.0:
        scale = 1.0
    eye = np.eye(d)
    eps = _RIDGE_EPS_FIRST
    while True:
        ridged = cov + (eps * scale) * eye
        try:
            return ridged, np.linalg.cholesky(ridged)
        except np.linalg.LinAlgError:
            if eps >= _RIDGE_EPS_LAST:
                raise FitError(
                    f"covariance not positive definite after ridge {eps:g}"
                ) from None
            eps *= 10.0


class GaussianProposal:
    """Multivariate normal N(mean, cov) with a cached Cholesky factor.

    The covariance must be symmetric to 1e-10 absolute.  Exactly
    positive-definite inputs are used untouched; anything Cholesky rejects
    goes through the ridge ladder (see ``ridge_cholesky``).
    """

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if mean.ndim != 1 or mean.size < 1:
            raise ContractError("mean must be a nonempty vector")
        d = mean.size
        if cov.shape != (d, d):
            raise ContractError(f"covariance shape {cov.shape} != ({d}, {d})")
        if np.max(np.abs(cov - cov.T)) > _SYMMETRY_TOL:
            raise ContractError("covariance is not symmetric within 1e-10")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            cov, chol = ridge_cholesky(cov)
        self.mean = mean
        self.cov = cov
        self.cholesky_factor = chol
        self._log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))

    @property
    def dim(self) -> int:
        return self.mean.size

    def _check_points(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise ContractError(
                f"points have dimension {x.shape[-1] if x.ndim else 0}, "
                f"proposal has {self.dim}"
            )
        return x

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        x = self._check_points(x)
        scalar = x.ndim == 1
        delta = np.atleast_2d(x) - self.mean
        y = solve_triangular(self.cholesky_factor, delta.T, lower=True)
        quad = np.einsum("ij,ij->j", y, y)
        out = -0.5 * (self.dim * LOG_2PI + self._log_det + quad)
        return float(out[0]) if scalar else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ContractError("n must be >= 1")
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.cholesky_factor.T


class SkewNormalProposal:
    """Multivariate skew normal 2*phi(x; location, scale)*Phi(shape.(x-location)).

    The skewing argument is centered but not standardized: the shape vector
    multiplies (x - location) directly, which keeps the conditioning sampler
    exact and reduces bitwise to the Gaussian at shape = 0.
    """

    def __init__(self, location: np.ndarray, scale: np.ndarray, shape: np.ndarray):
        self._gaussian = GaussianProposal(location, scale)
        shape = np.asarray(shape, dtype=float)
        if shape.shape != (self._gaussian.dim,):
            raise ContractError("shape vector must match location dimension")
        self.shape = shape

    @property
    def dim(self) -> int:
        return self._gaussian.dim

    @property
    def location(self) -> np.ndarray:
        return self._gaussian.mean

    @property
    def scale(self) -> np.ndarray:
        return self._gaussian.cov

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        base = self._gaussian.log_density(x)
        x = np.asarray(x, dtype=float)
        s = (x - self.location) @ self.shape
        # log_ndtr stays finite far into the left tail where Phi underflows
        return base + LN_2 + log_ndtr(s)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ContractError("n must be >= 1")
        block = rng.standard_normal((n, self.dim + 1))
        z = block[:, : self.dim] @ self._gaussian.cholesky_factor.T
        u = block[:, self.dim]
        # conditioning construction: keep z where u < shape.z, else reflect
        sign = np.where(u < z @ self.shape, 1.0, -1.0)
        return self.location + sign[:, None] * z


class MixtureProposal:
    """Finite mixture of skew-normal components with fixed weights."""

    def __init__(self, components: list[SkewNormalProposal], weights: np.ndarray):
        if len(components) < 1:
            raise ContractError("mixture needs at least one component")
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(components),):
            raise ContractError("one weight per component required")
        if np.any(weights < 0.0):
            raise ContractError("weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ContractError("weights must sum to 1 within 1e-12")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ContractError("components must share one dimension")
        self.components = list(components)
        self.weights = weights
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(weights)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        if len(self.components) == 1:
            return self.components[0].log_density(x)
        per_comp = np.stack(
            [np.atleast_1d(c.log_density(x)) for c in self.components]
        )
        out = logsumexp(per_comp + self._log_weights[:, None], axis=0)
        return float(out[0]) if np.ndim(x) == 1 else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ContractError("n must be >= 1")
        if len(self.components) == 1:
            # consume exactly the component's stream so a one-component
            # mixture reproduces the component's draws bit for bit
            return self.components[0].sample(n, rng)
        d = self.dim
        block = rng.standard_normal((n, d + 2))
        # first column selects the component (Phi of a standard normal is
        # uniform), so each output row consumes a fixed slice of the stream
        # and batch partitioning cannot change the draws
        u_cat = ndtr(block[:, 0])
        edges = np.cumsum(self.weights)
        idx = np.searchsorted(edges, u_cat, side="right")
        idx = np.minimum(idx, len(self.components) - 1)
        out = np.empty((n, d))
        for m, comp in enumerate(self.components):
            rows = np.flatnonzero(idx == m)
            if rows.size == 0:
                continue
            z = block[rows, 1 : d + 1] @ comp._gaussian.cholesky_factor.T
            u = block[rows, d + 1]
            sign = np.where(u < z @ comp.shape, 1.0, -1.0)
            out[rows] = comp.location + sign[:, None] * z
        return out


Proposal = GaussianProposal | SkewNormalProposal | MixtureProposal

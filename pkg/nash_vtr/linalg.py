""" Weighted ridge regression primitives.

This module provides the covariance/correlation accumulators behind value-targeted regression:
rank-one covariance recursions with a maintained inverse (Sherman-Morrison), closed-form ridge
solves and Mahalanobis bonus norms. Solves and bonus norms always refactorize the covariance
with a fresh Cholesky decomposition; the maintained inverse is only a fast path.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import scipy.linalg

from nash_vtr.data_structures import FloatArray

REFACTOR_EVERY: int = 512


class NumericError(Exception):
    pass


def _check_finite(name: str, values: FloatArray) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"`{name}` contains non-finite entries")


@dataclass
class WeightedCovariance:
    """A regularized weighted Gram matrix with a maintained inverse.

    Args:
        matrix: Symmetric positive-definite matrix, initially `lam * I`.
        inverse: Maintained inverse of `matrix`.
        lam: Ridge regularizer.
        count: Number of rank-one updates applied.
    """

    matrix: FloatArray
    inverse: FloatArray
    lam: float
    count: int = 0

    @classmethod
    def identity(cls, dim: int, lam: float) -> "WeightedCovariance":
        """Create the initial covariance `lam * I`.

        Raises:
            ValueError: If `lam` is not positive or `dim` is not positive.
        """
        if lam <= 0:
            raise ValueError(f"`lam` must be positive, got {lam}")
        if dim < 1:
            raise ValueError(f"`dim` must be positive, got {dim}")
        return cls(matrix=lam * np.eye(dim), inverse=np.eye(dim) / lam, lam=float(lam))

    @property
    def dim(self) -> int:
        """`int`: Dimension of the covariance."""
        return int(self.matrix.shape[0])

    def copy(self) -> "WeightedCovariance":
        """Return an independent copy."""
        return WeightedCovariance(
            matrix=self.matrix.copy(), inverse=self.inverse.copy(), lam=self.lam, count=self.count
        )


@dataclass
class CorrelationVector:
    """Weighted sum of feature-target products paired with a :obj:`WeightedCovariance`.

    Args:
        vector: Accumulated vector, initially zero.
        count: Number of accumulated samples.
    """

    vector: FloatArray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "CorrelationVector":
        """Create the initial zero vector."""
        return cls(vector=np.zeros(dim))

    def accumulate(self, x: FloatArray, target: float, weight: float) -> "CorrelationVector":
        """Add `weight * target * x` in place.

        Returns:
            The updated vector (self).
        """
        _check_finite("x", x)
        if not np.isfinite(target) or not np.isfinite(weight):
            raise NumericError("`target` and `weight` must be finite")
        self.vector = self.vector + weight * target * x
        self.count += 1
        return self


def cholesky(cov: WeightedCovariance) -> FloatArray:
    """Fresh lower Cholesky factor of the covariance.

    Raises:
        NumericError: If the matrix is not positive definite.
    """
    try:
        return scipy.linalg.cholesky(cov.matrix, lower=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericError("Covariance is not positive definite; factorization failed") from e


def refactorize(cov: WeightedCovariance) -> WeightedCovariance:
    """Recompute the maintained inverse from a fresh factorization, in place.

    Returns:
        The refreshed covariance (same object).
    """
    factor = cholesky(cov)
    inverse = scipy.linalg.cho_solve((factor, True), np.eye(cov.dim))
    cov.inverse = 0.5 * (inverse + inverse.T)
    return cov


def rank_one_update(cov: WeightedCovariance, x: FloatArray, weight: float) -> WeightedCovariance:
    """Apply `matrix += weight * x x^T` and update the maintained inverse in place.

    A zero feature vector leaves the covariance untouched.

    Args:
        cov: Covariance to update.
        x: Feature vector of length d.
        weight: Positive sample weight.

    Returns:
        The updated covariance (same object).

    Raises:
        ValueError: If `x` has the wrong length or `weight` is not positive.
        NumericError: If `x` or `weight` is non-finite.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (cov.dim,):
        raise ValueError(f"`x` must have shape ({cov.dim},), got {x.shape}")
    _check_finite("x", x)
    if not np.isfinite(weight):
        raise NumericError("`weight` must be finite")
    if weight <= 0:
        raise ValueError(f"`weight` must be positive, got {weight}")
    if not np.any(x):
        return cov

    matrix = cov.matrix + weight * np.outer(x, x)
    cov.matrix = 0.5 * (matrix + matrix.T)
    u = cov.inverse @ x
    inverse = cov.inverse - (weight / (1.0 + weight * float(x @ u))) * np.outer(u, u)
    cov.inverse = 0.5 * (inverse + inverse.T)
    cov.count += 1
    if cov.count % REFACTOR_EVERY == 0:
        refactorize(cov)
    return cov


def ridge_solve(cov: WeightedCovariance, b: CorrelationVector) -> FloatArray:
    """Closed-form ridge estimate `matrix^{-1} b` via a fresh Cholesky factorization.

    Raises:
        NumericError: If the covariance cannot be factorized.
    """
    factor = cholesky(cov)
    return scipy.linalg.cho_solve((factor, True), b.vector)


def bonus_norms(cov: WeightedCovariance, xs: FloatArray) -> FloatArray:
    """Mahalanobis norms `sqrt(x^T matrix^{-1} x)` for a stack of vectors.

    Args:
        cov: Covariance.
        xs: Array of shape (..., d).

    Returns:
        Array of shape (...) of nonnegative norms.
    """
    xs = np.asarray(xs, dtype=float)
    _check_finite("xs", xs)
    factor = cholesky(cov)
    flat = xs.reshape(-1, cov.dim)
    whitened = scipy.linalg.solve_triangular(factor, flat.T, lower=True)
    return np.sqrt((whitened**2).sum(axis=0)).reshape(xs.shape[:-1])


def bonus_norm(cov: WeightedCovariance, x: FloatArray) -> float:
    """Mahalanobis norm `sqrt(x^T matrix^{-1} x)` of a single vector."""
    return float(bonus_norms(cov, np.asarray(x, dtype=float)[None, :])[0])


def ellipsoid_distance(cov: WeightedCovariance, center: FloatArray, point: FloatArray) -> float:
    """Distance `||matrix^{1/2} (point - center)||_2` used by confidence-set membership checks."""
    diff = np.asarray(point, dtype=float) - np.asarray(center, dtype=float)
    return float(np.sqrt(max(float(diff @ cov.matrix @ diff), 0.0)))


def inverse_drift(cov: WeightedCovariance) -> float:
    """Max-norm distance between `matrix @ inverse` and the identity."""
    return float(np.abs(cov.matrix @ cov.inverse - np.eye(cov.dim)).max())


@dataclass
class RegressionHistory:
    """Stored (feature, target, weight) samples of one regression system."""

    samples: List[Tuple[FloatArray, float, float]] = field(default_factory=list)

    def append(self, x: FloatArray, target: float, weight: float) -> None:
        """Record one weighted sample `(x, target, weight)`."""
        self.samples.append((np.array(x, dtype=float), float(target), float(weight)))


def batch_ridge_solution(history: RegressionHistory, dim: int, lam: float) -> FloatArray:
    """Direct minimizer of `lam ||theta||^2 + sum_j w_j (<x_j, theta> - y_j)^2`.

    Assembles the full normal equations from the stored samples; used to audit the recursions.
    """
    gram = lam * np.eye(dim)
    rhs = np.zeros(dim)
    for x, y, w in history.samples:
        gram += w * np.outer(x, x)
        rhs += w * y * x
    return np.linalg.solve(gram, rhs)

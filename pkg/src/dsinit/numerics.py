"""Dense statistics and linear algebra on float64 arrays.

A sample matrix is a plain 2-d float64 ndarray, one row per vectorized
block, crop or activation. Everything here is a pure function of its
inputs; randomness only enters through an explicitly passed
numpy.random.Generator, so results are reproducible bit for bit.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import (
    DegenerateDataError,
    InvalidArgumentError,
    NumericalFailureError,
)


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise InvalidArgumentError(
            f"expected a 2-d sample matrix with at least one row and column, got shape {x.shape}"
        )
    return x


def _as_square(matrix) -> np.ndarray:
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidArgumentError(f"expected a square matrix, got shape {a.shape}")
    return a


def _check_symmetric(a: np.ndarray, what: str) -> None:
    # Tolerance is relative to the largest entry: products like U^T U reach
    # magnitudes where BLAS rounding alone leaves ~1e-13 * scale asymmetry.
    atol = 1e-10 * max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if float(np.max(np.abs(a - a.T), initial=0.0)) > atol:
        raise InvalidArgumentError(f"{what} must be symmetric")


@dataclasses.dataclass(frozen=True)
class GaussianModel:
    """Mean vector and covariance fitted to a set of samples."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or mean.size < 1:
            raise InvalidArgumentError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgumentError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        if float(np.max(np.abs(cov - cov.T), initial=0.0)) > 1e-12:
            raise InvalidArgumentError("covariance must be symmetric within 1e-12")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def mean_vector(samples) -> np.ndarray:
    """Column means of a sample matrix."""
    return _as_samples(samples).mean(axis=0)


def covariance_matrix(samples, mean) -> np.ndarray:
    """Population covariance (divisor N) of the rows around ``mean``.

    The N divisor, rather than N-1, is what lets whitening drive the very
    same sample set to exactly identity covariance. The result is
    symmetrized to kill BLAS rounding asymmetry.
    """
    x = _as_samples(samples)
    mu = np.asarray(mean, dtype=np.float64)
    if mu.shape != (x.shape[1],):
        raise InvalidArgumentError(
            f"mean length {mu.shape} does not match sample dimension {x.shape[1]}"
        )
    centered = x - mu
    cov = centered.T @ centered / x.shape[0]
    return 0.5 * (cov + cov.T)


def gaussian_fit(samples) -> GaussianModel:
    """Fit mean and population covariance to the rows of a sample matrix."""
    mu = mean_vector(samples)
    return GaussianModel(mu, covariance_matrix(samples, mu))


def sym_eigendecomposition(matrix):
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors in columns.
    Ordering ties keep the lower original index. Every eigenvector is
    sign-normalized so its largest-magnitude component is positive (earliest
    index on a magnitude tie); without a fixed sign, averaging eigenvectors
    across related matrices would be meaningless.
    """
    s = _as_square(matrix)
    _check_symmetric(s, "matrix")
    try:
        evals, evecs = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigendecomposition failed to converge: {exc}") from exc
    # eigh returns ascending order; stable argsort of the negated values
    # gives descending order with ties kept at the lower original index.
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]
    pivots = np.argmax(np.abs(evecs), axis=0)
    signs = np.where(evecs[pivots, np.arange(evecs.shape[1])] < 0.0, -1.0, 1.0)
    return evals, evecs * signs


def cholesky(matrix, epsilon: float = 0.0) -> np.ndarray:
    """Lower-triangular L with L L^T = matrix + epsilon*I.

    Accepts positive semi-definite input: a pivot that vanishes within a
    scale-relative tolerance yields a zero column, provided the remaining
    column entries vanish too. A genuinely negative pivot raises
    NumericalFailureError naming the pivot index.
    """
    a = _as_square(matrix)
    _check_symmetric(a, "matrix")
    if epsilon < 0.0:
        raise InvalidArgumentError(f"epsilon must be >= 0, got {epsilon}")
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)) + epsilon)
    tol = 1e-12 * scale
    resid_tol = np.sqrt(tol * scale)
    lower = np.zeros((n, n), dtype=np.float64)
    for j in range(n):
        row = lower[j, :j]
        pivot = a[j, j] + epsilon - row @ row
        below = a[j + 1 :, j] - lower[j + 1 :, :j] @ row
        if pivot > tol:
            lower[j, j] = np.sqrt(pivot)
            lower[j + 1 :, j] = below / lower[j, j]
        elif pivot >= -tol:
            # Semi-definite: the whole column must vanish with the pivot.
            if below.size and float(np.max(np.abs(below))) > resid_tol:
                raise NumericalFailureError(
                    f"matrix is not positive semi-definite: zero pivot at index {j} "
                    f"with nonzero column below it"
                )
            lower[j, j] = 0.0
        else:
            raise NumericalFailureError(
                f"matrix is not positive semi-definite: negative pivot at index {j} "
                f"({pivot:.3e} after epsilon={epsilon:g})"
            )
    return lower


def _standard_normals(shape, rng) -> np.ndarray:
    """Box-Muller standard normals, filled in a fixed documented order.

    One block of ceil(total/2) uniform pairs is drawn up front with a single
    rng.random((pairs, 2)) call; pair t becomes (r cos a, r sin a) at flat
    positions 2t and 2t+1, and the flat buffer reshapes row-major. Using
    1-u1 in (0,1] keeps the log finite.
    """
    total = int(np.prod(shape))
    pairs = (total + 1) // 2
    u = rng.random((pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:total].reshape(shape)


def sample_multivariate_gaussian(model: GaussianModel, count: int, epsilon: float, rng) -> np.ndarray:
    """Draw ``count`` rows from N(mean, covariance + epsilon*I).

    Rows are mean + z L^T with L the (epsilon-regularized) Cholesky factor
    and z Box-Muller standard normals from the supplied generator, so a
    fixed seed reproduces the sample matrix bit for bit.
    """
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    lower = cholesky(model.covariance, epsilon)
    z = _standard_normals((count, model.dim), rng)
    return model.mean + z @ lower.T


def zca_whiten(samples, epsilon: float = 0.0) -> np.ndarray:
    """Center the rows and map them to (near) identity covariance.

    Uses the symmetric transform V diag((l+eps)^-1/2) V^T built from the
    eigendecomposition of the population covariance; of all whitening
    transforms it keeps the output closest to the input. Directions whose
    regularized eigenvalue is zero are projected out rather than amplified.
    """
    x = _as_samples(samples)
    if x.shape[0] < 2:
        raise InvalidArgumentError(f"whitening needs at least 2 samples, got {x.shape[0]}")
    if epsilon < 0.0:
        raise InvalidArgumentError(f"epsilon must be >= 0, got {epsilon}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    cov = 0.5 * (cov + cov.T)
    evals, evecs = sym_eigendecomposition(cov)
    lam = np.maximum(evals, 0.0) + epsilon
    inv_root = np.where(lam > 0.0, 1.0 / np.sqrt(np.where(lam > 0.0, lam, 1.0)), 0.0)
    transform = (evecs * inv_root) @ evecs.T
    return centered @ transform


def scale_to_variance(samples, target_variance: float) -> np.ndarray:
    """Rescale all elements so the pooled elementwise variance hits the target.

    The pooled variance is the population variance of the flattened matrix.
    Inputs whose variance is zero at working precision (all elements equal)
    raise DegenerateDataError; a scale-relative threshold separates genuine
    constants from rounding residue.
    """
    x = _as_samples(samples)
    if target_variance <= 0.0:
        raise InvalidArgumentError(f"target variance must be > 0, got {target_variance}")
    v = float(x.var())
    floor = (4.0 * np.finfo(np.float64).eps * max(1.0, float(np.max(np.abs(x))))) ** 2
    if not np.isfinite(v) or v <= floor:
        raise DegenerateDataError(
            "cannot rescale a matrix with zero elementwise variance (all elements equal)"
        )
    return x * np.sqrt(target_variance / v)

"""Small dense symmetric-matrix helpers.

Every stiffness, damping and kernel-sharpness parameter of the policy is an
SPD matrix (scalars are 1x1 matrices), so the checks here are the single place
where the stability constraints are enforced numerically.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack
from scipy.special import digamma, gammaln

SYMMETRY_ATOL = 1e-9


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix fails the strict SPD check.

    ``minor`` is the 1-based order of the first leading minor that is not
    positive, when known.
    """

    def __init__(self, message, minor=None):
        super().__init__(message)
        self.minor = minor


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def as_spd(a, name="matrix"):
    """Validate ``a`` as strictly SPD and return its symmetrized copy.

    Accepts scalars (treated as 1x1). Raises :class:`NotPositiveDefiniteError`
    for asymmetric, non-finite or non-positive-definite input.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NotPositiveDefiniteError(f"{name}: non-finite entries")
    if np.abs(a - a.T).max() > SYMMETRY_ATOL:
        raise NotPositiveDefiniteError(f"{name}: not symmetric")
    a = symmetrize(a)
    _, info = lapack.dpotrf(a, lower=1)
    if info != 0:
        raise NotPositiveDefiniteError(
            f"{name}: leading minor of order {info} is not positive", minor=int(info)
        )
    return a


def is_spd(a):
    try:
        as_spd(a)
    except (NotPositiveDefiniteError, ValueError):
        return False
    return True


def cholesky(m):
    """Lower-triangular Cholesky factor of an SPD matrix.

    Parameters
    ----------
    m : array_like, shape (D, D)

    Returns
    -------
    L : ndarray, shape (D, D)
        Lower triangular with ``L @ L.T == m``.

    Raises
    ------
    NotPositiveDefiniteError
        With ``minor`` set to the offending leading minor.
    """
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky: expected a square matrix, got shape {a.shape}")
    if np.abs(a - a.T).max() > SYMMETRY_ATOL:
        raise NotPositiveDefiniteError("cholesky: input is not symmetric")
    c, info = lapack.dpotrf(symmetrize(a), lower=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"cholesky: leading minor of order {info} is not positive", minor=int(info)
        )
    if info < 0:
        raise ValueError(f"cholesky: invalid argument {-info} to dpotrf")
    return np.tril(c)


def eigvalsh(m):
    """Ascending eigenvalues of a symmetric matrix."""
    return np.linalg.eigvalsh(symmetrize(np.atleast_2d(m)))


def spd_sqrt(m):
    """Principal (SPD) square root via the symmetric eigendecomposition."""
    a = as_spd(m, "spd_sqrt")
    vals, vecs = np.linalg.eigh(a)
    return symmetrize((vecs * np.sqrt(vals)) @ vecs.T)


def random_spd(dim, rng, scale=1.0):
    """A well conditioned random SPD matrix, used for test and scan means."""
    a = rng.standard_normal((dim, dim))
    return symmetrize(scale * (a @ a.T / dim + np.eye(dim)))


def _check_multivariate_domain(a, dim):
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if not a > 0.5 * (dim - 1):
        raise ValueError(f"multivariate gamma needs a > (D-1)/2, got a={a}, D={dim}")


def multivariate_gamma_ln(a, dim):
    """ln Gamma_D(a) = D(D-1)/4 ln(pi) + sum_j ln Gamma(a + (1-j)/2)."""
    _check_multivariate_domain(a, dim)
    j = np.arange(1, dim + 1)
    return 0.25 * dim * (dim - 1) * np.log(np.pi) + float(np.sum(gammaln(a + 0.5 * (1 - j))))


def multivariate_digamma(a, dim):
    """Log-derivative of Gamma_D, i.e. the sum of scalar digammas."""
    _check_multivariate_domain(a, dim)
    j = np.arange(1, dim + 1)
    return float(np.sum(digamma(a + 0.5 * (1 - j))))

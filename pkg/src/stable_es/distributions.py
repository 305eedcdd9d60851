"""Sampling distributions over policy parameters.

Wishart distributions cover every SPD parameter (stiffness, damping and the
scalar kernel sharpness as the 1x1 case); a multivariate Gaussian covers the
stacked attractor points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    as_spd,
    cholesky,
    multivariate_digamma,
    multivariate_gamma_ln,
    symmetrize,
)

NU_CAP = 1e6
REWARD_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class Wishart:
    """Wishart distribution W_D(S | W, nu) with mean ``nu * W``."""

    W: np.ndarray
    nu: float

    def __post_init__(self):
        W = as_spd(self.W, "Wishart scale W")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "nu", float(self.nu))
        if not self.nu > self.dim - 1:
            raise ValueError(f"Wishart needs nu > D - 1, got nu={self.nu}, D={self.dim}")
        object.__setattr__(self, "_chol", cholesky(W))
        object.__setattr__(self, "_lower", np.tril_indices(self.dim, -1))

    @property
    def dim(self):
        return self.W.shape[0]

    @property
    def mean(self):
        return self.nu * self.W

    def sample(self, rng, size=None):
        """Draw SPD matrices by the Bartlett decomposition.

        Returns an array of shape ``(D, D)`` when ``size`` is None, otherwise
        ``(size, D, D)``.
        """
        n = 1 if size is None else int(size)
        D = self.dim
        A = np.zeros((n, D, D))
        # chi^2 with nu - i dof on the diagonal (i = 0..D-1), N(0,1) below it
        diag = np.arange(D)
        A[:, diag, diag] = np.sqrt(rng.chisquare(self.nu - diag, size=(n, D)))
        rows, cols = self._lower
        if rows.size:
            A[:, rows, cols] = rng.standard_normal((n, rows.size))
        LA = self._chol @ A
        S = LA @ LA.transpose(0, 2, 1)
        S = 0.5 * (S + S.transpose(0, 2, 1))
        return S[0] if size is None else S

    def entropy(self):
        D = self.dim
        half_nu = 0.5 * self.nu
        _, logdet = np.linalg.slogdet(self.W)
        return (
            0.5 * (D + 1) * logdet
            + 0.5 * D * (D + 1) * np.log(2.0)
            + multivariate_gamma_ln(half_nu, D)
            - 0.5 * (self.nu - D - 1) * multivariate_digamma(half_nu, D)
            + 0.5 * self.nu * D
        )

    def to_dict(self):
        return {"W": self.W.tolist(), "nu": self.nu}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["W"], dtype=float), float(d["nu"]))


def relative_gain(R_b, R_e, denominator="abs", eps=REWARD_EPS):
    """(R_e - R_b) / R_b with the chosen denominator convention.

    ``"abs"`` divides by ``max(|R_b|, eps)`` so that cost-style (negative)
    returns still yield a nonnegative gain; ``"literal"`` divides by ``R_b``.
    """
    diff = R_e - R_b
    if denominator == "abs":
        return diff / max(abs(R_b), eps)
    if denominator == "literal":
        if R_b == 0:
            raise ZeroDivisionError("literal relative gain is undefined for R_b = 0")
        return diff / R_b
    raise ValueError(f"unknown denominator convention {denominator!r}")


def wishart_update(
    d,
    elites,
    R_b,
    R_e,
    gamma,
    beta,
    denominator="abs",
    eps=REWARD_EPS,
    nu_cap=NU_CAP,
    scaling="pre",
):
    """Refit a Wishart distribution to elite samples.

    The new scale is the average of the elites scaled by ``1 / nu``. With
    ``scaling="pre"`` that is the nu the elites were drawn under, so the new
    mean is ``(nu' / nu)`` times the elite average; ``scaling="post"`` uses
    the updated nu so that the new mean equals the elite average. The degrees of freedom grow as
    ``nu' = nu * exp(gamma * beta * gain)`` where ``gain`` is the relative
    improvement of the elite returns over the population, capped at
    ``nu_cap``.
    """
    if len(elites) == 0:
        raise ValueError("wishart_update needs at least one elite")
    if gamma <= 0 or beta <= 0:
        raise ValueError(f"gamma and beta must be positive, got {gamma}, {beta}")
    if R_e < R_b - 1e-12 * max(1.0, abs(R_b)):
        raise ValueError(f"elite mean {R_e} is below the population mean {R_b}")
    R_e = max(R_e, R_b)

    if scaling not in ("pre", "post"):
        raise ValueError(f"unknown elite scaling {scaling!r}")
    total = np.zeros_like(d.W)
    for i, S in enumerate(elites):
        total += as_spd(S, f"elite {i}")

    gain = relative_gain(R_b, R_e, denominator, eps)
    log_growth = gamma * beta * gain
    if np.log(d.nu) + log_growth > np.log(nu_cap):
        nu_new = max(nu_cap, d.nu) if log_growth >= 0 else d.nu * float(np.exp(log_growth))
    else:
        nu_new = d.nu * float(np.exp(log_growth))
    nu_scale = d.nu if scaling == "pre" else nu_new
    W_new = symmetrize(total / (len(elites) * nu_scale))
    return Wishart(W_new, nu_new)


@dataclass(frozen=True)
class GammaFit:
    gamma: float
    slope: float
    intercept: float
    r2: float
    nu: np.ndarray
    entropy: np.ndarray


def entropy_scan(dim, mean=None, n_points=50, nu_max=1e4):
    """Entropy of Wishart distributions sharing the mean ``mean`` over a
    log-spaced grid of nu in (D + 1, nu_max]."""
    if n_points < 3:
        raise ValueError("entropy scan needs at least 3 grid points")
    if not nu_max > dim + 1:
        raise ValueError(f"nu_max must exceed D + 1 = {dim + 1}")
    M = np.eye(dim) if mean is None else as_spd(mean, "scan mean")
    nus = np.geomspace(dim + 1, nu_max, n_points + 1)[1:]
    H = np.array([Wishart(M / nu, nu).entropy() for nu in nus])
    return nus, H


def estimate_gamma(dim, rng=None, mean=None, n_points=50, nu_max=1e4):
    """Least-squares fit of ln(nu) = a * H + b at a fixed Wishart mean.

    Returns a :class:`GammaFit` with ``gamma = -a``. The mean defaults to the
    identity; pass ``rng`` (without ``mean``) to use a random SPD mean.
    """
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if mean is None and rng is not None:
        from .linalg import random_spd

        mean = random_spd(dim, rng)
    nus, H = entropy_scan(dim, mean, n_points, nu_max)
    y = np.log(nus)
    if np.ptp(H) == 0:
        raise ValueError("degenerate entropy grid")
    slope, intercept = np.polyfit(H, y, 1)
    resid = y - (slope * H + intercept)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return GammaFit(-float(slope), float(slope), float(intercept), r2, nus, H)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        if not np.all(np.isfinite(mean)):
            raise ValueError("Gaussian mean must be finite")
        object.__setattr__(self, "mean", mean)
        if mean.size:
            cov = as_spd(self.cov, "Gaussian covariance")
        else:
            cov = np.zeros((0, 0))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    def sample(self, rng, size=None):
        n = 1 if size is None else int(size)
        if self.dim == 0:
            out = np.zeros((n, 0))
        else:
            L = cholesky(self.cov)
            out = self.mean + rng.standard_normal((n, self.dim)) @ L.T
        return out[0] if size is None else out

    def to_dict(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d):
        mean = np.asarray(d["mean"], dtype=float).reshape(-1)
        cov = np.asarray(d["cov"], dtype=float).reshape(mean.size, mean.size)
        return cls(mean, cov)


def gaussian_mle(elites, jitter=1e-8):
    """Maximum-likelihood Gaussian (biased covariance) plus ``jitter * I``."""
    X = np.asarray(elites, dtype=float)
    if X.ndim != 2:
        raise ValueError("elites must be equal-length vectors")
    if X.shape[0] < 2:
        raise ValueError("gaussian_mle needs at least 2 elites")
    mean = X.mean(axis=0)
    diff = X - mean
    cov = diff.T @ diff / X.shape[0] + jitter * np.eye(X.shape[1])
    return Gaussian(mean, symmetrize(cov))

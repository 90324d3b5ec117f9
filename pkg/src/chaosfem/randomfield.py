"""Correlation kernels, discrete Karhunen-Loeve decomposition, lognormal link.

The material field is a lognormal random field E(X) = exp(kappa(X)) with
kappa weakly stationary Gaussian,

    kappa(X, xi) = mu_kappa + sigma_kappa * sum_m sqrt(lam_m) phi_m(X) xi_m,

where (lam_m, phi_m) solve the Fredholm eigenproblem of the correlation
kernel, discretized here by a Nystrom rule on the evaluation points
(element centroids carry element-measure weights; bare point sets such as
sensor layouts use unit weights).  Truncation keeps the smallest M with
explained variance  sum_{1..M} lam / sum lam > 1 - epsilon.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import log, sqrt

import numpy as np
import scipy.linalg

from .errors import NumericalFailure

_KERNEL_FAMILIES = ("squared-exponential", "matern-5/2")


@dataclass(frozen=True)
class KernelSpec:
    """Correlation kernel family plus per-axis correlation lengths."""

    family: str
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.family not in _KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {_KERNEL_FAMILIES}")
        if not self.lengths or any(l <= 0 for l in self.lengths):
            raise ValueError(f"correlation lengths must be positive, got {self.lengths}")


@dataclass(frozen=True)
class LognormalLink:
    """Moment link between a lognormal field and its Gaussian logarithm."""

    mu_E: float
    sigma_E: float
    mu_kappa: float
    sigma_kappa: float


@dataclass(frozen=True)
class KLExpansion:
    """Truncated discrete KL decomposition of a correlation kernel.

    eigenvectors[:, m] is phi_m sampled at `points`, unit-normalized in the
    weighted discrete inner product; eigenvalues are nonincreasing.
    """

    points: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    M: int
    sigma: float = 1.0


def lognormal_link(mu_E: float, sigma_E: float) -> LognormalLink:
    """Closed-form (mu_kappa, sigma_kappa) from the lognormal mean and std."""
    if mu_E <= 0:
        raise ValueError(f"field mean must be positive, got {mu_E}")
    if sigma_E < 0:
        raise ValueError(f"field standard deviation must be nonnegative, got {sigma_E}")
    mu_kappa = log(mu_E**2 / sqrt(mu_E**2 + sigma_E**2))
    sigma_kappa = sqrt(log(1.0 + sigma_E**2 / mu_E**2))
    return LognormalLink(mu_E=mu_E, sigma_E=sigma_E, mu_kappa=mu_kappa, sigma_kappa=sigma_kappa)


def _as_points(x: np.ndarray) -> np.ndarray:
    """Coerce to (n, d); a 1-d array is n points on a single axis."""
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def kernel_matrix(spec: KernelSpec, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Correlation matrix R(x_i, y_j) for point arrays of shape (n, d);
    1-d inputs are read as n points on one spatial axis."""
    x = _as_points(x)
    y = x if y is None else _as_points(y)
    d = np.abs(x[:, None, :] - y[None, :, :])
    if d.shape[-1] != len(spec.lengths):
        raise ValueError(f"points have {d.shape[-1]} axes, kernel has {len(spec.lengths)} lengths")
    ell = np.asarray(spec.lengths, dtype=float)
    if spec.family == "squared-exponential":
        return np.exp(-0.5 * np.sum((d / ell) ** 2, axis=-1))
    # Matern 5/2, anisotropic per-axis product form
    s = sqrt(5.0) * d / ell
    factors = (1.0 + s + s**2 / 3.0) * np.exp(-s)
    return np.prod(factors, axis=-1)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Correlation between two points; symmetric, 1 at x == y."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(kernel_matrix(spec, x[None, :], y[None, :])[0, 0])


def kl_decompose(
    spec: KernelSpec,
    points: np.ndarray,
    epsilon: float,
    weights: np.ndarray | None = None,
    sigma: float = 1.0,
    n_modes: int | None = None,
) -> KLExpansion:
    """Solve the discrete Fredholm eigenproblem and truncate.

    Parameters
    ----------
    points : (n, d) evaluation coordinates (1-d arrays are treated as a
        single spatial axis).
    epsilon : explained-variance threshold in (0, 1); truncation keeps the
        smallest M with cumulative eigenvalue share > 1 - epsilon.
    weights : optional Nystrom weights (element lengths/areas); defaults to
        unit weights for bare point sets.
    n_modes : optional explicit truncation count overriding the epsilon
        rule (clipped to the number of available modes).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least two distinct points")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w <= 0):
        raise ValueError("weights must be positive and match the number of points")

    corr = kernel_matrix(spec, points)
    sw = np.sqrt(w)
    sym = sw[:, None] * corr * sw[None, :]
    sym = 0.5 * (sym + sym.T)
    lam, psi = scipy.linalg.eigh(sym)
    lam = lam[::-1]
    psi = psi[:, ::-1]
    if lam[-1] < -1e-10:
        raise NumericalFailure(
            f"correlation matrix is not numerically PSD (min eigenvalue {lam[-1]:.3e})"
        )
    lam = np.clip(lam, 0.0, None)

    # deterministic eigenvector signs: largest-magnitude entry positive
    lead = np.abs(psi).argmax(axis=0)
    signs = np.sign(psi[lead, np.arange(n)])
    signs[signs == 0] = 1.0
    phi = (psi * signs[None, :]) / sw[:, None]

    if n_modes is not None:
        if n_modes < 1:
            raise ValueError(f"n_modes must be >= 1, got {n_modes}")
        m = min(n_modes, n)
    else:
        share = np.cumsum(lam) / lam.sum()
        m = int(np.searchsorted(share, 1.0 - epsilon, side="right")) + 1
        m = min(m, n)
    return KLExpansion(points=points, eigenvalues=lam[:m], eigenvectors=phi[:, :m], M=m, sigma=sigma)


def field_realize(kl: KLExpansion, link: LognormalLink, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Realize (kappa, E) at the expansion points for one germ draw."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (kl.M,):
        raise ValueError(f"expected germ of length {kl.M}, got shape {xi.shape}")
    kappa = link.mu_kappa + link.sigma_kappa * (kl.eigenvectors @ (np.sqrt(kl.eigenvalues) * xi))
    return kappa, np.exp(kappa)

"""Multivariate Hermite polynomial-chaos bases, projection, moments, sampling.

A response u(xi) of M standard-Gaussian germs is expanded as

    u(xi) = sum_j  u_j * Psi_j(xi),      Psi_j(xi) = prod_i He_{rho_i^j}(xi_i),

over all multi-indices rho^j with total degree <= p (graded lexicographic
order, index 0 the constant term).  Coefficients come from pseudo-spectral
projection on a quadrature grid,

    u_j = <u, Psi_j> / <Psi_j^2>  ~  (1 / <Psi_j^2>) sum_n u(xi_n) Psi_j(xi_n) w_n,

with exact norms <Psi_j^2> = prod_i rho_i^j!.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from .quadrature import SparseGrid


@dataclass(frozen=True)
class PCBasis:
    """Total-degree Hermite basis over M germs.

    `multi_indices` has shape (n_terms, M) with n_terms = C(M + p, p);
    row 0 is the all-zero (constant) index.
    """

    dim: int
    order: int
    multi_indices: np.ndarray
    norms: np.ndarray

    def __len__(self) -> int:
        return self.multi_indices.shape[0]


@dataclass(frozen=True)
class PCField:
    """PC coefficients of one spatial component of a discrete field.

    `coefficients` has shape (n_points, n_terms); column j multiplies
    Psi_j.  Vector-valued responses are lists of PCField, one per spatial
    dimension.
    """

    basis: PCBasis
    coefficients: np.ndarray

    @property
    def n_points(self) -> int:
        return self.coefficients.shape[0]


def _degree_indices(degree: int, dim: int):
    if dim == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in _degree_indices(degree - first, dim - 1):
            yield (first,) + rest


def build_basis(dim: int, order: int) -> PCBasis:
    """All Hermite multi-indices with total degree <= order, graded lex."""
    if dim < 1:
        raise ValueError(f"germ dimension must be >= 1, got {dim}")
    if order < 0:
        raise ValueError(f"polynomial order must be >= 0, got {order}")
    n_terms = comb(dim + order, order)
    if n_terms > 200_000:
        raise ValueError(f"basis of {n_terms} terms for (M={dim}, p={order}) is not supported")
    rows = []
    for degree in range(order + 1):
        rows.extend(_degree_indices(degree, dim))
    multi = np.array(rows, dtype=np.int64)
    norms = np.array([float(np.prod([factorial(int(k)) for k in row])) for row in rows])
    return PCBasis(dim=dim, order=order, multi_indices=multi, norms=norms)


def _hermite_table(x: np.ndarray, max_degree: int) -> np.ndarray:
    """He_k(x) for k = 0..max_degree via the three-term recurrence.

    Returns shape x.shape + (max_degree + 1,).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = x
    for k in range(1, max_degree):
        out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
    return out


def hermite_eval(basis: PCBasis, j: int, xi) -> float:
    """Evaluate the j-th multivariate Hermite basis member at one point."""
    if not 0 <= j < len(basis):
        raise ValueError(f"basis index {j} out of range [0, {len(basis)})")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.dim,):
        raise ValueError(f"expected germ of length {basis.dim}, got shape {xi.shape}")
    table = _hermite_table(xi, basis.order)
    mi = basis.multi_indices[j]
    return float(np.prod(table[np.arange(basis.dim), mi]))


def basis_matrix(basis: PCBasis, points: np.ndarray) -> np.ndarray:
    """Psi_j(xi_n) for all points and terms; shape (n_points, n_terms)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != basis.dim:
        raise ValueError(f"points have dimension {points.shape[1]}, basis has {basis.dim}")
    table = _hermite_table(points, basis.order)  # (n, M, p+1)
    out = np.ones((points.shape[0], len(basis)))
    for i in range(basis.dim):
        out *= table[:, i, basis.multi_indices[:, i]]
    return out


def project(evals: np.ndarray, grid: SparseGrid, basis: PCBasis) -> PCField:
    """Pseudo-spectral projection of model evaluations at the grid nodes.

    `evals` row n holds the model output (length n_points) at grid node n.
    """
    evals = np.asarray(evals, dtype=float)
    if evals.ndim == 1:
        evals = evals[:, None]
    if evals.shape[0] != len(grid):
        raise ValueError(f"evals rows ({evals.shape[0]}) must match grid size ({len(grid)})")
    if grid.dim != basis.dim:
        raise ValueError(f"grid dimension {grid.dim} != basis dimension {basis.dim}")
    psi = basis_matrix(basis, grid.nodes)
    coeffs = evals.T @ (psi * grid.weights[:, None])
    coeffs /= basis.norms[None, :]
    return PCField(basis=basis, coefficients=coeffs)


def pc_moments(field: PCField) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance matrix implied by the coefficients.

    Mean is column 0 exactly; covariance is sum_j>=1 <Psi_j^2> u_j u_j^T,
    symmetrized against rounding.
    """
    coeffs = field.coefficients
    mean = coeffs[:, 0].copy()
    rest = coeffs[:, 1:]
    cov = (rest * field.basis.norms[1:][None, :]) @ rest.T
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def pc_sample(field: PCField, draws: np.ndarray) -> np.ndarray:
    """Evaluate the expansion at germ draws; shape (n_draws, n_points)."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[1] != field.basis.dim:
        raise ValueError(f"draws have dimension {draws.shape[1]}, basis has {field.basis.dim}")
    return basis_matrix(field.basis, draws) @ field.coefficients.T

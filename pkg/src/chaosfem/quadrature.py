"""Gauss-Hermite rules and Smolyak sparse grids for Gaussian expectations.

All rules integrate against the standard (multivariate) normal density,

    E[f] = (2*pi)^(-M/2) * integral f(xi) exp(-|xi|^2/2) dxi,

so univariate nodes are the roots of the probabilists' Hermite polynomial
He_n and weights are normalized to sum to one.  The sparse grid is the
classic combination technique

    A(q, M) = sum_{q-M+1 <= |k| <= q} (-1)^(q-|k|) C(M-1, q-|k|) (U^k1 x ... x U^kM)

with q = M + level and U^k the univariate rule of order growth(k - 1).
Combined weights may be negative; duplicated nodes across tensor terms are
merged by coordinate equality.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable, Iterator

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import NumericalFailure

GrowthRule = Callable[[int], int]


def linear_growth(level: int) -> int:
    """Default growth: a level-l univariate rule has l + 1 nodes."""
    return level + 1


@dataclass(frozen=True)
class UnivariateRule:
    """One-dimensional probabilists' Gauss-Hermite rule.

    Nodes are symmetric about zero and the weights are positive and sum to
    one, so the rule is exact on monomials up to degree 2*order - 1.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class SparseGrid:
    """Smolyak grid over M independent standard-Gaussian germs.

    Nodes are stored lexicographically sorted by coordinates; weights sum
    to one but individual weights may be negative.
    """

    dim: int
    level: int
    nodes: np.ndarray    # (n, dim)
    weights: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.weights.size


def gauss_hermite(order: int) -> UnivariateRule:
    """Probabilists' Gauss-Hermite rule with the given number of nodes."""
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    x, w = hermegauss(order)
    # enforce exact symmetry and unit mass
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    return UnivariateRule(order=order, nodes=x, weights=w)


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All tuples of `parts` positive integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def smolyak(dim: int, level: int, growth: GrowthRule = linear_growth) -> SparseGrid:
    """Build the Smolyak combination grid of the given dimension and level.

    For dim == 1 this degenerates to the univariate rule at `level`.  The
    grid inherits the univariate polynomial exactness: total-degree
    monomials up to 2*growth(level) - 1 are integrated exactly.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")

    rules: dict[int, UnivariateRule] = {}

    def rule(order: int) -> UnivariateRule:
        if order not in rules:
            rules[order] = gauss_hermite(order)
        return rules[order]

    q = dim + level
    merged: dict[tuple[float, ...], list] = {}
    for total in range(max(dim, q - dim + 1), q + 1):
        coeff = (-1.0) ** (q - total) * comb(dim - 1, q - total)
        for k in _compositions(total, dim):
            factors = [rule(growth(ki - 1)) for ki in k]
            axes = np.meshgrid(*[f.nodes for f in factors], indexing="ij")
            pts = np.stack([a.ravel() for a in axes], axis=-1)
            wts = factors[0].weights
            for f in factors[1:]:
                wts = np.multiply.outer(wts, f.weights)
            wts = coeff * wts.ravel()
            keys = np.round(pts, 12)
            for row in range(pts.shape[0]):
                key = tuple(keys[row])
                entry = merged.get(key)
                if entry is None:
                    merged[key] = [pts[row], wts[row]]
                else:
                    entry[1] += wts[row]

    order_keys = sorted(merged.keys())
    nodes = np.array([merged[k][0] for k in order_keys])
    weights = np.array([merged[k][1] for k in order_keys])
    return SparseGrid(dim=dim, level=level, nodes=nodes, weights=weights)


def tensor_grid(dim: int, order: int) -> SparseGrid:
    """Full tensor Gauss-Hermite grid, order nodes per dimension.

    Exposed for the marginal-likelihood quadrature fallback; the `level`
    field records order - 1 for symmetry with `smolyak`.
    """
    r = gauss_hermite(order)
    axes = np.meshgrid(*([r.nodes] * dim), indexing="ij")
    nodes = np.stack([a.ravel() for a in axes], axis=-1)
    weights = r.weights
    for _ in range(dim - 1):
        weights = np.multiply.outer(weights, r.weights)
    weights = weights.ravel()
    idx = np.lexsort(nodes.T[::-1])
    return SparseGrid(dim=dim, level=order - 1, nodes=nodes[idx], weights=weights[idx])


def integrate(grid: SparseGrid, f, workers: int = 1) -> np.ndarray:
    """Quadrature sum  sum_n w_n f(xi_n)  in ascending node index order.

    `f` maps an M-vector to a scalar or vector and may be evaluated
    concurrently (it must be thread-safe); the reduction order is fixed so
    the result is bit-identical regardless of `workers`.
    """
    n = len(grid)

    def eval_node(i):
        try:
            return np.asarray(f(grid.nodes[i]), dtype=float)
        except Exception as exc:
            raise NumericalFailure(f"integrand failed at node {i}: {exc}") from exc

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(eval_node, range(n)))
    else:
        values = [eval_node(i) for i in range(n)]

    acc = np.zeros_like(values[0], dtype=float) if n else np.zeros(())
    for i in range(n):
        acc = acc + grid.weights[i] * values[i]
    return acc

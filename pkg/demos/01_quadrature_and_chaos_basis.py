"""Gaussian quadrature and Hermite chaos in a nutshell.

Walks through the building blocks: univariate Gauss-Hermite rules, sparse
Smolyak grids, and pseudo-spectral projection of a lognormal response onto
a Hermite basis, checked against closed forms.
"""
import numpy as np

from chaosfem.pce import build_basis, pc_moments, project
from chaosfem.quadrature import gauss_hermite, integrate, smolyak

print("== univariate Gauss-Hermite ==")
for order in (1, 2, 5):
    r = gauss_hermite(order)
    print(f"order {order}: nodes {np.round(r.nodes, 4)}, sum w = {r.weights.sum():.15f}")

print("\n== Smolyak sparse grids over Gaussian germs ==")
for dim, level in ((2, 2), (5, 3), (10, 4)):
    g = smolyak(dim, level)
    full = (level + 1) ** dim
    print(f"dim {dim:2d} level {level}: {len(g):6d} nodes (full tensor would need {full:9d})")

g = smolyak(2, 3)
print("\nE[xi1^2 xi2^2] =", float(integrate(g, lambda x: x[0] ** 2 * x[1] ** 2)), "(exact: 1)")
print("E[exp(xi1)]    =", float(integrate(smolyak(1, 8), lambda x: np.exp(x[0]))),
      f"(exact: {np.exp(0.5):.9f})")

print("\n== projecting a lognormal response ==")
s = 0.25
basis = build_basis(1, 2)
grid = smolyak(1, 8)
field = project(np.exp(s * grid.nodes), grid, basis)
closed = [np.exp(s**2 / 2), s * np.exp(s**2 / 2), s**2 * np.exp(s**2 / 2) / 2]
print("coefficients  :", np.round(field.coefficients[0], 8))
print("closed form   :", np.round(closed, 8))
mean, cov = pc_moments(field)
print(f"mean {mean[0]:.8f} vs exp(s^2/2) = {np.exp(s**2/2):.8f}")
print(f"var  {cov[0,0]:.8f} vs exact      = {(np.exp(s**2)-1)*np.exp(s**2):.8f}")

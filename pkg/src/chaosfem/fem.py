"""Deterministic solvers: 1D linear bar, plane-stress linear elasticity on
bilinear quads, and an incompressible Neo-Hookean plane-stress solver used
only to generate synthetic "reality" data.

Meshes are plain node/connectivity containers.  The text mesh format is

    NODES
    <id> <x> [<y>]
    ...
    ELEMENTS
    <id> <n1> <n2> [<n3> <n4>]
    ...

with whitespace-delimited fields and 0-based node ids in the ELEMENTS
section referring to the NODES ids.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import NumericalFailure

_GAUSS_1D = 1.0 / np.sqrt(3.0)
# 2x2 Gauss points on the reference square, unit weights
_QUAD_GP = np.array(
    [[-_GAUSS_1D, -_GAUSS_1D], [_GAUSS_1D, -_GAUSS_1D], [_GAUSS_1D, _GAUSS_1D], [-_GAUSS_1D, _GAUSS_1D]]
)


@dataclass(frozen=True)
class Mesh:
    """Node coordinates plus 2-node bar or 4-node quad connectivity."""

    nodes: np.ndarray     # (n_node,) for bars, (n_node, 2) for quads
    elements: np.ndarray  # (n_elm, 2) or (n_elm, 4), int

    def __post_init__(self):
        if self.elements.min() < 0 or self.elements.max() >= self.n_nodes:
            raise ValueError("element connectivity references nonexistent nodes")
        if np.any(self.measures <= 0):
            raise ValueError("mesh has elements with nonpositive length/area")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def is_1d(self) -> bool:
        return self.nodes.ndim == 1

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @property
    def measures(self) -> np.ndarray:
        """Element lengths (1D) or areas (2D quads, shoelace formula)."""
        if self.is_1d:
            x = self.nodes[self.elements]
            return x[:, 1] - x[:, 0]
        xy = self.nodes[self.elements]  # (m, 4, 2)
        x, y = xy[..., 0], xy[..., 1]
        xs, ys = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        return 0.5 * np.abs(np.sum(x * ys - xs * y, axis=1))


def bar_mesh(length: float, n_elements: int) -> Mesh:
    """Uniform 1D bar on [0, length]."""
    if length <= 0 or n_elements < 1:
        raise ValueError("bar mesh needs positive length and at least one element")
    nodes = np.linspace(0.0, length, n_elements + 1)
    elems = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    return Mesh(nodes=nodes, elements=elems.astype(np.int64))


def rect_mesh(lx: float, ly: float, nx: int, ny: int) -> Mesh:
    """Structured quad mesh of the rectangle [0, lx] x [0, ly]."""
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    elems = []
    for i in range(nx):
        for j in range(ny):
            n0 = i * (ny + 1) + j
            n1 = (i + 1) * (ny + 1) + j
            elems.append([n0, n1, n1 + 1, n0 + 1])
    return Mesh(nodes=nodes, elements=np.array(elems, dtype=np.int64))


def plate_hole_mesh(
    width: float = 0.32,
    hole_radius: float = 0.02,
    n_theta: int = 40,
    n_radial: int = 8,
    grading: float = 1.3,
) -> tuple[Mesh, np.ndarray]:
    """Structured O-grid around a centered circular hole in a square plate.

    Spokes run from the hole rim to the outer boundary; n_theta must be a
    multiple of 8 so the four corners carry nodes exactly.  Returns the
    mesh and the radial layer index of every element (0 = innermost ring).
    """
    if n_theta % 8 != 0:
        raise ValueError("n_theta must be a multiple of 8 to hit the plate corners")
    if not 0 < 2 * hole_radius < width:
        raise ValueError("hole must fit inside the plate")
    half = width / 2.0
    center = np.array([half, half])
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    ray = np.column_stack([np.cos(theta), np.sin(theta)])
    outer_dist = half / np.maximum(np.abs(ray[:, 0]), np.abs(ray[:, 1]))

    # geometric grading toward the hole: layer fractions t_k in [0, 1]
    steps = grading ** np.arange(n_radial)
    t = np.concatenate([[0.0], np.cumsum(steps)]) / steps.sum()

    nodes = np.empty((n_theta * (n_radial + 1), 2))
    for j in range(n_theta):
        inner = center + hole_radius * ray[j]
        outer = center + outer_dist[j] * ray[j]
        nodes[j * (n_radial + 1) : (j + 1) * (n_radial + 1)] = inner[None, :] + t[:, None] * (outer - inner)[None, :]

    elems = []
    layer = []
    for j in range(n_theta):
        jn = (j + 1) % n_theta
        for k in range(n_radial):
            a = j * (n_radial + 1) + k
            b = jn * (n_radial + 1) + k
            elems.append([a, a + 1, b + 1, b])  # counterclockwise
            layer.append(k)
    return Mesh(nodes=nodes, elements=np.array(elems, dtype=np.int64)), np.array(layer, dtype=np.int64)


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(mesh_text(mesh))


def mesh_text(mesh: Mesh) -> str:
    buf = io.StringIO()
    buf.write("NODES\n")
    coords = np.atleast_2d(mesh.nodes.T).T
    for i in range(mesh.n_nodes):
        row = " ".join(format(c, ".17g") for c in np.atleast_1d(coords[i]))
        buf.write(f"{i} {row}\n")
    buf.write("ELEMENTS\n")
    for e in range(mesh.n_elements):
        buf.write(f"{e} " + " ".join(str(int(n)) for n in mesh.elements[e]) + "\n")
    return buf.getvalue()


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        nodes_at = lines.index("NODES")
        elems_at = lines.index("ELEMENTS")
    except ValueError as exc:
        raise ValueError(f"{path}: missing NODES/ELEMENTS section") from exc
    node_rows = [ln.split() for ln in lines[nodes_at + 1 : elems_at]]
    elem_rows = [ln.split() for ln in lines[elems_at + 1 :]]
    coords = np.array([[float(v) for v in row[1:]] for row in node_rows])
    conn = np.array([[int(v) for v in row[1:]] for row in elem_rows], dtype=np.int64)
    if coords.shape[1] == 1:
        coords = coords[:, 0]
    return Mesh(nodes=coords, elements=conn)


# ---------------------------------------------------------------------------
# 1D bar
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BarProblem:
    """Tension bar fixed at X = 0 with a point load at the tip."""

    mesh: Mesh
    area: float
    tip_load: float
    youngs: np.ndarray  # per element

    def __post_init__(self):
        if not self.mesh.is_1d:
            raise ValueError("BarProblem needs a 1D mesh")
        if self.youngs.shape != (self.mesh.n_elements,):
            raise ValueError("youngs must hold one modulus per element")


def solve_bar(problem: BarProblem) -> np.ndarray:
    """Nodal displacements of the linear two-node bar; u[0] = 0."""
    if np.any(problem.youngs <= 0):
        raise ValueError("Young's modulus must be positive in every element")
    mesh = problem.mesh
    if np.any(np.abs(mesh.elements[:, 1] - mesh.elements[:, 0]) != 1):
        raise ValueError("bar elements must connect consecutive nodes")
    h = mesh.measures
    k = problem.area * problem.youngs / h
    n = mesh.n_nodes
    # tridiagonal stiffness in banded storage (free dofs 1..n-1)
    main = np.zeros(n)
    off = np.zeros(n - 1)
    for e, (a, b) in enumerate(mesh.elements):
        main[a] += k[e]
        main[b] += k[e]
        off[min(a, b)] -= k[e]
    f = np.zeros(n)
    f[-1] = problem.tip_load
    ab = np.zeros((2, n - 1))
    ab[0, 1:] = off[1:]
    ab[1, :] = main[1:]
    u = np.zeros(n)
    u[1:] = scipy.linalg.solveh_banded(ab, f[1:])
    return u


# ---------------------------------------------------------------------------
# plane stress on bilinear quads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneStressProblem:
    """Plane-stress body with element-wise Young's modulus.

    `fixed_dofs` are global dof indices (2 * node + comp) pinned to zero;
    `loads` is the assembled external nodal force vector.
    """

    mesh: Mesh
    thickness: float
    nu: float
    youngs: np.ndarray
    fixed_dofs: np.ndarray
    loads: np.ndarray

    def __post_init__(self):
        if self.mesh.is_1d:
            raise ValueError("PlaneStressProblem needs a 2D quad mesh")
        if not 0.0 <= self.nu <= 0.5:
            raise ValueError(f"Poisson ratio must lie in [0, 0.5], got {self.nu}")
        if self.youngs.shape != (self.mesh.n_elements,):
            raise ValueError("youngs must hold one modulus per element")
        if self.loads.shape != (2 * self.mesh.n_nodes,):
            raise ValueError("loads must be a global dof vector")


@dataclass(frozen=True)
class NeoHookeanMaterial:
    """Incompressible Neo-Hookean stiffness A10 = E/6 per element."""

    a10: np.ndarray

    def __post_init__(self):
        if np.any(self.a10 <= 0):
            raise ValueError("A10 must be positive in every element")


def neo_hookean_from_youngs(youngs: np.ndarray) -> NeoHookeanMaterial:
    return NeoHookeanMaterial(a10=np.asarray(youngs, dtype=float) / 6.0)


def left_edge_nodes(mesh: Mesh, tol: float = 1e-9) -> np.ndarray:
    x = mesh.nodes[:, 0]
    return np.flatnonzero(x <= x.min() + tol)


def right_edge_nodes(mesh: Mesh, tol: float = 1e-9) -> np.ndarray:
    x = mesh.nodes[:, 0]
    return np.flatnonzero(x >= x.max() - tol)


def clamp_nodes(nodes: np.ndarray, components=(0, 1)) -> np.ndarray:
    """Global dof indices pinning the given components of the nodes."""
    return np.sort(np.concatenate([2 * np.asarray(nodes) + c for c in components]))


def edge_traction_loads(mesh: Mesh, edge_nodes: np.ndarray, traction: float, thickness: float, component: int = 0) -> np.ndarray:
    """Consistent nodal forces for a uniform traction along a mesh edge.

    The edge is the polyline through `edge_nodes` sorted by y (vertical
    edges) or x; each segment contributes half its length to either end.
    """
    nodes = np.asarray(edge_nodes)
    coords = mesh.nodes[nodes]
    order = np.lexsort((coords[:, 0], coords[:, 1]))
    nodes = nodes[order]
    coords = coords[order]
    f = np.zeros(2 * mesh.n_nodes)
    seg = np.linalg.norm(np.diff(coords, axis=0), axis=1)
    for i, ln in enumerate(seg):
        share = 0.5 * traction * thickness * ln
        f[2 * nodes[i] + component] += share
        f[2 * nodes[i + 1] + component] += share
    return f


def _quad_shape_gradients(mesh: Mesh):
    """Reference-configuration shape gradients at the 2x2 Gauss points.

    Returns (dNdX, detJ) with shapes (n_elm, 4 gp, 4 nodes, 2) and
    (n_elm, 4 gp).
    """
    xy = mesh.nodes[mesh.elements]  # (m, 4, 2)
    dndx = np.empty((mesh.n_elements, 4, 4, 2))
    detj = np.empty((mesh.n_elements, 4))
    for g, (xi, eta) in enumerate(_QUAD_GP):
        dn = 0.25 * np.array(
            [
                [-(1 - eta), -(1 - xi)],
                [(1 - eta), -(1 + xi)],
                [(1 + eta), (1 + xi)],
                [-(1 + eta), (1 - xi)],
            ]
        )  # (4 nodes, 2 ref-coords)
        jac = np.einsum("mna,nb->mab", xy, dn)  # d x / d xi
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0):
            raise ValueError("quad element with nonpositive Jacobian (check node ordering)")
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv /= det[:, None, None]
        dndx[:, g] = np.einsum("nb,mba->mna", dn, inv)
        detj[:, g] = det
    return dndx, detj


def quad_unit_stiffness(mesh: Mesh, nu: float, thickness: float) -> np.ndarray:
    """Element stiffness matrices for E = 1; scale by E per element later."""
    dndx, detj = _quad_shape_gradients(mesh)
    d0 = np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]) / (1.0 - nu**2)
    ke = np.zeros((mesh.n_elements, 8, 8))
    for g in range(4):
        b = np.zeros((mesh.n_elements, 3, 8))
        b[:, 0, 0::2] = dndx[:, g, :, 0]
        b[:, 1, 1::2] = dndx[:, g, :, 1]
        b[:, 2, 0::2] = dndx[:, g, :, 1]
        b[:, 2, 1::2] = dndx[:, g, :, 0]
        ke += np.einsum("mia,ij,mjb,m->mab", b, d0, b, detj[:, g]) * thickness
    return ke


def _element_dofs(mesh: Mesh) -> np.ndarray:
    conn = mesh.elements
    dofs = np.empty((mesh.n_elements, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    return dofs


def assemble_global(mesh: Mesh, ke: np.ndarray) -> scipy.sparse.csr_matrix:
    dofs = _element_dofs(mesh)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n = 2 * mesh.n_nodes
    return scipy.sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def solve_plane_stress_le(problem: PlaneStressProblem, unit_ke: np.ndarray | None = None) -> np.ndarray:
    """Linear elastic plane-stress solve; returns the global dof vector.

    `unit_ke` (from quad_unit_stiffness) may be passed in to amortize the
    geometry work across many solves with different element moduli.
    """
    if np.any(problem.youngs <= 0):
        raise ValueError("Young's modulus must be positive in every element")
    mesh = problem.mesh
    if unit_ke is None:
        unit_ke = quad_unit_stiffness(mesh, problem.nu, problem.thickness)
    k = assemble_global(mesh, unit_ke * problem.youngs[:, None, None])
    n = 2 * mesh.n_nodes
    free = np.setdiff1d(np.arange(n), problem.fixed_dofs)
    kff = k[np.ix_(free, free)].tocsc()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.sparse.linalg.MatrixRankWarning)
            u_free = scipy.sparse.linalg.spsolve(kff, problem.loads[free])
    except Exception as exc:
        raise NumericalFailure(f"plane-stress stiffness solve failed: {exc}") from exc
    if not np.all(np.isfinite(u_free)):
        raise NumericalFailure("plane-stress stiffness is singular")
    # enforce the force-balance contract; a near-singular factorization can
    # return finite garbage without erroring
    ref = np.linalg.norm(problem.loads[free])
    residual = np.linalg.norm(kff @ u_free - problem.loads[free])
    if residual > 1e-8 * max(ref, 1e-300):
        raise NumericalFailure(
            f"plane-stress solve left a relative residual of {residual / max(ref, 1e-300):.3e}; "
            "the stiffness matrix is singular or severely ill-conditioned"
        )
    u = np.zeros(n)
    u[free] = u_free
    return u


def _nh_stress_and_tangent(f_grad: np.ndarray, a10: np.ndarray):
    """First Piola-Kirchhoff stress and tangent for incompressible
    plane-stress Neo-Hooke, W = A10 (tr C + 1/det C - 3).

    f_grad: (m, 2, 2) in-plane deformation gradients at one Gauss point.
    Returns P (m, 2, 2) and A = dP/dF (m, 2, 2, 2, 2).
    """
    det = f_grad[:, 0, 0] * f_grad[:, 1, 1] - f_grad[:, 0, 1] * f_grad[:, 1, 0]
    if np.any(det <= 0):
        raise NumericalFailure("deformation gradient lost invertibility (det F <= 0)")
    finv = np.empty_like(f_grad)
    finv[:, 0, 0] = f_grad[:, 1, 1]
    finv[:, 1, 1] = f_grad[:, 0, 0]
    finv[:, 0, 1] = -f_grad[:, 0, 1]
    finv[:, 1, 0] = -f_grad[:, 1, 0]
    finv /= det[:, None, None]
    fint = np.swapaxes(finv, 1, 2)  # F^{-T}
    jm2 = det**-2
    p = 2.0 * a10[:, None, None] * (f_grad - jm2[:, None, None] * fint)

    eye = np.eye(2)
    a = np.broadcast_to(np.einsum("ik,JL->iJkL", eye, eye), (len(det), 2, 2, 2, 2)).copy()
    a += 2.0 * jm2[:, None, None, None, None] * np.einsum("mkL,miJ->miJkL", fint, fint)
    a += jm2[:, None, None, None, None] * np.einsum("mJk,mLi->miJkL", finv, finv)
    return p, 2.0 * a10[:, None, None, None, None] * a


def solve_plane_stress_nh(
    problem: PlaneStressProblem,
    material: NeoHookeanMaterial,
    n_increments: int = 10,
    newton_tol: float = 1e-8,
    max_newton: int = 50,
) -> np.ndarray:
    """Incompressible Neo-Hookean plane-stress solve by incremental Newton.

    The thickness stretch is eliminated through det F = 1, so the strain
    energy reduces to W = A10 (tr C + 1/det C - 3) in the in-plane
    deformation gradient.  Dead loads are ramped in equal increments.
    """
    mesh = problem.mesh
    if material.a10.shape != (mesh.n_elements,):
        raise ValueError("material must hold one A10 per element")
    dndx, detj = _quad_shape_gradients(mesh)
    dofs = _element_dofs(mesh)
    n = 2 * mesh.n_nodes
    free = np.setdiff1d(np.arange(n), problem.fixed_dofs)
    conn = mesh.elements
    th = problem.thickness

    def internal(u: np.ndarray, with_tangent: bool):
        ue = u.reshape(-1, 2)[conn]  # (m, 4, 2)
        f_int = np.zeros((mesh.n_elements, 4, 2))
        kt = np.zeros((mesh.n_elements, 8, 8)) if with_tangent else None
        for g in range(4):
            grad = np.einsum("mni,mnJ->miJ", ue, dndx[:, g])
            f_grad = grad + np.eye(2)[None, :, :]
            p, a = _nh_stress_and_tangent(f_grad, material.a10)
            scale = th * detj[:, g]
            f_int += np.einsum("miJ,mnJ,m->mni", p, dndx[:, g], scale)
            if with_tangent:
                ke_g = np.einsum("mnJ,miJkL,moL,m->mniok", dndx[:, g], a, dndx[:, g], scale)
                kt += ke_g.reshape(mesh.n_elements, 8, 8)
        r = np.zeros(n)
        np.add.at(r, dofs.reshape(-1), f_int.reshape(mesh.n_elements, 8).reshape(-1))
        return r, kt

    u = np.zeros(n)
    history = []
    for inc in range(1, n_increments + 1):
        f_ext = problem.loads * (inc / n_increments)
        ref = max(np.linalg.norm(f_ext[free]), 1.0)
        converged = False
        for it in range(max_newton):
            r_int, kt = internal(u, with_tangent=True)
            residual = r_int - f_ext
            rel = np.linalg.norm(residual[free]) / ref
            history.append((inc, it, rel))
            if rel < newton_tol:
                converged = True
                break
            k = assemble_global(mesh, kt)
            kff = k[np.ix_(free, free)].tocsc()
            du = scipy.sparse.linalg.spsolve(kff, -residual[free])
            if not np.all(np.isfinite(du)):
                raise NumericalFailure(f"Newton tangent singular at increment {inc}, iteration {it}")
            # halve the step while it breaks invertibility of F
            step = 1.0
            for _ in range(30):
                trial = u.copy()
                trial[free] += step * du
                try:
                    internal(trial, with_tangent=False)
                except NumericalFailure:
                    step *= 0.5
                    continue
                u = trial
                break
            else:
                raise NumericalFailure(f"Newton line search failed at increment {inc}, iteration {it}")
        if not converged:
            raise NumericalFailure(
                f"Newton did not converge in {max_newton} iterations at increment {inc} "
                f"(last relative residual {history[-1][2]:.3e})"
            )
    return u


def nh_internal_force(problem: PlaneStressProblem, material: NeoHookeanMaterial, u: np.ndarray) -> np.ndarray:
    """Assembled internal force at a given state (for tangent checks)."""
    mesh = problem.mesh
    dndx, detj = _quad_shape_gradients(mesh)
    dofs = _element_dofs(mesh)
    conn = mesh.elements
    ue = u.reshape(-1, 2)[conn]
    f_int = np.zeros((mesh.n_elements, 4, 2))
    for g in range(4):
        grad = np.einsum("mni,mnJ->miJ", ue, dndx[:, g])
        p, _ = _nh_stress_and_tangent(grad + np.eye(2)[None, :, :], material.a10)
        f_int += np.einsum("miJ,mnJ,m->mni", p, dndx[:, g], problem.thickness * detj[:, g])
    r = np.zeros(2 * mesh.n_nodes)
    np.add.at(r, dofs.reshape(-1), f_int.reshape(-1))
    return r

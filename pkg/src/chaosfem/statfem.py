"""Statistical generating model and the polynomial-chaos Gauss-Markov-Kalman
update.

Observations are modeled per spatial component v as

    y(xi, chi, zeta) = rho * H u(xi) + d(chi) + e(zeta),

with the model-reality mismatch d = sigma_d_matrix @ chi (columns are
per-mode loadings sigma_{d,m} sqrt(lam_m) phi_m at the sensors) and sensor
noise e = sigma_e_matrix @ zeta.  All three random sources live on one
extended basis [Psi(xi), chi, zeta]; the filter updates the displacement
coefficients columnwise,

    u_a = u_f + K (ybar - rho H u_f - d - e),
    K   = Sigma_u H^T (rho H Sigma_u H^T + (Sigma_d + Sigma_e)/(n_r rho))^{-1},

which leaves the posterior fully described by PC coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalFailure
from .fem import Mesh
from .pce import PCBasis, PCField, basis_matrix
from .randomfield import KernelSpec, kl_decompose


@dataclass(frozen=True)
class GeneratingModel:
    """One spatial component of the statistical generating model."""

    H: np.ndarray                  # (n_sen, n_node)
    rho: float
    sigma_d: np.ndarray            # (n_sen, M_d) per-mode loadings
    sigma_e: np.ndarray            # (n_sen, n_sen) diagonal

    @property
    def cov_mismatch(self) -> np.ndarray:
        return self.sigma_d @ self.sigma_d.T

    @property
    def cov_noise(self) -> np.ndarray:
        return self.sigma_e @ self.sigma_e.T


@dataclass(frozen=True)
class ExtendedPC:
    """Block-sparse coefficient matrices on the extended basis.

    Columns: [0, n_u) displacement terms, [n_u, n_u + M_d) mismatch germ
    loadings, [n_u + M_d, n_terms) noise germ loadings.  y_hat carries the
    replication sum of the data in column 0 only.
    """

    basis: PCBasis
    m_d: int
    n_sen: int
    n_rep: int
    u_hat: np.ndarray
    d_hat: np.ndarray
    e_hat: np.ndarray
    y_hat: np.ndarray

    @property
    def n_terms(self) -> int:
        return len(self.basis) + self.m_d + self.n_sen

    @property
    def norms(self) -> np.ndarray:
        """<Psi_hat_alpha^2>: factorial norms on the displacement block,
        unit norms on the first-order chi/zeta germs."""
        return np.concatenate([self.basis.norms, np.ones(self.m_d + self.n_sen)])


@dataclass(frozen=True)
class PosteriorResult:
    """Updated extended coefficients plus the gain that produced them."""

    ext: ExtendedPC
    u_hat: np.ndarray   # (n_node, n_terms) posterior coefficients
    gain: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.u_hat[:, 0]


def _bar_observation_row(nodes: np.ndarray, x: float) -> np.ndarray:
    row = np.zeros(nodes.size)
    if not nodes[0] - 1e-9 <= x <= nodes[-1] + 1e-9:
        raise ValueError(f"sensor at {x} lies outside the bar [{nodes[0]}, {nodes[-1]}]")
    j = int(np.clip(np.searchsorted(nodes, x) - 1, 0, nodes.size - 2))
    t = (x - nodes[j]) / (nodes[j + 1] - nodes[j])
    t = min(max(t, 0.0), 1.0)
    row[j] = 1.0 - t
    row[j + 1] = t
    return row


def _quad_local_coords(corners: np.ndarray, point: np.ndarray):
    """Invert the bilinear map; returns (xi, eta) or None if outside."""
    xi = np.zeros(2)
    for _ in range(30):
        s, t = xi
        n = 0.25 * np.array([(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)])
        dn = 0.25 * np.array(
            [[-(1 - t), -(1 - s)], [(1 - t), -(1 + s)], [(1 + t), (1 + s)], [-(1 + t), (1 - s)]]
        )
        r = n @ corners - point
        if np.abs(r).max() < 1e-13:
            break
        jac = dn.T @ corners  # d point / d (xi, eta) transposed
        try:
            xi = xi - np.linalg.solve(jac.T, r)
        except np.linalg.LinAlgError:
            return None
    if np.abs(xi).max() > 1.0 + 1e-8:
        return None
    s, t = np.clip(xi, -1.0, 1.0)
    return 0.25 * np.array([(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)])


def observation_matrix(mesh: Mesh, sensor_coords: np.ndarray) -> np.ndarray:
    """Shape-function interpolation of nodal values at the sensors.

    Rows sum to one; a sensor sitting on a node yields a unit row.
    """
    if mesh.is_1d:
        coords = np.atleast_1d(np.asarray(sensor_coords, dtype=float)).ravel()
        return np.array([_bar_observation_row(mesh.nodes, x) for x in coords])

    coords = np.atleast_2d(np.asarray(sensor_coords, dtype=float))
    corners_all = mesh.nodes[mesh.elements]
    lo = corners_all.min(axis=1)
    hi = corners_all.max(axis=1)
    pad = 1e-9 * max(1.0, np.abs(mesh.nodes).max())
    h = np.zeros((coords.shape[0], mesh.n_nodes))
    for k, pt in enumerate(coords):
        inside = np.flatnonzero(np.all((lo <= pt + pad) & (hi >= pt - pad), axis=1))
        for e in inside:
            weights = _quad_local_coords(corners_all[e], pt)
            if weights is not None:
                h[k, mesh.elements[e]] = weights
                break
        else:
            raise ValueError(f"sensor {k} at {pt} lies outside the mesh")
    return h


def mismatch_factors(
    sensor_coords: np.ndarray,
    kernel: KernelSpec,
    sigma_d_modes: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode mismatch loadings and covariance at the sensor locations.

    Column m of the returned matrix is sigma_{d,m} sqrt(lam_m) phi_m with
    (lam, phi) from the discrete eigenproblem over the sensors; the
    covariance is its Gram matrix  sum_m sigma_m^2 lam_m phi_m phi_m^T.
    """
    sigma_d_modes = np.atleast_1d(np.asarray(sigma_d_modes, dtype=float))
    if np.any(sigma_d_modes < 0):
        raise ValueError("mismatch mode deviations must be nonnegative")
    coords = np.asarray(sensor_coords, dtype=float)
    n_sen = coords.shape[0]
    m_d = sigma_d_modes.size
    if m_d > n_sen:
        raise ValueError(f"M_d = {m_d} exceeds the {n_sen} modes available at the sensors")
    kl = kl_decompose(kernel, coords, epsilon=1e-15, n_modes=m_d)
    if kl.M < m_d:
        raise ValueError(f"only {kl.M} modes available at the sensors, need {m_d}")
    factors = kl.eigenvectors * (sigma_d_modes * np.sqrt(kl.eigenvalues))[None, :]
    return factors, factors @ factors.T


def kalman_gain(
    cov_u: np.ndarray,
    H: np.ndarray,
    rho: float,
    cov_d: np.ndarray,
    cov_e: np.ndarray,
    n_rep: int,
    form: str = "paper",
) -> np.ndarray:
    """Gain K = Sigma_u H^T (rho H Sigma_u H^T + (Sigma_d+Sigma_e)/(n_r rho))^{-1}.

    `form="symmetric"` uses the algebraically equivalent factorization
    rho Sigma_u H^T (rho^2 H Sigma_u H^T + (Sigma_d+Sigma_e)/n_r)^{-1}.
    Solved by Cholesky factorization, never an explicit inverse.
    """
    if form not in ("paper", "symmetric"):
        raise ValueError(f"unknown gain form {form!r}")
    hs = H @ cov_u
    noise = (cov_d + cov_e) / n_rep
    if form == "paper":
        inner = rho * (hs @ H.T) + noise / rho
        scale = 1.0
    else:
        inner = rho**2 * (hs @ H.T) + noise
        scale = rho
    inner = 0.5 * (inner + inner.T)
    try:
        cho = scipy.linalg.cho_factor(inner)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalFailure(f"gain inner matrix is not positive definite: {exc}") from exc
    return scale * scipy.linalg.cho_solve(cho, hs).T


def assemble_extended(
    prior: PCField,
    sigma_d: np.ndarray,
    sigma_e: np.ndarray,
    Y: np.ndarray,
) -> ExtendedPC:
    """Lay out the prior, mismatch, noise, and data on the extended basis."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n_sen, n_rep = Y.shape
    m_d = sigma_d.shape[1] if sigma_d.size else 0
    if sigma_d.size and sigma_d.shape[0] != n_sen:
        raise ValueError("mismatch loadings and data disagree on the sensor count")
    if sigma_e.shape != (n_sen, n_sen):
        raise ValueError("noise factors must be (n_sen, n_sen)")
    n_u = len(prior.basis)
    n_terms = n_u + m_d + n_sen

    u_hat = np.zeros((prior.n_points, n_terms))
    u_hat[:, :n_u] = prior.coefficients
    d_hat = np.zeros((n_sen, n_terms))
    if m_d:
        d_hat[:, n_u : n_u + m_d] = sigma_d
    e_hat = np.zeros((n_sen, n_terms))
    e_hat[:, n_u + m_d :] = sigma_e
    y_hat = np.zeros((n_sen, n_terms))
    y_hat[:, 0] = Y.sum(axis=1)
    return ExtendedPC(
        basis=prior.basis, m_d=m_d, n_sen=n_sen, n_rep=n_rep,
        u_hat=u_hat, d_hat=d_hat, e_hat=e_hat, y_hat=y_hat,
    )


def gmkf_update(
    ext: ExtendedPC,
    gain: np.ndarray,
    rho: float,
    H: np.ndarray,
    n_rep: int,
    mismatch_scaling: str = "replicated",
) -> PosteriorResult:
    """Columnwise affine update of the displacement coefficients.

    `mismatch_scaling` controls the germ loadings of the mismatch/noise
    blocks in the innovation.  "replicated" (default) scales them by
    1/sqrt(n_rep): each reading draws fresh mismatch and noise, so the
    replication-averaged data carries Sigma_de / n_rep — the same
    averaging the gain applies — and the update reproduces the exact
    Gaussian conditional for linear priors at any n_rep.  "fixed" keeps
    the loadings unscaled (a discrepancy frozen across readings); the two
    coincide at n_rep = 1.
    """
    if n_rep != ext.n_rep:
        raise ValueError(f"n_rep = {n_rep} does not match the assembled data ({ext.n_rep})")
    if mismatch_scaling not in ("replicated", "fixed"):
        raise ValueError(f"unknown mismatch scaling {mismatch_scaling!r}")
    s = 1.0 / np.sqrt(n_rep) if mismatch_scaling == "replicated" else 1.0
    innovation = ext.y_hat / n_rep - rho * (H @ ext.u_hat) - s * ext.d_hat - s * ext.e_hat
    u_post = ext.u_hat + gain @ innovation
    return PosteriorResult(ext=ext, u_hat=u_post, gain=gain)


def posterior_moments(result: PosteriorResult) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the updated displacement coefficients."""
    norms = result.ext.norms
    mean = result.u_hat[:, 0].copy()
    rest = result.u_hat[:, 1:]
    cov = (rest * norms[1:][None, :]) @ rest.T
    return mean, 0.5 * (cov + cov.T)


def true_response(
    result: PosteriorResult, H: np.ndarray, cov_d: np.ndarray, rho: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the inferred true displacement at the sensors.

    The true response is z = rho H u + d, so mu_z = rho H mu_a and
    Sigma_z = rho^2 H Sigma_a H^T + Sigma_d (the mismatch is mean-free).
    With rho = 1 this reduces to mu_z = H mu_a, Sigma_z = H Sigma_a H^T +
    Sigma_d.
    """
    mean, cov = posterior_moments(result)
    return rho * (H @ mean), rho**2 * (H @ cov @ H.T) + cov_d


def extended_basis_eval(ext: ExtendedPC, xi: np.ndarray, chi: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Evaluate [Psi(xi), chi, zeta] rows for sample draws."""
    psi = basis_matrix(ext.basis, xi)
    return np.hstack([psi, np.atleast_2d(chi), np.atleast_2d(zeta)])


def posterior_samples(result: PosteriorResult, xi: np.ndarray, chi: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Posterior displacement realizations, one row per draw."""
    return extended_basis_eval(result.ext, xi, chi, zeta) @ result.u_hat.T


def rmsd(samples_at_sensors: np.ndarray, Y: np.ndarray) -> float:
    """Root mean square deviation of posterior sensor samples from the
    columnwise data mean, averaged over samples and sensors."""
    samples = np.atleast_2d(np.asarray(samples_at_sensors, dtype=float))
    mu_y = np.atleast_2d(np.asarray(Y, dtype=float)).mean(axis=1)
    if samples.shape[1] != mu_y.size:
        raise ValueError("samples and data disagree on the sensor count")
    return float(np.sqrt(np.mean((samples - mu_y[None, :]) ** 2)))


def err_metric(mu_z: np.ndarray, Y_big: np.ndarray) -> float:
    """Euclidean norm of the discrepancy between the inferred true mean
    and the mean of a reference data set."""
    mu_y = np.atleast_2d(np.asarray(Y_big, dtype=float)).mean(axis=1)
    return float(np.linalg.norm(np.asarray(mu_z, dtype=float) - mu_y))

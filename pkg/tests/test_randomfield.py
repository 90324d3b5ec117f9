"""Kernels, lognormal link, and the discrete Karhunen-Loeve machinery."""

import math

import numpy as np
import pytest

from chaosfem.fem import bar_mesh, plate_hole_mesh
from chaosfem.randomfield import (
    KernelSpec,
    field_realize,
    kernel_eval,
    kernel_matrix,
    kl_decompose,
    lognormal_link,
)

SE_10 = KernelSpec("squared-exponential", (10.0,))


class TestLognormalLink:
    def test_bar_benchmark_values(self):
        link = lognormal_link(200.0, 40.0)
        assert link.mu_kappa == pytest.approx(5.2787, abs=1e-3)
        assert link.sigma_kappa == pytest.approx(0.1980, abs=1e-3)

    def test_plate_benchmark_values(self):
        link = lognormal_link(200000.0, 30000.0)
        assert link.mu_kappa == pytest.approx(12.195, abs=1e-2)
        assert link.sigma_kappa == pytest.approx(0.1492, abs=1e-2)

    def test_degenerate_deterministic_field(self):
        link = lognormal_link(123.0, 0.0)
        assert link.mu_kappa == pytest.approx(math.log(123.0), abs=1e-15)
        assert link.sigma_kappa == 0.0

    def test_closed_form_identities(self):
        link = lognormal_link(57.0, 13.0)
        assert link.mu_kappa == pytest.approx(math.log(57.0**2 / math.sqrt(57.0**2 + 13.0**2)), abs=1e-12)
        assert link.sigma_kappa**2 == pytest.approx(math.log(1 + 13.0**2 / 57.0**2), abs=1e-12)

    def test_invalid_mean(self):
        with pytest.raises(ValueError):
            lognormal_link(0.0, 1.0)


class TestKernels:
    def test_unit_at_coincident_points(self):
        assert kernel_eval(SE_10, [3.0], [3.0]) == 1.0
        m = KernelSpec("matern-5/2", (2.0, 3.0))
        assert kernel_eval(m, [1.0, 2.0], [1.0, 2.0]) == 1.0

    def test_matern_at_one_correlation_length(self):
        expected = (1 + math.sqrt(5) + 5.0 / 3.0) * math.exp(-math.sqrt(5))
        m = KernelSpec("matern-5/2", (4.0,))
        assert kernel_eval(m, [0.0], [4.0]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.52400, abs=1e-5)

    def test_product_separability_on_axis(self):
        m2 = KernelSpec("matern-5/2", (4.0, 7.0))
        m1 = KernelSpec("matern-5/2", (4.0,))
        assert kernel_eval(m2, [0.0, 1.0], [2.5, 1.0]) == pytest.approx(kernel_eval(m1, [0.0], [2.5]), abs=1e-14)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 5, size=(8, 2))
        for spec in (KernelSpec("squared-exponential", (1.5, 2.5)), KernelSpec("matern-5/2", (1.0, 3.0))):
            mat = kernel_matrix(spec, pts)
            np.testing.assert_array_equal(mat, mat.T)

    def test_squared_exponential_form(self):
        assert kernel_eval(SE_10, [0.0], [10.0]) == pytest.approx(math.exp(-0.5), abs=1e-14)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            KernelSpec("exponential", (1.0,))


class TestKLDecompose:
    def test_eigenvalues_nonincreasing(self):
        mesh = bar_mesh(100.0, 60)
        kl = kl_decompose(SE_10, mesh.centroids, 1e-6, weights=mesh.measures)
        assert np.all(np.diff(kl.eigenvalues) <= 1e-12)
        assert np.all(kl.eigenvalues >= 0)

    def test_eigenvectors_orthonormal_in_weighted_product(self):
        mesh = bar_mesh(100.0, 80)
        kl = kl_decompose(SE_10, mesh.centroids, 1e-6, weights=mesh.measures)
        gram = kl.eigenvectors.T @ (mesh.measures[:, None] * kl.eigenvectors)
        np.testing.assert_allclose(gram, np.eye(kl.M), atol=1e-8)

    def test_epsilon_near_one_keeps_single_mode(self):
        mesh = bar_mesh(100.0, 50)
        kl = kl_decompose(SE_10, mesh.centroids, 0.999999, weights=mesh.measures)
        assert kl.M == 1

    def test_explicit_mode_count(self):
        mesh = bar_mesh(100.0, 50)
        kl = kl_decompose(SE_10, mesh.centroids, 0.001, weights=mesh.measures, n_modes=7)
        assert kl.M == 7

    def test_mercer_reconstruction(self):
        mesh = bar_mesh(100.0, 100)
        kl = kl_decompose(SE_10, mesh.centroids, 1e-6, weights=mesh.measures)
        corr = kernel_matrix(SE_10, mesh.centroids)
        approx = (kl.eigenvectors * kl.eigenvalues[None, :]) @ kl.eigenvectors.T
        assert np.linalg.norm(corr - approx) / np.linalg.norm(corr) <= 1e-3

    def test_count_matches_independent_nystrom_oracle(self):
        # oracle: dense Gauss-Legendre Nystrom discretization of the same
        # Fredholm problem, far finer than the mesh
        xg, wg = np.polynomial.legendre.leggauss(400)
        x = 50.0 * (xg + 1.0)
        w = 50.0 * wg
        d = np.abs(x[:, None] - x[None, :])
        sw = np.sqrt(w)
        lam = np.linalg.eigvalsh(sw[:, None] * np.exp(-0.5 * (d / 10.0) ** 2) * sw[None, :])[::-1]
        lam = np.clip(lam, 0.0, None)
        share = np.cumsum(lam) / lam.sum()
        oracle_m = int(np.searchsorted(share, 1 - 0.001, side="right")) + 1

        mesh = bar_mesh(100.0, 100)
        kl = kl_decompose(SE_10, mesh.centroids, 0.001, weights=mesh.measures)
        assert kl.M == oracle_m == 12

    def test_plate_matern_count(self):
        mesh, _ = plate_hole_mesh()
        kl = kl_decompose(KernelSpec("matern-5/2", (0.16, 0.16)), mesh.centroids, 0.001, weights=mesh.measures)
        assert kl.M == 24

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            kl_decompose(SE_10, np.array([1.0]), 0.001)


class TestFieldRealize:
    def test_zero_germ_gives_mean(self):
        mesh = bar_mesh(100.0, 40)
        link = lognormal_link(200.0, 40.0)
        kl = kl_decompose(SE_10, mesh.centroids, 0.001, weights=mesh.measures)
        kappa, youngs = field_realize(kl, link, np.zeros(kl.M))
        np.testing.assert_allclose(kappa, link.mu_kappa, atol=1e-15)
        np.testing.assert_allclose(youngs, math.exp(link.mu_kappa), rtol=1e-15)

    def test_pointwise_variance_against_monte_carlo(self):
        mesh = bar_mesh(100.0, 40)
        link = lognormal_link(200.0, 40.0)
        kl = kl_decompose(SE_10, mesh.centroids, 1e-4, weights=mesh.measures)
        rng = np.random.default_rng(17)
        draws = rng.standard_normal((100_000, kl.M))
        kappas = link.mu_kappa + link.sigma_kappa * draws @ (np.sqrt(kl.eigenvalues)[:, None] * kl.eigenvectors.T)
        mc_var = kappas.var(axis=0)
        expected = link.sigma_kappa**2 * np.sum(kl.eigenvalues[None, :] * kl.eigenvectors**2, axis=1)
        np.testing.assert_allclose(mc_var, expected, rtol=0.05)

    def test_realizations_strictly_positive(self):
        mesh = bar_mesh(100.0, 30)
        link = lognormal_link(200.0, 40.0)
        kl = kl_decompose(SE_10, mesh.centroids, 0.001, weights=mesh.measures)
        rng = np.random.default_rng(23)
        for _ in range(20):
            _, youngs = field_realize(kl, link, rng.standard_normal(kl.M) * 3.0)
            assert np.all(youngs > 0)

    def test_dimension_mismatch(self):
        mesh = bar_mesh(100.0, 30)
        link = lognormal_link(200.0, 40.0)
        kl = kl_decompose(SE_10, mesh.centroids, 0.001, weights=mesh.measures)
        with pytest.raises(ValueError):
            field_realize(kl, link, np.zeros(kl.M + 1))

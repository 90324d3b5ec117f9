"""Hermite basis bookkeeping, projection, moments, and sampling."""

import numpy as np
import pytest

from chaosfem.pce import PCField, basis_matrix, build_basis, hermite_eval, pc_moments, pc_sample, project
from chaosfem.quadrature import smolyak


class TestBuildBasis:
    def test_univariate_order_two(self):
        b = build_basis(1, 2)
        assert len(b) == 3
        assert b.multi_indices.tolist() == [[0], [1], [2]]
        np.testing.assert_allclose(b.norms, [1.0, 1.0, 2.0])

    def test_paper_scale_counts(self):
        assert len(build_basis(10, 2)) == 66
        assert len(build_basis(13, 2)) == 105

    def test_graded_lexicographic_order(self):
        b = build_basis(2, 2)
        assert b.multi_indices.tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]

    def test_constant_term_first(self):
        b = build_basis(4, 3)
        assert b.multi_indices[0].tolist() == [0, 0, 0, 0]
        assert b.norms[0] == 1.0

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            build_basis(0, 2)
        with pytest.raises(ValueError):
            build_basis(3, -1)
        with pytest.raises(ValueError):
            build_basis(100, 10)


class TestHermiteEval:
    def test_constant_member(self):
        b = build_basis(3, 2)
        assert hermite_eval(b, 0, [0.3, -1.2, 4.0]) == 1.0

    def test_he2_value(self):
        b = build_basis(1, 2)
        assert hermite_eval(b, 2, [2.0]) == pytest.approx(3.0)  # He_2(2) = 4 - 1

    def test_index_out_of_range(self):
        b = build_basis(1, 2)
        with pytest.raises(ValueError):
            hermite_eval(b, 3, [0.0])

    @pytest.mark.parametrize("dim,order", [(2, 2), (3, 3), (4, 3)])
    def test_orthogonality_by_quadrature(self, dim, order):
        # Gram matrix estimated on a sparse grid must be diag(norms)
        b = build_basis(dim, order)
        g = smolyak(dim, order + 1)  # univariate exactness >= 2*order + 1
        psi = basis_matrix(b, g.nodes)
        gram = psi.T @ (psi * g.weights[:, None])
        np.testing.assert_allclose(gram, np.diag(b.norms), atol=1e-8)


class TestProject:
    def test_constant_model(self):
        b = build_basis(2, 2)
        g = smolyak(2, 3)
        evals = np.full((len(g), 4), 3.25)
        f = project(evals, g, b)
        np.testing.assert_allclose(f.coefficients[:, 0], 3.25, atol=1e-12)
        np.testing.assert_allclose(f.coefficients[:, 1:], 0.0, atol=1e-10)

    def test_recovers_basis_member(self):
        b = build_basis(3, 2)
        g = smolyak(3, 3)
        evals = g.nodes[:, [0]]
        f = project(evals, g, b)
        expected = np.zeros(len(b))
        expected[1] = 1.0  # multi-index (1, 0, 0)
        np.testing.assert_allclose(f.coefficients[0], expected, atol=1e-10)

    def test_lognormal_closed_form(self):
        # u(xi) = exp(s xi) has Hermite coefficients s^k e^{s^2/2} / k!
        s = 0.35
        b = build_basis(1, 2)
        g = smolyak(1, 9)
        evals = np.exp(s * g.nodes)
        f = project(evals, g, b)
        e = np.exp(s**2 / 2.0)
        np.testing.assert_allclose(f.coefficients[0], [e, s * e, s**2 * e / 2.0], rtol=1e-6)

    def test_projection_idempotent_on_polynomials(self):
        rng = np.random.default_rng(5)
        b = build_basis(2, 2)
        g = smolyak(2, 3)
        field = PCField(basis=b, coefficients=rng.standard_normal((5, len(b))))
        evals = pc_sample(field, g.nodes)
        again = project(evals, g, b)
        np.testing.assert_allclose(again.coefficients, field.coefficients, atol=1e-9)

    def test_shape_mismatch(self):
        b = build_basis(2, 2)
        g = smolyak(2, 2)
        with pytest.raises(ValueError):
            project(np.zeros((len(g) + 1, 3)), g, b)


class TestMomentsAndSampling:
    def test_mean_is_column_zero(self):
        rng = np.random.default_rng(11)
        b = build_basis(3, 2)
        f = PCField(basis=b, coefficients=rng.standard_normal((6, len(b))))
        mean, _ = pc_moments(f)
        np.testing.assert_array_equal(mean, f.coefficients[:, 0])

    def test_constant_field_has_zero_covariance(self):
        b = build_basis(2, 1)
        coeffs = np.zeros((4, len(b)))
        coeffs[:, 0] = 2.0
        _, cov = pc_moments(PCField(basis=b, coefficients=coeffs))
        np.testing.assert_array_equal(cov, np.zeros((4, 4)))

    def test_single_linear_column_gives_outer_product(self):
        b = build_basis(2, 1)
        c = np.array([1.0, -2.0, 0.5])
        coeffs = np.zeros((3, len(b)))
        coeffs[:, 1] = c
        _, cov = pc_moments(PCField(basis=b, coefficients=coeffs))
        np.testing.assert_allclose(cov, np.outer(c, c), atol=1e-14)

    def test_moments_match_monte_carlo(self):
        rng = np.random.default_rng(7)
        b = build_basis(3, 2)
        f = PCField(basis=b, coefficients=0.3 * rng.standard_normal((4, len(b))))
        mean, cov = pc_moments(f)
        draws = rng.standard_normal((100_000, 3))
        samples = pc_sample(f, draws)
        mc_cov = np.cov(samples.T)
        assert np.linalg.norm(mc_cov - cov) / np.linalg.norm(cov) < 0.05
        np.testing.assert_allclose(samples.mean(axis=0), mean, atol=5 * samples.std(axis=0).max() / np.sqrt(1e5))

    def test_sample_at_zero_gives_mean_for_linear_expansions(self):
        # He_1(0) = 0, so a p = 1 field evaluated at the zero germ is its
        # mean; for p >= 2 the even terms contribute He_2(0) = -1 etc.
        rng = np.random.default_rng(3)
        b = build_basis(2, 1)
        f = PCField(basis=b, coefficients=rng.standard_normal((5, len(b))))
        np.testing.assert_allclose(pc_sample(f, np.zeros((1, 2)))[0], f.coefficients[:, 0], atol=1e-14)

    def test_sample_matches_direct_basis_evaluation(self):
        rng = np.random.default_rng(8)
        b = build_basis(2, 2)
        f = PCField(basis=b, coefficients=rng.standard_normal((5, len(b))))
        xi = np.array([0.0, 0.0])
        direct = sum(f.coefficients[:, j] * hermite_eval(b, j, xi) for j in range(len(b)))
        np.testing.assert_allclose(pc_sample(f, xi[None, :])[0], direct, atol=1e-13)

    def test_sampling_is_linear_in_coefficients(self):
        rng = np.random.default_rng(9)
        b = build_basis(2, 2)
        coeffs = rng.standard_normal((3, len(b)))
        draws = rng.standard_normal((20, 2))
        a = pc_sample(PCField(basis=b, coefficients=coeffs), draws)
        b2 = pc_sample(PCField(basis=b, coefficients=2.0 * coeffs), draws)
        np.testing.assert_allclose(b2, 2.0 * a, atol=1e-12)

    def test_dimension_mismatch(self):
        b = build_basis(2, 1)
        f = PCField(basis=b, coefficients=np.zeros((2, len(b))))
        with pytest.raises(ValueError):
            pc_sample(f, np.zeros((4, 3)))

"""Marginal-likelihood evaluation, log-sum-exp stability, identification."""

import numpy as np
import pytest
from mpmath import mp, mpf

from chaosfem.errors import NumericalFailure
from chaosfem.hyperopt import (
    Hyperparameters,
    IdentifyConfig,
    NLMLContext,
    identify,
    nlml,
    weighted_log_sum_exp,
)
from chaosfem.quadrature import gauss_hermite


def mp_weighted_lse(values, weights, dps=80):
    """Extended-precision reference for ln sum w exp(y)."""
    mp.dps = dps
    total = mpf(0)
    for y, w in zip(values, weights):
        total += mpf(w) * mp.e**mpf(y)
    return float(mp.log(total))


class TestWeightedLogSumExp:
    def test_single_unit_weight(self):
        assert weighted_log_sum_exp(np.array([3.7]), np.array([1.0])) == pytest.approx(3.7, abs=1e-15)

    def test_equal_values(self):
        w = np.array([0.2, 0.5, 0.3])
        got = weighted_log_sum_exp(np.full(3, -4.2), w)
        assert got == pytest.approx(-4.2 + np.log(w.sum()), abs=1e-14)

    def test_extreme_magnitudes_match_extended_precision(self):
        values = np.array([-10_000.0, -10_001.5, -9_999.25, -10_002.0, -10_000.5])
        weights = np.array([0.3, 0.25, 0.2, 0.15, 0.1])
        got = weighted_log_sum_exp(values, weights)
        ref = mp_weighted_lse(values, weights)
        assert np.isfinite(got)
        assert got == pytest.approx(ref, rel=1e-12)

    def test_negative_weights_supported_when_sum_positive(self):
        values = np.array([0.0, -0.5, -1.0])
        weights = np.array([1.3, -0.2, -0.1])
        got = weighted_log_sum_exp(values, weights)
        ref = mp_weighted_lse(values, weights)
        assert got == pytest.approx(ref, rel=1e-12)

    def test_nonpositive_sum_raises(self):
        with pytest.raises(NumericalFailure):
            weighted_log_sum_exp(np.array([0.0, -1.0]), np.array([-1.0, 0.1]))

    def test_shift_identity(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(-50.0, -40.0, size=12)
        weights = rng.uniform(0.01, 0.2, size=12)
        base = weighted_log_sum_exp(values, weights)
        shifted = weighted_log_sum_exp(values + 11.25, weights)
        assert shifted - base == pytest.approx(11.25, abs=1e-10)


def scalar_context(g_value, y, weights=None, s2=1.0, n_nodes=1):
    """One sensor, optionally several quadrature nodes, no mismatch modes."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    hu = np.full((n_nodes, 1), g_value)
    w = np.ones(n_nodes) / n_nodes if weights is None else np.asarray(weights)
    return NLMLContext(
        hu=hu, weights=w, Y=y, cov_noise=np.array([[s2]]),
        lam=np.zeros(0), phi=np.zeros((1, 0)),
    )


class TestNLML:
    def test_scalar_gaussian_reduction(self):
        # n_sen = 1, one node with g = 0, Sigma = s^2:
        # theta = (n_r/2) ln s^2 + (n_r/2) ln 2 pi + sum_r y_r^2 / (2 s^2)
        y = np.array([[0.4, -1.1, 2.0]])
        s2 = 0.49
        ctx = scalar_context(0.0, y, weights=np.array([1.0]), s2=s2)
        hp = Hyperparameters(rho=1.0, sigma_d=np.zeros(0))
        got = nlml(hp, ctx)
        n_r = 3
        expected = 0.5 * n_r * np.log(s2) + 0.5 * n_r * np.log(2 * np.pi) + float(np.sum(y**2)) / (2 * s2)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_single_node_is_exact_multivariate_gaussian_nll(self):
        # Sigma_d = 0 and one quadrature node: theta equals the exact
        # Gaussian negative log likelihood of Y under N(g, Sigma_e)
        rng = np.random.default_rng(5)
        n_sen, n_r = 4, 6
        g = rng.standard_normal(n_sen)
        cov_e = np.diag(rng.uniform(0.5, 2.0, size=n_sen))
        y = rng.standard_normal((n_sen, n_r))
        ctx = NLMLContext(
            hu=g[None, :], weights=np.array([1.0]), Y=y, cov_noise=cov_e,
            lam=np.zeros(0), phi=np.zeros((n_sen, 0)),
        )
        got = nlml(Hyperparameters(rho=1.0, sigma_d=np.zeros(0)), ctx)

        inv = np.linalg.inv(cov_e)
        quad = sum((y[:, r] - g) @ inv @ (y[:, r] - g) for r in range(n_r))
        expected = 0.5 * n_r * np.log(np.linalg.det(cov_e)) + 0.5 * n_sen * n_r * np.log(2 * np.pi) + 0.5 * quad
        assert got == pytest.approx(expected, rel=1e-12)

    def test_replication_permutation_invariance(self):
        rng = np.random.default_rng(6)
        r = gauss_hermite(7)
        hu = np.tanh(r.nodes)[:, None]
        y = rng.standard_normal((1, 9))
        ctx = NLMLContext(hu=hu, weights=r.weights, Y=y, cov_noise=np.array([[0.3]]),
                          lam=np.zeros(0), phi=np.zeros((1, 0)))
        ctx_perm = NLMLContext(hu=hu, weights=r.weights, Y=y[:, ::-1], cov_noise=np.array([[0.3]]),
                               lam=np.zeros(0), phi=np.zeros((1, 0)))
        hp = Hyperparameters(rho=1.3, sigma_d=np.zeros(0))
        assert nlml(hp, ctx) == pytest.approx(nlml(hp, ctx_perm), rel=1e-13)

    def test_mismatch_covariance_enters(self):
        sensors = np.linspace(10, 90, 5)
        from chaosfem.randomfield import KernelSpec, kl_decompose
        kl = kl_decompose(KernelSpec("squared-exponential", (30.0,)), sensors, 1e-12, n_modes=2)
        rng = np.random.default_rng(7)
        y = rng.standard_normal((5, 4))
        ctx = NLMLContext(hu=np.zeros((1, 5)), weights=np.array([1.0]), Y=y,
                          cov_noise=0.2 * np.eye(5), lam=kl.eigenvalues, phi=kl.eigenvectors)
        t0 = nlml(Hyperparameters(rho=1.0, sigma_d=np.zeros(2)), ctx)
        t1 = nlml(Hyperparameters(rho=1.0, sigma_d=np.array([5.0, 5.0])), ctx)
        assert t0 != pytest.approx(t1, rel=1e-6)


class TestIdentify:
    def test_null_mismatch_recovery(self):
        # data generated without any mismatch: identified deviations must
        # collapse well below the noise level.  The estimator honestly
        # reports covariance sampling excess at finite n_r, so realize the
        # large-n_r limit by whitening the residuals: empirical mean and
        # covariance then match the noise model exactly.
        rng = np.random.default_rng(11)
        sensors = np.linspace(10, 90, 5)
        from chaosfem.randomfield import KernelSpec, kl_decompose
        kl = kl_decompose(KernelSpec("squared-exponential", (40.0,)), sensors, 1e-12, n_modes=2)
        noise = 0.1
        truth = np.linspace(1.0, 3.0, 5)
        n_r = 2000
        resid = rng.standard_normal((5, n_r))
        resid -= resid.mean(axis=1, keepdims=True)
        chol = np.linalg.cholesky(resid @ resid.T / n_r)
        resid = noise * np.linalg.solve(chol, resid)
        y = truth[:, None] + resid
        r = gauss_hermite(9)
        hu = truth[None, :] * (1.0 + 0.05 * r.nodes[:, None])
        ctx = NLMLContext(hu=hu, weights=r.weights, Y=y, cov_noise=noise**2 * np.eye(5),
                          lam=kl.eigenvalues, phi=kl.eigenvectors)
        hp, report = identify(ctx, IdentifyConfig(n_starts=4, max_iterations=600))
        assert np.all(hp.sigma_d < 0.05 * noise)
        ref = nlml(Hyperparameters(rho=hp.rho, sigma_d=np.zeros(2)), ctx)
        assert report.theta <= ref + 1e-3

    def test_trace_is_monotone_nonincreasing(self):
        rng = np.random.default_rng(12)
        sensors = np.linspace(10, 90, 4)
        from chaosfem.randomfield import KernelSpec, kl_decompose
        kl = kl_decompose(KernelSpec("squared-exponential", (40.0,)), sensors, 1e-12, n_modes=1)
        y = rng.standard_normal((4, 10))
        r = gauss_hermite(5)
        ctx = NLMLContext(hu=np.outer(r.nodes, np.ones(4)), weights=r.weights, Y=y,
                          cov_noise=0.5 * np.eye(4), lam=kl.eigenvalues, phi=kl.eigenvectors)
        _, report = identify(ctx, IdentifyConfig(n_starts=2, max_iterations=200))
        trace = np.array([t for t in report.trace if np.isfinite(t)])
        assert np.all(np.diff(trace) <= 0.0 + 1e-15)

    def test_log_space_matches_direct_space_on_convex_problem(self):
        # the reparameterization (optimizing ln sigma) must find the same
        # optimum as a direct search on a smooth convex bowl
        import scipy.optimize

        target = 3.0
        f_direct = lambda s: (s[0] - target) ** 2
        f_log = lambda x: (np.exp(x[0]) - target) ** 2
        r1 = scipy.optimize.minimize(f_direct, [1.0], method="Nelder-Mead",
                                     options={"fatol": 1e-12, "xatol": 1e-12})
        r2 = scipy.optimize.minimize(f_log, [0.0], method="Nelder-Mead",
                                     options={"fatol": 1e-12, "xatol": 1e-12})
        assert np.exp(r2.x[0]) == pytest.approx(r1.x[0], abs=1e-5)

    def test_all_starts_failing_raises(self):
        from chaosfem.errors import OptimizationFailure
        # weights guaranteed to break the log-sum-exp everywhere
        ctx = NLMLContext(hu=np.array([[0.0], [0.0]]), weights=np.array([-1.0, -0.5]),
                          Y=np.array([[1.0]]), cov_noise=np.eye(1),
                          lam=np.zeros(0), phi=np.zeros((1, 0)))
        with pytest.raises(OptimizationFailure):
            identify(ctx, IdentifyConfig(n_starts=2, max_iterations=50))

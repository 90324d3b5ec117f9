"""Hyperparameter identification by marginal-likelihood maximization.

The negative log marginal likelihood of the data Y under the surrogate
g(xi) = rho * H * u_h(xi) with Gaussian mismatch-plus-noise covariance
Sigma_de(sigma_d) is

    theta(w) = (n_r/2) ln det Sigma_de + (n_sen n_r / 2) ln 2 pi
               - ln sum_n w_n exp(y*_n),

    y*_n = -(1/2) sum_r (y_r - g(xi_n))^T Sigma_de^{-1} (y_r - g(xi_n)),

where the sum over quadrature nodes n realizes the integral over the germ.
The log-sum-exp is shifted by max_n y*_n for stability; Sigma_de is
factorized once per hyperparameter vector by Cholesky.  Minimization runs
a Nelder-Mead simplex over (ln rho, ln sigma_d) with multi-starts and
warm-restart chaining.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import NumericalFailure, OptimizationFailure


@dataclass(frozen=True)
class Hyperparameters:
    """Scale rho and per-mode mismatch deviations for one component."""

    rho: float
    sigma_d: np.ndarray

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if np.any(np.asarray(self.sigma_d) < 0):
            raise ValueError("sigma_d entries must be nonnegative")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.rho], np.asarray(self.sigma_d, dtype=float)])


@dataclass(frozen=True)
class NLMLContext:
    """Everything theta(w) needs that does not depend on w.

    `hu` caches H @ u_h(xi_n) for every grid node (pre-rho, so rho enters
    as a scalar at evaluation time); `lam`/`phi` are the mismatch
    eigenpairs at the sensors so Sigma_d(sigma_d) = phi diag(sigma^2 lam)
    phi^T is reassembled per evaluation.
    """

    hu: np.ndarray        # (n_gl, n_sen)
    weights: np.ndarray   # (n_gl,)
    Y: np.ndarray         # (n_sen, n_r)
    cov_noise: np.ndarray # (n_sen, n_sen)
    lam: np.ndarray       # (M_d,)
    phi: np.ndarray       # (n_sen, M_d)

    def __post_init__(self):
        if self.hu.shape[0] != self.weights.size:
            raise ValueError("node cache and weights disagree on the grid size")
        if self.hu.shape[1] != self.Y.shape[0]:
            raise ValueError("node cache and data disagree on the sensor count")

    @property
    def n_rep(self) -> int:
        return self.Y.shape[1]

    @property
    def m_d(self) -> int:
        return self.lam.size


def weighted_log_sum_exp(values: np.ndarray, weights: np.ndarray) -> float:
    """ln sum_n w_n exp(y_n), shifted by max(y) for stability.

    Weights may be negative (Smolyak); if the shifted sum is nonpositive
    the logarithm is undefined and a NumericalFailure is raised.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    finite = np.isfinite(values)
    if not finite.any():
        raise ValueError("log-sum-exp needs at least one finite value")
    y_max = values[finite].max()
    terms = np.where(finite, weights * np.exp(np.where(finite, values, -np.inf) - y_max), 0.0)
    total = terms.sum()
    if total <= 0.0:
        raise NumericalFailure(
            f"log-sum-exp argument is nonpositive ({total:.3e}); "
            "negative quadrature weights dominate at this hyperparameter"
        )
    return float(y_max + np.log(total))


def nlml(hp: Hyperparameters, ctx: NLMLContext) -> float:
    """Negative log marginal likelihood theta(w) for one component."""
    sigma_d = np.asarray(hp.sigma_d, dtype=float)
    if sigma_d.shape != (ctx.m_d,):
        raise ValueError(f"expected {ctx.m_d} mismatch deviations, got {sigma_d.shape}")
    cov = ctx.cov_noise.copy()
    if ctx.m_d:
        cov += (ctx.phi * (sigma_d**2 * ctx.lam)[None, :]) @ ctx.phi.T
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)):
        raise NumericalFailure("mismatch-plus-noise covariance overflowed to non-finite values")
    try:
        chol = scipy.linalg.cholesky(cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalFailure(f"mismatch-plus-noise covariance is not positive definite: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))

    a = scipy.linalg.solve_triangular(chol, ctx.Y, lower=True)            # (n_sen, n_r)
    b = scipy.linalg.solve_triangular(chol, hp.rho * ctx.hu.T, lower=True)  # (n_sen, n_gl)
    data_ss = float(np.sum(a * a))
    cross = b.T @ a.sum(axis=1)
    node_ss = np.sum(b * b, axis=0)
    y_star = -0.5 * (data_ss - 2.0 * cross + ctx.n_rep * node_ss)

    n_sen, n_rep = ctx.Y.shape
    lse = weighted_log_sum_exp(y_star, ctx.weights)
    return 0.5 * n_rep * logdet + 0.5 * n_sen * n_rep * np.log(2.0 * np.pi) - lse


@dataclass
class IdentifyConfig:
    """Optimizer settings for the hyperparameter search."""

    n_starts: int = 8
    max_iterations: int = 2000
    tolerance: float = 1e-8
    rho_starts: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    sigma_scale_starts: tuple[float, ...] = (0.3, 3.0)
    max_chain: int = 3
    sigma_floor: float = 1e-8


@dataclass
class IdentifyReport:
    """Per-component search diagnostics."""

    theta: float
    iterations: int
    n_evaluations: int
    starts: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    lse_failures: int = 0


def identify(ctx: NLMLContext, config: IdentifyConfig | None = None) -> tuple[Hyperparameters, IdentifyReport]:
    """Minimize theta over (ln rho, ln sigma_d) with multi-start Nelder-Mead.

    Each start runs a full simplex search; the best optimum then seeds
    warm-restart chains until no further improvement.  Evaluations where
    the log-sum-exp breaks down count as infeasible (+inf).
    """
    if config is None:
        config = IdentifyConfig()
    report = IdentifyReport(theta=np.inf, iterations=0, n_evaluations=0)

    def objective(x: np.ndarray) -> float:
        report.n_evaluations += 1
        hp = Hyperparameters(rho=float(np.exp(x[0])), sigma_d=np.exp(x[1:]))
        try:
            value = nlml(hp, ctx)
        except NumericalFailure:
            report.lse_failures += 1
            value = np.inf
        best = min(value, report.trace[-1]) if report.trace else value
        report.trace.append(best)
        return value

    # data-driven deviation scale: pooled residual std across replications,
    # falling back to the noise level for a single reading
    if ctx.n_rep > 1:
        scale = float(np.sqrt(np.mean(np.var(ctx.Y, axis=1, ddof=1))))
    else:
        scale = 0.0
    if not np.isfinite(scale) or scale <= 0:
        scale = float(np.sqrt(np.mean(np.diag(ctx.cov_noise))))
    scale = max(scale, config.sigma_floor)

    starts = []
    for rho0 in config.rho_starts:
        for c in config.sigma_scale_starts:
            starts.append(np.concatenate([[np.log(rho0)], np.full(ctx.m_d, np.log(scale * c))]))
    starts = starts[: config.n_starts]

    best_x = None
    best_f = np.inf
    options = {
        "maxiter": config.max_iterations,
        "fatol": config.tolerance,
        "xatol": 1e-8,
        "adaptive": ctx.m_d >= 8,
    }

    def run(x0, label):
        nonlocal best_x, best_f
        with warnings.catch_warnings():
            # infeasible (+inf) evaluations make the simplex bookkeeping
            # emit inf-inf RuntimeWarnings; they are handled correctly
            warnings.simplefilter("ignore", RuntimeWarning)
            res = scipy.optimize.minimize(objective, x0, method="Nelder-Mead", options=options)
        entry = {
            "start": label,
            "theta": float(res.fun) if np.isfinite(res.fun) else None,
            "iterations": int(res.nit),
            "converged": bool(res.success),
        }
        report.starts.append(entry)
        report.iterations += int(res.nit)
        if np.isfinite(res.fun) and res.fun < best_f:
            best_f = float(res.fun)
            best_x = res.x.copy()

    for i, x0 in enumerate(starts):
        run(x0, f"start-{i}")
    if best_x is None:
        raise OptimizationFailure(
            f"all {len(starts)} starts failed; {report.lse_failures} log-sum-exp breakdowns; "
            f"per-start diagnostics: {report.starts}"
        )
    # warm-restart chaining from the incumbent optimum
    for chain in range(config.max_chain):
        prev = best_f
        run(best_x, f"chain-{chain}")
        if prev - best_f <= config.tolerance:
            break

    report.theta = best_f
    hp = Hyperparameters(rho=float(np.exp(best_x[0])), sigma_d=np.exp(best_x[1:]))
    return hp, report

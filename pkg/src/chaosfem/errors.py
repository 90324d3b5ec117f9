"""Failure types shared across the package.

Invalid arguments raise plain ValueError; these classes cover runtime
failures of the numerics themselves so callers (and the CLI exit codes)
can tell the two apart.
"""


class NumericalFailure(RuntimeError):
    """A linear-algebra or quadrature step broke down (singular matrix,
    non-convergent Newton loop, nonpositive log-sum-exp argument, ...)."""


class OptimizationFailure(RuntimeError):
    """Every start of a hyperparameter search failed to produce a finite
    optimum."""

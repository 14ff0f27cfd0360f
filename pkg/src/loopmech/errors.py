"""Exception types shared across the package.

Validation problems (bad parameters, non-physical inputs, regimes where a
quantity is undefined) raise ``ValueError`` subclasses; failures of the
numerics themselves (non-convergence, residues above tolerance) raise
``NumericalError``.  The command line maps the former to exit code 2 and the
latter to exit code 3.
"""

__all__ = [
    "NumericalError",
    "NonPhysicalStateError",
    "DegenerateAngleError",
    "UnstableModeError",
]


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or lost accuracy."""


class NonPhysicalStateError(ValueError):
    """A covariance matrix violates the uncertainty principle."""


class DegenerateAngleError(ValueError):
    """The optimal analyzer angle is undefined (sin(theta) = 0)."""


class UnstableModeError(ValueError):
    """An operation requiring stable joint modes hit an unstable one."""

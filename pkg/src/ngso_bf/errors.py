"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario, training or CLI configuration."""


class NumericalError(ArithmeticError):
    """A computation could not be carried out reliably."""


class DegenerateGeometryError(NumericalError):
    """Desired channel lies (numerically) inside the interference subspace."""


class ConditioningError(NumericalError):
    """Covariance matrix is singular or not positive definite."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss or gradient."""

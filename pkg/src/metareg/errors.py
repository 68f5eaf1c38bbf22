"""Exception hierarchy. Exit codes: 1 usage, 2 data, 3 numerical."""


class MetaregError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class UsageError(MetaregError):
    """Bad command-line arguments or option combinations."""

    exit_code = 1


class DataError(MetaregError):
    """Invalid input data, configuration, or model specification."""

    exit_code = 2


class InsufficientStudiesError(DataError):
    """Fewer retained studies than needed for the requested model."""

    def __init__(self, k, p):
        self.k = k
        self.p = p
        super().__init__(
            f"model needs more studies than coefficients: k={k} studies "
            f"retained, p={p} coefficients (k must exceed p)"
        )


class NumericalError(MetaregError):
    """Numerical failure during estimation."""

    exit_code = 3


class SingularDesignError(NumericalError):
    """Weighted normal equations are rank deficient or ill conditioned."""

    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        super().__init__(message)


class NonConvergenceError(NumericalError):
    """Variance estimation failed to converge; carries the last iterate."""

    def __init__(self, message, last_tau2):
        self.last_tau2 = last_tau2
        super().__init__(message)

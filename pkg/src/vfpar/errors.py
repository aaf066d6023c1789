"""Exception types raised by vfpar."""


class VfpError(Exception):
    """Base class for all vfpar errors."""


class PoolFormatError(VfpError, ValueError):
    """A pool file or pool object violates the pool layout."""


class OutOfRangeError(VfpError, ValueError):
    """A flight state lies outside the basis normalization ranges."""

    def __init__(self, variable, value, lo, hi):
        self.variable = variable
        self.value = value
        self.bounds = (lo, hi)
        super().__init__(
            f"{variable}={value!r} outside normalization range [{lo!r}, {hi!r}]"
        )


class NumericalError(VfpError, ArithmeticError):
    """Base class for failures of the numerical core."""


class DegenerateInputError(NumericalError):
    """Input data cannot support the requested estimate (e.g. zero signal)."""


class RankDeficiencyError(NumericalError):
    """Regressor matrix is not of full column rank."""

    def __init__(self, columns, message=None):
        self.columns = list(columns)
        super().__init__(
            message or f"regressor matrix rank deficient; dependent columns {self.columns}"
        )


class UnstableModelError(NumericalError):
    """One or more frozen AR polynomials have roots on or outside the unit circle."""

    def __init__(self, states):
        self.states = list(states)
        listed = ", ".join(f"(k1={s.k1:g}, k2={s.k2:g})" for s in self.states)
        super().__init__(f"unstable frozen model at states: {listed}")

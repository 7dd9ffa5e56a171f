"""Exception hierarchy shared by the solver, representation and CLI layers."""


class PsiError(Exception):
    """Base class for every error raised by :mod:`psirep`."""

    code = "PSI_ERROR"


class ConfigError(PsiError, ValueError):
    code = "CONFIG_INVALID"


class InvalidWeights(ConfigError):
    code = "CONFIG_INVALID_WEIGHTS"


class NumericalError(PsiError, ArithmeticError):
    """A solver or construction step failed on numerical grounds."""

    code = "NUMERIC_ERROR"


class BracketNotFound(NumericalError):
    code = "SOLVER_BRACKET_NOT_FOUND"


class NotSignChanging(NumericalError):
    """The function vanishes or changes sign more than once near the located point."""

    code = "SOLVER_NOT_SIGN_CHANGING"


class NonFiniteEvaluation(NumericalError):
    code = "SOLVER_NON_FINITE"

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DomainEmpty(NumericalError):
    code = "DOMAIN_EMPTY"


class DivisionNearZero(NumericalError):
    code = "DIVISION_NEAR_ZERO"

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class AtTheta1(NumericalError):
    code = "AT_THETA1"


class RichnessViolated(NumericalError):
    """No family member lies on one side of a grid point."""

    code = "RICHNESS_VIOLATED"

    def __init__(self, t, side):
        super().__init__(f"no family member with theta1 {side} t={t!r}")
        self.t = t
        self.side = side


class EnvelopeOrderViolated(NumericalError):
    code = "ENVELOPE_ORDER_VIOLATED"

    def __init__(self, t, q_lower, q_upper):
        super().__init__(f"q_lower={q_lower!r} exceeds q_upper={q_upper!r} at t={t!r}")
        self.t = t
        self.q_lower = q_lower
        self.q_upper = q_upper


class TauOutsideGrid(ConfigError):
    code = "CONFIG_TAU_OUTSIDE_GRID"


class OutsideGridSpan(NumericalError):
    code = "OUTSIDE_GRID_SPAN"

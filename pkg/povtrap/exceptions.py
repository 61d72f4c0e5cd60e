from __future__ import annotations


class PovtrapError(Exception):
    """Base error. ``code`` doubles as the process exit status of the CLI."""

    code = 1

    def __init__(self, message: str, data: dict | None = None):
        super().__init__(message)
        self.message = message
        self.data = data or {}


class ValidationError(PovtrapError):
    code = 2

    def __init__(self, message: str, key: str | None = None, data: dict | None = None):
        super().__init__(message, data)
        self.key = key


class NumericalError(PovtrapError):
    code = 3


class PoleError(NumericalError):
    pass


class DomainError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class ProbabilityRangeError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    def __init__(self, message: str, condition: float, data: dict | None = None):
        super().__init__(f"{message} (condition number {condition:.3e})", data)
        self.condition = condition


class NoBracketError(NumericalError):
    def __init__(self, message: str, p_lo: float, p_hi: float, target: float):
        super().__init__(
            f"{message}: probability {p_lo:.6g} at lower bound, {p_hi:.6g} at upper"
            f" bound, target {target:.6g}",
            {"p_lo": p_lo, "p_hi": p_hi, "target": target},
        )
        self.p_lo = p_lo
        self.p_hi = p_hi
        self.target = target


class NonMonotoneError(NumericalError):
    pass

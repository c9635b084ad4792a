"""
Custom exceptions for the bellpol toolkit.

Provides domain-specific exceptions with consistent error codes and the
process exit code the CLI should use when one escapes a command.
"""

from typing import Any, Optional


class BellPolError(Exception):
    """Base exception for all bellpol errors."""

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Any = None,
        exit_code: int = 2
    ):
        self.message = message
        self.error_code = error_code or "BELLPOL_ERROR"
        self.details = details
        self.exit_code = exit_code
        super().__init__(self.message)


class InvalidArgumentError(BellPolError):
    """Raised when an argument is outside its documented domain."""

    def __init__(self, message: str = "Invalid argument", details: Any = None):
        super().__init__(
            message=message,
            error_code="INVALID_ARGUMENT",
            details=details,
        )


class UnsupportedOrderError(BellPolError):
    """Raised when a moment order exceeds the configured maximum."""

    def __init__(self, order: int, maximum: int):
        super().__init__(
            message=f"Moment order {order} exceeds configured maximum {maximum}",
            error_code="UNSUPPORTED_ORDER",
            details={"order": order, "maximum": maximum},
        )


class UnphysicalStateError(BellPolError):
    """Raised when second moments do not describe a physical state."""

    def __init__(self, min_eigenvalue: float, tolerance: float):
        super().__init__(
            message=f"Second-moment matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})",
            error_code="UNPHYSICAL_STATE",
            details={"min_eigenvalue": min_eigenvalue, "tolerance": tolerance},
        )


class TruncationError(BellPolError):
    """Raised when a truncated Fock state loses too much norm."""

    def __init__(self, eps_trunc: float, bound: float, cutoff: int):
        self.eps_trunc = eps_trunc
        super().__init__(
            message=f"Truncation error {eps_trunc:.3e} exceeds bound {bound:.1e} at cutoff {cutoff}",
            error_code="TRUNCATION",
            details={"eps_trunc": eps_trunc, "bound": bound, "cutoff": cutoff},
        )


class CutoffLeakageError(BellPolError):
    """Raised when a transformation leaks norm above the Fock cutoff."""

    def __init__(self, leakage: float, bound: float):
        super().__init__(
            message=f"Norm leakage {leakage:.3e} exceeds bound {bound:.1e}",
            error_code="CUTOFF_LEAKAGE",
            details={"leakage": leakage, "bound": bound},
        )


class InsufficientPulsesError(BellPolError):
    """Raised when a batch is too short for the requested estimates."""

    def __init__(self, pulses: int, required: int, order: int):
        super().__init__(
            message=f"{pulses} pulses are not enough for order-{order} estimates (need {required})",
            error_code="INSUFFICIENT_PULSES",
            details={"pulses": pulses, "required": required, "order": order},
        )


class UndefinedDPError(BellPolError):
    """Raised when a degree of polarization is 0/0."""

    def __init__(self, order: int, message: str = None):
        self.order = order
        super().__init__(
            message=message or f"Degree of polarization of order {order} is undefined (sup + inf = 0)",
            error_code="UNDEFINED_DP",
            details={"order": order},
        )


class UnidentifiableParametersError(BellPolError):
    """Raised when fit data cannot determine both eta and N."""

    def __init__(self, message: str = "Jacobian is rank deficient; eta and N are not identifiable", details: Any = None):
        super().__init__(
            message=message,
            error_code="UNIDENTIFIABLE_PARAMETERS",
            details=details,
        )


class ConfigError(BellPolError):
    """Raised when a run configuration fails validation."""

    def __init__(self, message: str, errors: list = None):
        super().__init__(
            message=message,
            error_code="CONFIG_INVALID",
            details={"errors": errors or []},
            exit_code=2
        )


class DataParseError(BellPolError):
    """Raised when an input data file cannot be parsed."""

    def __init__(self, message: str, rows: list = None):
        super().__init__(
            message=message,
            error_code="DATA_PARSE",
            details={"rows": rows or []},
            exit_code=2
        )


class ValidationFailedError(BellPolError):
    """Raised when one or more validation suites fail."""

    def __init__(self, failed: list, results: list = None):
        details = {"failed": failed}
        if results is not None:
            details["suites"] = results
        super().__init__(
            message=f"Validation failed: {', '.join(failed)}",
            error_code="VALIDATION_FAILED",
            details=details,
            exit_code=1
        )

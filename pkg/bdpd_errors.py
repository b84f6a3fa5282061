"""
Error types for the BDPD toolkit
Every failure raised by the estimation modules derives from BdpdError so the
command-line front end can map it onto an exit status.
"""

from typing import Any, List, Optional


class BdpdError(Exception):
    """Base class for all toolkit errors"""


class ParameterDomainError(BdpdError):
    """A parameter coordinate lies outside the family's open domain"""

    def __init__(self, coordinate: str, value: float):
        self.coordinate = coordinate
        self.value = value
        super().__init__(f"Parameter '{coordinate}' = {value!r} is outside its domain")


class SupportError(BdpdError):
    """An observation lies outside the support of the model family"""

    def __init__(self, x: float, family_name: str = ""):
        self.x = x
        super().__init__(f"Observation {x!r} is outside the support of {family_name or 'the family'}")


class QuadratureError(BdpdError):
    """Adaptive quadrature could not reach the requested tolerance"""

    def __init__(self, achieved: float, requested: float, message: str = ""):
        self.achieved = achieved
        self.requested = requested
        super().__init__(
            f"Quadrature did not converge: estimated error {achieved:.3e} "
            f"(requested {requested:.3e}) {message}".strip()
        )


class UnsupportedInputError(BdpdError):
    """The requested computation is not defined for the given inputs"""


class InvalidInputError(BdpdError):
    """Malformed grids, matrices or specifications"""


class StartRejectedError(BdpdError):
    """The objective is not finite at the requested starting point"""

    def __init__(self, start: Any, value: float):
        self.start = start
        self.value = value
        super().__init__(f"Start {start!r} rejected: objective is {value!r}")


class GlobalSearchFailedError(BdpdError):
    """No multistart start produced a converged local minimum"""

    def __init__(self, diagnostics: List[dict]):
        self.diagnostics = diagnostics
        super().__init__(f"Global search failed: none of {len(diagnostics)} starts converged")


class ChainBrokenError(BdpdError):
    """A chain step failed to converge; carries the path computed so far"""

    def __init__(self, partial_path: Any, failed_lambda: float, reason: str = ""):
        self.partial_path = partial_path
        self.failed_lambda = failed_lambda
        super().__init__(f"Chain broken at lambda={failed_lambda:g}: {reason}".rstrip(": "))


class SingularInformationError(BdpdError):
    """The J matrix of the sandwich is numerically singular"""

    def __init__(self, condition_number: float):
        self.condition_number = condition_number
        super().__init__(f"J matrix is numerically singular (condition number {condition_number:.3e})")


class DataFormatError(BdpdError):
    """A data file could not be parsed"""

    def __init__(self, path: str, line: Optional[int], message: str):
        self.path = path
        self.line = line
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}")


# Failures of the numerics rather than of the user's input
NUMERICAL_FAILURES = (
    QuadratureError,
    StartRejectedError,
    GlobalSearchFailedError,
    ChainBrokenError,
    SingularInformationError,
)

# Failures caused by what the user asked for
USAGE_FAILURES = (
    DataFormatError,
    InvalidInputError,
    UnsupportedInputError,
    ParameterDomainError,
    SupportError,
)

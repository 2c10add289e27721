from typing import List, Optional


class LabError(Exception):
    """Base error. Carries the process exit code the CLI turns it into."""

    exit_code = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ShapeError(LabError):
    pass


class InterpolationError(LabError):
    pass


class InvalidMeasureError(LabError):
    pass


class MetricDomainError(LabError):
    pass


class UnsupportedVariantError(LabError):
    pass


class ConfigurationError(LabError):
    pass


class SolutionFileError(LabError):
    pass


class SpecRejectedError(LabError):
    exit_code = 2


class NonContractionError(LabError):
    exit_code = 3

    def __init__(self, detail: str, history: Optional[List[float]] = None):
        super().__init__(detail)
        self.history = list(history or [])


class MonotonicityViolationError(LabError):
    exit_code = 3

    def __init__(self, detail: str, gap: float = 0.0):
        super().__init__(detail)
        self.gap = gap


class NonConvergenceError(LabError):
    exit_code = 3

    def __init__(
        self,
        detail: str,
        residuals: Optional[List[float]] = None,
        stage: Optional[float] = None,
        partial=None,
    ):
        super().__init__(detail)
        self.residuals = list(residuals or [])
        self.stage = stage
        # last iterate, so callers can still write a report
        self.partial = partial

"""Exception types shared across the package."""


class FuelGapError(Exception):
    """Base class for all errors raised by fuelgap."""


class ParseError(FuelGapError):
    """Malformed input data. Carries the 1-based data row number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class SpecError(FuelGapError):
    """Invalid model specification, or a spec that does not match the data."""


class DegenerateDataError(FuelGapError):
    """Data too small or too degenerate for the requested computation."""


class EstimationError(FuelGapError):
    """Numerical failure during estimation (rank deficiency, non-PD covariance)."""

"""Exception taxonomy shared across the package.

Errors fall into three buckets that the CLI maps to exit codes:
usage problems (argparse, exit 2), data problems (exit 3), and
numeric/configuration problems (exit 4).
"""

from __future__ import annotations


class FlowcastError(Exception):
    """Base class for all package-specific errors."""


class ParseError(FlowcastError):
    """A CSV row or evidence string could not be interpreted."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GapError(FlowcastError):
    """A monthly series is missing one or more interior months."""

    def __init__(self, province: str, stream: str, missing: str):
        self.province = province
        self.stream = stream
        self.missing = missing
        super().__init__(
            f"series ({province}, {stream}) has a gap: month {missing} is missing"
        )


class RangeError(FlowcastError):
    """A requested window falls outside the span a series covers."""


class ShapeError(FlowcastError):
    """Tensor operands have incompatible shapes for an operation."""


class ConfigError(FlowcastError):
    """A configuration value is invalid or a required input is absent."""


class FitError(FlowcastError):
    """Parameter fitting cannot proceed (missing or insufficient data)."""


class ModeError(FlowcastError):
    """An operation requires the network's other total-node mode."""


class DegenerateDenominatorError(FlowcastError):
    """The MASE scaling denominator is exactly zero."""


class InconsistentEvidenceError(FlowcastError):
    """Evidence assigns zero likelihood mass to every discrete state."""

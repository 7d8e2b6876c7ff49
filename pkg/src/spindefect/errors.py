"""Exception hierarchy shared across the package.

Every error raised by library code derives from :class:`SpinDefectError` and
carries the name of the module that raised it, so front ends can report which
stage of a computation failed without parsing messages.
"""

from __future__ import annotations


class SpinDefectError(Exception):
    """Base class for all package errors."""

    module = "spindefect"

    def __init__(self, message: str):
        super().__init__(f"[{self.module}] {message}")
        self.bare_message = message


class ConfigurationError(SpinDefectError, ValueError):
    """A model, parameter set, or config file is malformed or inconsistent."""

    module = "config"


class InvalidSpeciesError(ConfigurationError):
    """A spin species has a non-physical quantum number."""


class ModelTooLargeError(ConfigurationError):
    """A requested Hilbert space exceeds the configured dimension cap."""


class NumericalContractError(SpinDefectError, ArithmeticError):
    """A numerical guarantee (hermiticity, trace, positivity...) was violated."""

    module = "numerics"


class SteadyStateAmbiguityError(NumericalContractError):
    """The Liouvillian kernel is not one-dimensional."""

    def __init__(self, kernel_dim: int):
        self.kernel_dim = kernel_dim
        super().__init__(
            f"steady state is not unique: kernel dimension {kernel_dim}"
        )


class SegmentError(SpinDefectError, ValueError):
    """An evolution segment has a non-positive duration or bad operators."""

    module = "lindblad"


class SequenceSyntaxError(SpinDefectError, ValueError):
    """A pulse program failed to parse. Carries line/column of the offense."""

    module = "sequences"

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class CompileError(SpinDefectError, ValueError):
    """A parsed pulse program cannot be lowered onto the given model."""

    module = "sequences"


class FitError(SpinDefectError, ValueError):
    """Fit input data are unusable (too short, degenerate...)."""

    module = "analysis"


class MetricDomainError(SpinDefectError, ValueError):
    """A scalar metric was evaluated outside its mathematical domain."""

    module = "analysis"

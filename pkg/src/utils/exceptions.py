"""
exception hierarchy for spikelab.
library code raises these; the command line maps them to exit codes.
"""

from typing import Any, Dict, Optional


class SpikeLabError(Exception):
    """base class for every error raised by the package."""


class DimensionError(SpikeLabError, ValueError):
    """shape mismatch (non-square matrix, wrong vector length)."""


class DomainError(SpikeLabError, ValueError):
    """non-finite or otherwise invalid input values."""


class NumericalError(SpikeLabError, ArithmeticError):
    """a numerical routine failed to converge."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnsupportedOrderError(SpikeLabError, ValueError):
    """requested input-derivative order exceeds what jets carry."""


class UnsupportedPrimitiveError(SpikeLabError, TypeError):
    """loss was built from operations the parameter tape cannot see."""


class UnknownSystemError(SpikeLabError, KeyError):
    """system name not present in the registry."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown system"


class UnsupportedSystemError(SpikeLabError, ValueError):
    """solver or metric asked for a system it does not handle."""


class SolverDivergedError(SpikeLabError, ArithmeticError):
    """reference solver blew up."""


class TrainingDivergedError(SpikeLabError, ArithmeticError):
    """a loss term became non-finite during training."""

    def __init__(self, term: str, step: int, checkpoint_path: Optional[str] = None):
        super().__init__(
            f"non-finite '{term}' loss at step {step}"
            + (f"; last good checkpoint kept at {checkpoint_path}" if checkpoint_path else "")
        )
        self.term = term
        self.step = step
        self.checkpoint_path = checkpoint_path

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
validation failures exit 4, everything else that goes wrong at run time exits 3.
"""


class ParalabError(Exception):
    """Base class for all package errors."""


class ConfigError(ParalabError, ValueError):
    """Invalid configuration value or combination."""


class ContractError(ParalabError, ValueError):
    """A caller violated an operation's precondition."""


class ShapeError(ContractError):
    """Tensor shapes are incompatible for the requested kernel."""


class NonFiniteError(ParalabError, FloatingPointError):
    """A NaN or infinity reached a place where only finite values are allowed."""


class ResampleSignal(ParalabError):
    """A masked-diffusion batch had no masked positions; draw a new timestep."""


class TrainingError(ParalabError, RuntimeError):
    """Training aborted (non-finite gradients, divergence, exhausted data)."""


class MeasurementError(ParalabError, ValueError):
    """Not enough recorded steps to make a throughput measurement."""


class ValidationError(ParalabError, ValueError):
    """A persisted artifact failed an integrity check."""

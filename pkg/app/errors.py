"""
Error hierarchy shared by every stage of the pipeline.

Each error carries a ``detail`` message and the process ``exit_code`` the CLI
reports for it: 1 for rejected input, 2 for failures at run time.
"""
from typing import Optional


class GSMFlowError(Exception):
    """Base error with a user-facing detail and a CLI exit code."""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class DimensionError(GSMFlowError):
    """Operand shapes do not agree."""

    def __init__(self, op: str, *shapes: tuple):
        shown = " and ".join(f"{s[0]}x{s[1]}" for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.shapes = shapes


class DomainError(GSMFlowError):
    """Input lies outside the mathematical domain of an operation."""

    exit_code = 2


class ContractError(GSMFlowError):
    """A documented precondition was violated by the caller."""


class ParseError(GSMFlowError):
    """A data file does not conform to its format."""

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


class IntegrityError(GSMFlowError):
    """Files parse but contradict each other (labels, splits, classes)."""


class UnsupportedOperationError(GSMFlowError):
    """Operation needs information the dataset does not carry."""


class ConfigError(GSMFlowError):
    """Configuration key, value or path rejected."""


class CheckpointError(GSMFlowError):
    """Checkpoint file missing, foreign or corrupt."""

    exit_code = 2


class TrainingDivergedError(GSMFlowError):
    """Loss became non-finite during training."""

    exit_code = 2

    def __init__(self, step: int, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step} (epoch {epoch})")
        self.step = step
        self.epoch = epoch

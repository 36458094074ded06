"""Exception types shared across the package."""

from __future__ import annotations


class IgstabError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(IgstabError):
    """An argument has the wrong shape; carries the offending argument name."""

    def __init__(self, argument: str, expected, got):
        self.argument = argument
        self.expected = expected
        self.got = got
        super().__init__(
            f"argument {argument!r}: expected shape {expected}, got {got}"
        )


class PreconditionError(IgstabError):
    """A documented precondition of an operation does not hold."""


class DivergenceError(IgstabError):
    """A rollout left the finite / bounded region; carries the first bad step."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"state diverged at step {step}")


class ConvergenceError(IgstabError):
    """An iterative solver failed to converge."""


class TrainingDivergenceError(IgstabError):
    """The optimizer produced a non-finite loss or parameters."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at optimizer epoch {epoch}, batch {batch}")

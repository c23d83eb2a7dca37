"""Exception hierarchy.

Every error raised by the library derives from :class:`TweedieShrinkError`.
The CLI maps the pipeline stage in which an error surfaced to a process
exit code (see :data:`EXIT_CODES`).
"""

from __future__ import annotations


class TweedieShrinkError(ValueError):
    """Base class for all library errors."""


class InputError(TweedieShrinkError):
    """Unreadable input file, missing column, unparseable cell."""


class NoUsableRows(InputError):
    pass


class NonFiniteValue(TweedieShrinkError):
    pass


class EmptyInput(TweedieShrinkError):
    pass


class InvalidScheme(TweedieShrinkError):
    pass


class InvalidConfig(TweedieShrinkError):
    pass


class DegenerateScale(TweedieShrinkError):
    """Zero spread where a positive scale is required."""


class TooFewDraws(TweedieShrinkError):
    pass


class NonConvergence(TweedieShrinkError):
    pass


class RankDeficient(TweedieShrinkError):
    pass


class ScaleMismatch(TweedieShrinkError):
    pass


class StageError(TweedieShrinkError):
    """Wraps an error with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


STAGES = ("config", "ingest", "transform", "posterior", "lindsey", "tweedie", "output")

EXIT_CODES = {
    "config": 2,
    "ingest": 3,
    "transform": 4,
    "posterior": 5,
    "lindsey": 6,
    "tweedie": 7,
    "output": 8,
}

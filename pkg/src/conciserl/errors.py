"""Exception hierarchy shared by every conciserl module."""

from __future__ import annotations


class ConciseRLError(Exception):
    """Base class for all errors raised by this package."""


class OutOfRangeError(ConciseRLError, ValueError):
    pass


class MissingScoreError(ConciseRLError, ValueError):
    """A reward variant needed a conciseness score but none was supplied."""


class InvalidParamsError(ConciseRLError, ValueError):
    pass


class InvalidAlphaError(ConciseRLError, ValueError):
    pass


class BudgetExceededError(ConciseRLError):
    """Cumulative judge spend reached the configured cap."""


class TransportError(ConciseRLError):
    """The judge endpoint could not be reached after all retries."""


class UnparseableReplyError(ConciseRLError, ValueError):
    def __init__(self, raw_reply: str):
        super().__init__(f"no score in [1, 10] found in judge reply: {raw_reply!r}")
        self.raw_reply = raw_reply


class DegenerateConfigError(ConciseRLError, ValueError):
    pass


class DegenerateGroupError(ConciseRLError, ValueError):
    pass


class InvalidRatioError(ConciseRLError, ValueError):
    pass


class EmptyInputError(ConciseRLError, ValueError):
    pass


class ZeroReferenceError(ConciseRLError, ValueError):
    pass


class MissingLevelError(ConciseRLError, ValueError):
    pass


class MissingCountError(ConciseRLError, ValueError):
    pass


class EvenWidthError(ConciseRLError, ValueError):
    pass

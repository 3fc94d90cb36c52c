"""Exception types shared across the package."""

from __future__ import annotations


class InfoselError(Exception):
    """Base class for all package errors."""


class EmptyFamily(InfoselError):
    pass


class InvalidWeight(InfoselError):
    pass


class NotInFamily(InfoselError):
    pass


class InvalidFamilySpec(InfoselError):
    pass


class ProbabilityOutOfRange(InfoselError):
    pass


class EmptyInput(InfoselError):
    pass


class NegativeMu(InfoselError):
    pass


class DimensionMismatch(InfoselError):
    pass


class NestednessViolated(InfoselError):
    """Raised when some row's selected sets fail to grow with the multiplier.

    Attributes
    ----------
    row : int
        Index of the offending row within its block.
    mu : float
        Breakpoint at which the active set switches.
    before, after : tuple of int
        Active sets on either side of ``mu``.
    """

    def __init__(self, row, mu, before, after, block="calibration"):
        self.row = row
        self.mu = mu
        self.before = before
        self.after = after
        self.block = block
        super().__init__(
            f"nestedness violated for {block} row {row} at mu={mu!r}: "
            f"{list(before)} -> {list(after)}"
        )


class EmptyTest(InfoselError):
    pass


class DegenerateRegime(InfoselError):
    pass


class InvalidBracket(InfoselError):
    pass


class NonFinite(InfoselError):
    pass


class TooFew(InfoselError):
    pass


class DidNotConverge(InfoselError):
    """Optimizer stopped before meeting its tolerance.

    ``best`` holds the last iterate so callers can still inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best

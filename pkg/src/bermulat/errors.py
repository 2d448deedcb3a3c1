"""Exception types shared across the package.

Every error raised by the library derives from :class:`BermulatError`, so
callers (notably the CLI) can map library failures to a single exit path.
"""

from __future__ import annotations


class BermulatError(Exception):
    """Base class for all bermulat errors."""


# --- chain ----------------------------------------------------------------

class NonPositiveWeight(BermulatError):
    pass


class WeightSumOffByMoreThanTol(BermulatError):
    pass


class DimensionMismatch(BermulatError):
    pass


class NonPositiveStep(BermulatError):
    pass


class OverflowRisk(BermulatError):
    """Composing a non-lattice chain would enumerate too many paths."""


class UnsupportedBasket(BermulatError):
    pass


# --- cubature -------------------------------------------------------------

class UnknownName(BermulatError):
    pass


class ParseError(BermulatError):
    """Node-file syntax error; carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WeightSumError(BermulatError):
    pass


class NoLatticeScale(BermulatError):
    pass


# --- lattice --------------------------------------------------------------

class NoEmbedding(BermulatError):
    """Increments do not lie on a common scaled integer lattice."""


class EmbeddingMissing(BermulatError):
    """Operation needs a lattice embedding and the path cap is exceeded."""


class StepNotMultipleOfH(BermulatError):
    pass


class TooLarge(BermulatError):
    """Exhaustive tree enumeration would exceed the path cap."""


# --- payoff / bounds ------------------------------------------------------

class UnsupportedCombination(BermulatError):
    """No closed form for this payoff/basket combination."""


class PreconditionViolated(BermulatError):
    pass


class NotApplicable(BermulatError):
    """A bound's hypotheses do not hold; carries the reason."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


# --- verify ---------------------------------------------------------------

class TailNotNegligible(BermulatError):
    """Integrand does not decay inside the truncation window."""


# --- cli ------------------------------------------------------------------

class ConfigError(BermulatError):
    pass

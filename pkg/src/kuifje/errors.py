"""Exception hierarchy shared by the whole package.

Every error the analyzer can raise deliberately derives from KuifjeError so
the command-line front end can map failures onto exit codes without guessing.
"""


class KuifjeError(Exception):
    """Base class for all analyzer errors."""


# --- probability construction ----------------------------------------------


class SumNotOne(KuifjeError):
    """A distribution's probabilities do not sum to exactly one."""


class NegativeProbability(KuifjeError):
    """A distribution entry carries a negative probability."""


# --- source handling ---------------------------------------------------------


class ParseError(KuifjeError):
    """Malformed source text; carries a 1-based line/column position."""

    def __init__(self, message, line, column):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class TypeCheckError(KuifjeError):
    """A well-formed program or gain expression that is ill-typed."""


# --- evaluation ---------------------------------------------------------------


class IndexOutOfBounds(KuifjeError):
    """An array index evaluated outside the declared bounds."""


class DivisionByZero(KuifjeError):
    """Integer div/mod by zero during expression evaluation."""


class DomainViolation(KuifjeError):
    """An assignment produced a value outside the target's declared domain."""


class RangeEmpty(KuifjeError):
    """A quantifier was given an empty index range."""


class NegativeAtom(KuifjeError):
    """A gain atom evaluated to a negative number on a reachable state."""


class NonStandardAndContext(KuifjeError):
    """The left operand of AND must be a single atom (a standard gain)."""


# --- loops --------------------------------------------------------------------


class LoopBoundExceeded(KuifjeError):
    """Forward execution of a loop passed the configured iteration cap."""


class LoopNeedsInvariantOrBound(KuifjeError):
    """Backwards analysis of a loop had neither an annotation nor a usable bound."""


class BoundTooSmall(KuifjeError):
    """An explicit unfolding depth was smaller than the loop actually needs."""


class InvariantCheckFailed(KuifjeError):
    """A loop annotation failed its consistency equation.

    Carries the failing side-by-side expressions and a counterexample prior
    so the caller can show exactly where the proposed annotation breaks.
    """

    def __init__(self, message, equation=None, counterexample=None):
        super().__init__(message)
        self.equation = equation
        self.counterexample = counterexample

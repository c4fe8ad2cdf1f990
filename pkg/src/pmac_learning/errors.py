"""Exception hierarchy for the PMAC learning toolkit."""
from __future__ import annotations

from typing import Any, Optional


class PMACError(Exception):
    """Base class for every error raised by ``pmac_learning``."""


class InvalidGameError(PMACError, ValueError):
    """A game, channel state or power profile violates its invariants."""


class FadingKindError(PMACError, ValueError):
    """A channel generator was called with a fading spec of the wrong kind."""


class DomainError(PMACError, ValueError):
    """An argument lies outside the domain of a numerical routine."""


class PreconditionError(PMACError, ValueError):
    """An operation was called with inputs that break its precondition."""


class DegenerateParametersError(PMACError, ValueError):
    """Near-coincident ``r`` values make the closed-form ergodic potential singular."""

    def __init__(self, channel: int, ratio: float) -> None:
        super().__init__(
            f"Closed-form ergodic potential is singular on channel {channel}: "
            f"|1 - r_l/r_k| = {ratio:.3e} below the separation threshold"
        )
        self.channel = channel
        self.ratio = ratio


class StepBoundError(PMACError, ValueError):
    """A discrete learning step would leave the product of simplices."""

    def __init__(self, step: float, bound: float) -> None:
        super().__init__(f"Step {step:.6g} exceeds the safe step bound {bound:.6g}")
        self.step = step
        self.bound = bound


class SolverError(PMACError):
    """The equilibrium solver exhausted its iteration budget."""

    def __init__(self, message: str, best: Optional[Any] = None) -> None:
        super().__init__(message)
        self.best = best


class StrictnessError(PMACError):
    """A strict-equilibrium certificate was requested for a non-strict equilibrium."""


class StarConvexityError(PMACError):
    """A sampled Rayleigh quotient of the potential Hessian was negative."""


class UndefinedRatioError(PMACError, ZeroDivisionError):
    """SRE or EQL was requested with a zero denominator."""


class UndefinedCorrelationError(PMACError, ValueError):
    """Cross-correlation was requested for a constant series."""


class ScenarioError(PMACError, ValueError):
    """A scenario file could not be parsed or validated."""

    def __init__(self, message: str, path: str = "<scenario>", line: int = 0, column: int = 0) -> None:
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path = path
        self.line = line
        self.column = column

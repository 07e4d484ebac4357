"""Exception types raised by the stopcal modules."""

from __future__ import annotations


class StopcalError(Exception):
    """Base class for all library errors."""


class ValidationError(StopcalError, ValueError):
    """Input violates a documented invariant."""


class BoundaryIndex(StopcalError, IndexError):
    pass


class EmptyEffectiveDomain(StopcalError):
    pass


class NotUConvex(StopcalError):
    pass


class NotGConvex(NotUConvex):
    pass


class UnknownFamily(StopcalError, KeyError):
    pass


class MixedSign(StopcalError):
    pass


class DegenerateString(StopcalError):
    pass


class NotConvex(StopcalError):
    pass


class NotNormalized(StopcalError):
    pass


class ZeroCurvature(StopcalError):
    pass


class TailDivergence(StopcalError):
    pass


class NonConvexInput(StopcalError):
    pass


class CollidingStates(StopcalError):
    pass


class StepTooCoarse(StopcalError):
    pass

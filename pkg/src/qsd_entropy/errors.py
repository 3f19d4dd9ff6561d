"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class QSDError(Exception):
    """Base class for every error raised by this package."""


class BoundarySingularityError(QSDError, ValueError):
    """A coefficient with a ``1/sqrt(1 - rz**2)`` factor was requested too close to a pole."""


class DomainError(QSDError, ValueError):
    """A closed-form expression produced a non-finite value."""


class IntegrationFault(QSDError, FloatingPointError):
    """The integrator produced a non-finite state.

    Carries the trajectory index and the step at which the state went bad.
    """

    def __init__(self, message: str, traj_index: int = -1, step: int = -1):
        super().__init__(message)
        self.traj_index = traj_index
        self.step = step


class StepSizeFault(QSDError, ValueError):
    """The explicit part of the Fokker-Planck update is unstable for the requested step."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class NormalizationFault(QSDError, ValueError):
    """A density grid has zero or negative total mass."""


class ExtrapolationError(QSDError, ValueError):
    """A query point lies outside the node span of a grid."""


class DivergenceFault(QSDError, ValueError):
    """Relative entropy is infinite: the reference density vanishes on the support."""


class NumericalLimitFault(QSDError, ArithmeticError):
    """An endpoint limit failed to converge.

    ``diagnostics`` holds the sequence of raw and extrapolated estimates.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EmptyOverlapFault(QSDError, ValueError):
    """Two entropy histograms share no well-sampled bins after reflection."""


class IncompleteBundleFault(QSDError, ValueError):
    """A results bundle is missing data or contains non-finite entries."""

    def __init__(self, message: str, offending: list[int] | None = None):
        super().__init__(message)
        self.offending = offending or []


class ConfigError(QSDError, ValueError):
    """Configuration validation failed; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)

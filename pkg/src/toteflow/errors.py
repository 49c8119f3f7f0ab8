"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ToteflowError(Exception):
    """Base class for all package errors."""


class DomainError(ToteflowError):
    """A domain-level precondition was violated (bad location, bad instance)."""


class GenerationError(ToteflowError):
    """Instance generation could not satisfy its own constraints."""


class InfeasibleActionError(ToteflowError):
    """An action outside the feasible mask was handed to the engine."""


class SimulationDeadlock(ToteflowError):
    """The event queue drained with incomplete orders and no feasible decision.

    ``stage`` names the starved decision stage, when identifiable.
    """

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class OracleError(ToteflowError):
    """The exact solver was asked for something outside its regime."""


class TrajectoryError(ToteflowError):
    """A trajectory or dataset file is malformed or inconsistent."""


class ProtocolError(ToteflowError):
    """A wire-protocol message violated the session contract."""

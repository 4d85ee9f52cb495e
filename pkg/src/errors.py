from __future__ import annotations


class TopologyError(ValueError):
    """Invalid node/link graph or an impossible tree query."""


class ScenarioError(ValueError):
    """Invalid scenario configuration. Messages start with the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ElectionError(ValueError):
    """Bad input to the DF election functions."""


class ControllerError(ValueError):
    """Unknown PE/EVI or other rejected controller command."""


class SchedulingError(RuntimeError):
    """An event was scheduled before the current virtual time."""


class InvariantViolation(RuntimeError):
    """Raised by the invariant suite when a simulation breaks a property it must hold."""

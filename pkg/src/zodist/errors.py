"""Exception hierarchy shared by the simulator modules."""

from __future__ import annotations


class ZodistError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ZodistError, ValueError):
    """Invalid configuration or problem construction."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DimensionError(ZodistError, ValueError):
    pass


class ContractError(ZodistError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ZodistError, ArithmeticError):
    def __init__(self, message: str, *, agent: int | None = None, index: int | None = None):
        self.agent = agent
        self.index = index
        super().__init__(message)


class ProtocolError(ZodistError):
    """Message-passing or buffer protocol misuse (non-edge send, non-contiguous push)."""


class BufferUnderrunError(ZodistError, LookupError):
    """A perturbation needed for an update is no longer (or not yet) stored."""

    def __init__(self, agent: int | None, timestamp: int, held: tuple[int, int] | None):
        self.agent = agent
        self.timestamp = timestamp
        self.held = held
        span = "empty buffer" if held is None else f"buffer holds [{held[0]}, {held[1]}]"
        who = "" if agent is None else f"agent {agent}: "
        super().__init__(f"{who}no perturbation stored for timestamp {timestamp} ({span})")


class DelayInvariantError(ZodistError):
    def __init__(self, t: int, agent: int, source: int, timestamp: int, dmax: int):
        self.t = t
        self.agent = agent
        self.source = source
        self.timestamp = timestamp
        self.dmax = dmax
        super().__init__(
            f"tick {t}: agent {agent} holds record of source {source} with timestamp "
            f"{timestamp}; age {t - timestamp} outside [0, {dmax}]"
        )


class SimulationError(ZodistError):
    """Wraps any failure inside a tick with the tick (and agent, when known)."""

    def __init__(self, t: int, phase: str, cause: BaseException, agent: int | None = None):
        self.t = t
        self.phase = phase
        self.agent = agent
        self.cause = cause
        where = f"tick {t}, phase {phase}"
        if agent is not None:
            where += f", agent {agent}"
        super().__init__(f"{where}: {cause}")

"""Per-agent state: query memory, perturbation ring buffer and the local update."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import BufferUnderrunError, ContractError, NumericError, ProtocolError


@dataclass(frozen=True, order=True)
class QueryRecord:
    """A neighbor's scalar query together with the global time it was taken."""

    source_agent: int
    timestamp: int
    value: float

    def __post_init__(self):
        if self.timestamp < 0:
            raise ContractError(f"timestamp must be >= 0, got {self.timestamp}")
        if not math.isfinite(self.value):
            raise NumericError(f"query value from agent {self.source_agent} is {self.value}",
                               agent=self.source_agent)


class QueryMemory:
    """Freshest-wins store holding at most one record per source agent."""

    def __init__(self, records: Iterable[QueryRecord] = ()):
        self._records: dict[int, QueryRecord] = {}
        self.stale_dropped = 0
        for rec in records:
            self.ingest(rec)

    def ingest(self, record: QueryRecord) -> bool:
        """Store ``record`` if strictly newer than the held one; return whether it was kept."""
        held = self._records.get(record.source_agent)
        if held is not None and record.timestamp <= held.timestamp:
            self.stale_dropped += 1
            return False
        self._records[record.source_agent] = record
        return True

    def get(self, source: int) -> QueryRecord | None:
        return self._records.get(source)

    def snapshot(self) -> tuple[QueryRecord, ...]:
        return tuple(self._records[k] for k in sorted(self._records))

    def sources(self) -> list[int]:
        return sorted(self._records)

    def __contains__(self, source: int) -> bool:
        return source in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self.snapshot())

    def _force(self, record: QueryRecord) -> None:
        """Overwrite without the freshness rule (test hook for invariant checks)."""
        self._records[record.source_agent] = record


def ingest_records(memory: QueryMemory, incoming: Iterable[QueryRecord]) -> QueryMemory:
    for rec in incoming:
        memory.ingest(rec)
    return memory


class PerturbationBuffer:
    """Ring buffer of an agent's own perturbation blocks keyed by contiguous timestamps."""

    def __init__(self, capacity: int, agent: int | None = None):
        if capacity < 1:
            raise ContractError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.agent = agent
        self._entries: deque[tuple[int, np.ndarray]] = deque(maxlen=self.capacity)

    def push(self, t: int, u: np.ndarray) -> None:
        if self._entries and t != self._entries[-1][0] + 1:
            raise ProtocolError(
                f"non-contiguous perturbation push: last stored {self._entries[-1][0]}, got {t}"
            )
        self._entries.append((int(t), np.asarray(u, dtype=np.float64)))

    def lookup(self, tau: int) -> np.ndarray:
        if not self._entries:
            raise BufferUnderrunError(self.agent, tau, None)
        first = self._entries[0][0]
        idx = tau - first
        if idx < 0 or idx >= len(self._entries):
            raise BufferUnderrunError(self.agent, tau, self.span)
        return self._entries[idx][1]

    @property
    def span(self) -> tuple[int, int] | None:
        if not self._entries:
            return None
        return (self._entries[0][0], self._entries[-1][0])

    def timestamps(self) -> list[int]:
        return [t for t, _ in self._entries]

    def __len__(self) -> int:
        return len(self._entries)


def push_perturbation(buffer: PerturbationBuffer, t: int, u: np.ndarray) -> PerturbationBuffer:
    buffer.push(t, u)
    return buffer


@dataclass
class AgentState:
    id: int
    theta: np.ndarray
    query_memory: QueryMemory
    perturbation_buffer: PerturbationBuffer
    rx_neighbors: frozenset[int]
    tx_neighbors: frozenset[int]
    stepsize: Callable[[int], float]
    last_query: int = -1
    last_update: int = -1
    last_transmit: int = -1
    n_updates: int = field(default=0)

    @property
    def dim(self) -> int:
        return self.theta.size


def build_update_direction(state: AgentState, t: int, is_update_tick: bool) -> np.ndarray:
    """Sum of stored neighbor queries times the agent's own matching perturbations.

    Sources missing from memory contribute nothing.  Returns zeros off update ticks.
    """
    s = np.zeros(state.dim)
    if not is_update_tick:
        return s
    for source in sorted(state.rx_neighbors):
        rec = state.query_memory.get(source)
        if rec is None:
            continue
        if rec.timestamp > t:
            raise ContractError(f"agent {state.id}: record from {source} is from the future ({rec.timestamp} > {t})")
        s += rec.value * state.perturbation_buffer.lookup(rec.timestamp)
    return s


def apply_update(state: AgentState, gamma_t: float, s: np.ndarray) -> np.ndarray:
    """In-place step ``theta <- theta + gamma_t * s`` on this agent's block only."""
    if not gamma_t > 0:
        raise ContractError(f"agent {state.id}: stepsize must be positive, got {gamma_t}")
    s = np.asarray(s, dtype=np.float64)
    if s.shape != state.theta.shape:
        raise ContractError(f"agent {state.id}: direction has shape {s.shape}, expected {state.theta.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        new = state.theta + gamma_t * s
    if not np.all(np.isfinite(new)):
        raise NumericError(f"agent {state.id}: update produced non-finite parameters", agent=state.id)
    state.theta = new
    return new

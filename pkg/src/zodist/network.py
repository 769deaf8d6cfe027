"""Communication graphs and the delay-injecting message transport."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .agent import QueryRecord
from .errors import ConfigError, ProtocolError
from .numerics import RandomStream


@dataclass(frozen=True)
class Graph:
    """Directed graph; ``adjacency[i, j]`` means agent i sends to agent j."""

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError(f"adjacency must be square, got shape {a.shape}", "graph")
        a = a.copy()
        np.fill_diagonal(a, False)
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def m(self) -> int:
        return self.adjacency.shape[0]

    def out_neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def in_neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[:, i])]

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adjacency[i, j])

    @classmethod
    def complete(cls, m: int) -> Graph:
        return cls(np.ones((m, m), dtype=bool))

    @classmethod
    def from_neighbor_sets(cls, tx_sets: list[Iterable[int]]) -> Graph:
        m = len(tx_sets)
        a = np.zeros((m, m), dtype=bool)
        for i, targets in enumerate(tx_sets):
            for j in targets:
                a[i, j] = True
        return cls(a)


def build_block_overlap_graph(m: int, kappa: int) -> Graph:
    """Union of all-ones kappa x kappa blocks placed every kappa/2 indices, wrapping around."""
    if kappa < 2 or kappa % 2 or kappa > m:
        raise ConfigError(f"need even kappa with 2 <= kappa <= m, got kappa={kappa}, m={m}", "graph.kappa")
    half = kappa // 2
    if m % half:
        raise ConfigError(f"m={m} must be divisible by kappa/2={half}", "graph.m")
    a = np.zeros((m, m), dtype=bool)
    for start in range(0, m, half):
        idx = [(start + k) % m for k in range(kappa)]
        a[np.ix_(idx, idx)] = True
    return Graph(a)


def _reach(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            queue.append(int(j))
    return seen


def check_connected(g: Graph) -> bool:
    """Strong connectivity via one forward and one reverse traversal from node 0."""
    if g.m <= 1:
        return True
    return bool(_reach(g.adjacency, 0).all() and _reach(g.adjacency.T, 0).all())


def hop_distances(g: Graph, start: int) -> np.ndarray:
    dist = np.full(g.m, -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in g.out_neighbors(i):
            if dist[j] < 0:
                dist[j] = dist[i] + 1
                queue.append(j)
    return dist


def diameter(g: Graph) -> int:
    """Longest shortest directed path; raises if the graph is not strongly connected."""
    worst = 0
    for i in range(g.m):
        d = hop_distances(g, i)
        if (d < 0).any():
            raise ConfigError("graph is not strongly connected", "graph")
        worst = max(worst, int(d.max()))
    return worst


def neighbor_counts(g: Graph) -> dict[str, list[int]]:
    """Per-agent neighbor counts under both self-inclusion conventions."""
    out_deg = g.adjacency.sum(axis=1).astype(int).tolist()
    return {"excluding_self": out_deg, "including_self": [d + 1 for d in out_deg]}


def save_adjacency(g: Graph, path: str | Path) -> None:
    lines = [" ".join("1" if x else "0" for x in row) for row in g.adjacency]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def load_adjacency(path: str | Path) -> Graph:
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = [int(tok) for tok in line.split()]
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}", "graph.adjacency_file") from None
        if any(x not in (0, 1) for x in row):
            raise ConfigError(f"{path}:{lineno}: entries must be 0 or 1", "graph.adjacency_file")
        rows.append(row)
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ConfigError(f"{path}: adjacency must be a non-empty square 0/1 matrix", "graph.adjacency_file")
    return Graph(np.array(rows, dtype=bool))


@dataclass(frozen=True, order=True)
class Message:
    deliver_time: int
    src: int
    dst: int
    send_time: int
    payload: tuple[QueryRecord, ...] = field(compare=False)


@dataclass
class TransportState:
    """In-flight messages ordered by (deliver_time, src, dst) plus counters.

    ``fixed_delay`` makes every hop take exactly ``d_comm`` ticks instead of a
    uniform draw from ``{1, ..., d_comm}``.
    """

    graph: Graph
    d_comm: int = 1
    fixed_delay: bool = False
    sent: int = 0
    delivered: int = 0
    max_delay_seen: int = 0
    _queue: list[Message] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.d_comm < 1:
            raise ConfigError(f"must be >= 1, got {self.d_comm}", "network.d_comm")

    @property
    def in_flight(self) -> int:
        return len(self._queue)

    def pending(self) -> list[Message]:
        return sorted(self._queue)


def send(
    ts: TransportState,
    msgs: Iterable[tuple[int, int, tuple[QueryRecord, ...]]],
    t: int,
    delay_stream: RandomStream | None,
) -> TransportState:
    """Enqueue ``(src, dst, payload)`` messages sent at tick ``t`` with random delays.

    Delays are drawn in the order the messages are given.
    """
    msgs = list(msgs)
    for src, dst, _ in msgs:
        if not ts.graph.has_edge(src, dst):
            raise ProtocolError(f"send on non-edge {src} -> {dst}")
    if not msgs:
        return ts
    if ts.fixed_delay or ts.d_comm == 1:
        delays = np.full(len(msgs), ts.d_comm, dtype=np.int64)
    else:
        if delay_stream is None:
            raise ProtocolError("random delays need a delay stream")
        delays = delay_stream.integers(1, ts.d_comm, len(msgs))
    for (src, dst, payload), d in zip(msgs, delays):
        d = int(d)
        heapq.heappush(ts._queue, Message(t + d, int(src), int(dst), t, tuple(payload)))
        ts.max_delay_seen = max(ts.max_delay_seen, d)
    ts.sent += len(msgs)
    return ts


def deliver_due(ts: TransportState, t: int) -> list[Message]:
    """Remove and return the messages due exactly at ``t`` in (src, dst) order."""
    out = []
    while ts._queue and ts._queue[0].deliver_time <= t:
        msg = heapq.heappop(ts._queue)
        if msg.deliver_time < t:
            raise ProtocolError(f"message {msg.src}->{msg.dst} due at {msg.deliver_time} missed (now {t})")
        out.append(msg)
    ts.delivered += len(out)
    return out

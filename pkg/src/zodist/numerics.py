"""Random streams, Gaussian sampling and the small MLP power policy.

Every random quantity in a simulation comes from a :class:`RandomStream`
keyed by ``(master_seed, agent_id, purpose, lane)``.  The key selects a Philox
counter-based generator; the stream position is the number of 64-bit words
consumed so far.  Two streams with the same key and position always produce
the same values, no matter which other streams were used in between.

Uniforms are built from the top 53 bits of each word as
``((w >> 11) + 0.5) * 2**-53``, which lies strictly inside ``(0, 1)``.
Standard normals use the Box-Muller transform on consecutive uniform pairs
``(u1, u2)``: ``sqrt(-2 ln u1) * cos(2 pi u2)`` and
``sqrt(-2 ln u1) * sin(2 pi u2)``.  A request for ``d`` normals consumes
``2 * ceil(d / 2)`` words; an odd trailing value is discarded.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from numpy.random import Philox, SeedSequence

from .errors import DimensionError

GLOBAL_AGENT = -1
"""Agent id used for streams that belong to the environment, not an agent."""

_U53 = 2.0**-53
HIDDEN = (30, 30)
POWER_MAX = 10.0


class Purpose(enum.IntEnum):
    PERTURBATION = 0
    SAMPLE = 1
    SCHEDULE = 2
    DELAY = 3
    INIT = 4


class RandomStream:
    """Counter-based keyed random stream.

    ``counter`` counts consumed 64-bit words.  Streams are cheap to create and
    may be repositioned with :meth:`at`.
    """

    __slots__ = ("master_seed", "agent_id", "purpose", "lane", "_key", "_bitgen", "_counter")

    def __init__(
        self,
        master_seed: int,
        agent_id: int,
        purpose: Purpose | str,
        lane: int = 0,
        counter: int = 0,
    ):
        if isinstance(purpose, str):
            purpose = Purpose[purpose.upper()]
        if agent_id < GLOBAL_AGENT:
            raise ValueError(f"agent_id must be >= {GLOBAL_AGENT}, got {agent_id}")
        if lane < 0 or counter < 0:
            raise ValueError("lane and counter must be non-negative")
        self.master_seed = int(master_seed)
        self.agent_id = int(agent_id)
        self.purpose = Purpose(purpose)
        self.lane = int(lane)
        seq = SeedSequence(
            self.master_seed & 0xFFFF_FFFF_FFFF_FFFF,
            spawn_key=(self.agent_id + 1, int(self.purpose), self.lane),
        )
        self._key = seq.generate_state(2, np.uint64)
        self._seek(int(counter))

    def _seek(self, counter: int) -> None:
        block, offset = divmod(counter, 4)
        self._bitgen = Philox(key=self._key, counter=[block, 0, 0, 0])
        if offset:
            self._bitgen.random_raw(offset)
        self._counter = counter

    @property
    def counter(self) -> int:
        return self._counter

    @property
    def key(self) -> tuple[int, int, Purpose, int]:
        return (self.master_seed, self.agent_id, self.purpose, self.lane)

    def at(self, counter: int) -> RandomStream:
        """Return a new stream with the same key positioned at ``counter``."""
        return RandomStream(self.master_seed, self.agent_id, self.purpose, self.lane, counter)

    def clone(self) -> RandomStream:
        return self.at(self._counter)

    def raw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        out = self._bitgen.random_raw(n)
        self._counter += n
        return np.asarray(out, dtype=np.uint64)

    def uniforms(self, n: int) -> np.ndarray:
        words = self.raw(n)
        return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _U53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """``n`` integers uniform on ``{low, ..., high}`` (inclusive)."""
        if high < low:
            raise ValueError("empty integer range")
        span = high - low + 1
        idx = np.floor(self.uniforms(n) * span).astype(np.int64)
        return np.minimum(idx, span - 1) + low

    def normals(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(u[0::2]))
        angle = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n]

    def __repr__(self) -> str:
        return (
            f"RandomStream(master_seed={self.master_seed}, agent_id={self.agent_id}, "
            f"purpose={self.purpose.name.lower()}, lane={self.lane}, counter={self._counter})"
        )


def gaussian_vector(stream: RandomStream, dim: int) -> np.ndarray:
    """Draw ``dim`` i.i.d. standard normals from ``stream``."""
    if dim < 0:
        raise DimensionError(f"dim must be >= 0, got {dim}")
    return stream.normals(dim)


# --------------------------------------------------------------------------
# MLP policy {K, 30, 30, 1} with relu hidden layers and a 10*sigmoid output.
# Flattened layout: W1 (30 x K, row-major), b1, W2 (30 x 30), b2, W3 (1 x 30), b3.
# --------------------------------------------------------------------------


def mlp_param_count(k: int) -> int:
    h1, h2 = HIDDEN
    return h1 * k + h1 + h2 * h1 + h2 + h2 + 1


def _layer_shapes(k: int) -> list[tuple[tuple[int, int], int]]:
    h1, h2 = HIDDEN
    return [((h1, k), h1), ((h2, h1), h2), ((1, h2), 1)]


def unpack_mlp(params: np.ndarray, k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split flat parameters (last axis) into ``[(W, b), ...]`` views.

    Leading axes of ``params`` are kept, so a stack of per-agent parameter
    vectors of shape ``(m, n_i)`` unpacks to weights of shape ``(m, out, in)``.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape[-1] != mlp_param_count(k):
        raise DimensionError(
            f"MLP with input size {k} needs {mlp_param_count(k)} parameters, got {params.shape[-1]}"
        )
    lead = params.shape[:-1]
    layers = []
    pos = 0
    for (rows, cols), nb in _layer_shapes(k):
        nw = rows * cols
        w = params[..., pos : pos + nw].reshape(*lead, rows, cols)
        pos += nw
        b = params[..., pos : pos + nb]
        pos += nb
        layers.append((w, b))
    return layers


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch-free stable logistic.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def mlp_forward(params: np.ndarray, x: np.ndarray) -> float:
    """Transmit power in ``(0, 10)`` for a single input vector of length K."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("input must be a vector")
    return float(mlp_forward_batch(np.asarray(params)[None, :], x[None, None, :])[0, 0])


def mlp_forward_batch(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate one MLP per agent on a batch of inputs.

    ``params`` has shape ``(m, n_i)``; ``x`` has shape ``(batch, m, K)``.
    Returns powers of shape ``(batch, m)``.
    """
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or params.ndim != 2 or x.shape[1] != params.shape[0]:
        raise DimensionError(f"incompatible shapes params={params.shape} inputs={x.shape}")
    (w1, b1), (w2, b2), (w3, b3) = unpack_mlp(params, x.shape[2])
    h = np.maximum(np.einsum("mhk,bmk->bmh", w1, x) + b1, 0.0)
    h = np.maximum(np.einsum("mgh,bmh->bmg", w2, h) + b2, 0.0)
    z = np.einsum("mog,bmg->bmo", w3, h)[..., 0] + b3[:, 0]
    return POWER_MAX * _sigmoid(z)


def mlp_init(stream: RandomStream, k: int, scale: float = 1.0) -> np.ndarray:
    """Gaussian weights with standard deviation ``scale / sqrt(fan_in)``; zero biases."""
    parts = []
    for (rows, cols), nb in _layer_shapes(k):
        parts.append(gaussian_vector(stream, rows * cols) * (scale / math.sqrt(cols)))
        parts.append(np.zeros(nb))
    return np.concatenate(parts)

"""Cost oracles: analytic verification problems and the wireless power-allocation benchmark.

A problem evaluates every agent's noisy cost at once for a batch of samples,
``evaluate(theta, samples) -> (batch, m)``.  Samples are drawn once per
evaluation slot and shared by all agents, which matches a physical channel
seen simultaneously by every link.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    GLOBAL_AGENT,
    POWER_MAX,
    Purpose,
    RandomStream,
    gaussian_vector,
    mlp_forward_batch,
    mlp_init,
    mlp_param_count,
)
from .zo_core import TheoryConstants


class Problem:
    """Base class.  Subclasses set ``dims``, ``rx_sets`` and ``tx_sets``.

    ``rx_sets[i]`` holds the agents whose cost depends on agent i's block;
    ``tx_sets[i]`` holds the agents whose blocks agent i's cost depends on.
    """

    name = "problem"
    dims: list[int]
    rx_sets: list[frozenset[int]]
    tx_sets: list[frozenset[int]]

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(sum(self.dims))

    @property
    def offsets(self) -> list[int]:
        return [0, *np.cumsum(self.dims).tolist()]

    def block(self, theta: np.ndarray, i: int) -> np.ndarray:
        o = self.offsets
        return theta[o[i] : o[i + 1]]

    def draw_samples(self, stream: RandomStream, count: int):
        raise NotImplementedError

    def evaluate(self, theta: np.ndarray, samples) -> np.ndarray:
        raise NotImplementedError

    def oracle(self, ell: int, theta: np.ndarray, sample) -> float:
        """Single noisy cost ``F_ell(theta, xi)`` for one sample."""
        return float(self.evaluate(theta, self.batch_of(sample))[0, ell])

    def batch_of(self, sample):
        raise NotImplementedError

    def initial_theta(self, master_seed: int) -> np.ndarray:
        raise NotImplementedError

    # Optional closed forms.  ``None`` when not available.
    def objective(self, theta: np.ndarray) -> float | None:
        return None

    def local_objectives(self, theta: np.ndarray) -> np.ndarray | None:
        return None

    def gradient(self, theta: np.ndarray) -> np.ndarray | None:
        return None

    def theory_constants(self, theta: np.ndarray) -> TheoryConstants | None:
        return None

    def extra_metrics(self, values: np.ndarray) -> dict[str, float]:
        return {}

    @property
    def pad_count(self) -> int:
        return 0

    def get_state(self):
        """Mutable sampling state (feature history); restored after diagnostic draws."""
        return None

    def set_state(self, state) -> None:
        pass


# ---------------------------------------------------------------------------
# Coupled quadratic
# ---------------------------------------------------------------------------


class CoupledQuadratic(Problem):
    """``f_l(theta) = 0.5 * ||A_l theta - b_l||^2`` with ``A_l`` the rows of block l.

    The oracle adds ``noise_sd * xi_l`` with ``xi_l`` standard normal.
    """

    name = "quadratic"

    def __init__(self, dims: list[int], A: np.ndarray, b: np.ndarray, noise_sd: float = 0.0,
                 init_scale: float = 1.0):
        self.dims = [int(d) for d in dims]
        n = self.n
        A = np.asarray(A, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if A.shape != (n, n):
            raise ConfigError(f"coupling must be {n}x{n}, got {A.shape}", "problem.coupling")
        if b.shape != (n,):
            raise ConfigError(f"targets must have length {n}, got {b.shape}", "problem.targets")
        if noise_sd < 0:
            raise ConfigError("must be >= 0", "problem.noise_sd")
        self.A = A
        self.b = b
        self.noise_sd = float(noise_sd)
        self.init_scale = float(init_scale)
        o = self.offsets
        m = self.m
        deps = np.zeros((m, m), dtype=bool)  # deps[l, j]: f_l depends on theta_j
        for ell in range(m):
            for j in range(m):
                deps[ell, j] = np.any(A[o[ell] : o[ell + 1], o[j] : o[j + 1]] != 0)
        self.deps = deps
        self.tx_sets = [frozenset(np.flatnonzero(deps[i]).tolist()) for i in range(m)]
        self.rx_sets = [frozenset(np.flatnonzero(deps[:, i]).tolist()) for i in range(m)]
        # owner[r] = agent whose cost uses row r of A
        self._owner = np.repeat(np.arange(m), self.dims)
        self._local_L = np.array(
            [np.linalg.norm(A[o[ell] : o[ell + 1]], 2) ** 2 for ell in range(m)]
        )

    def residual(self, theta: np.ndarray) -> np.ndarray:
        return self.A @ theta - self.b

    def local_objectives(self, theta: np.ndarray) -> np.ndarray:
        r = self.residual(np.asarray(theta, dtype=np.float64))
        return 0.5 * np.bincount(self._owner, weights=r * r, minlength=self.m)

    def objective(self, theta: np.ndarray) -> float:
        return float(self.local_objectives(theta).mean())

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.A.T @ self.residual(theta) / self.m

    def local_gradient(self, ell: int, theta: np.ndarray) -> np.ndarray:
        o = self.offsets
        A_l = self.A[o[ell] : o[ell + 1]]
        return A_l.T @ (A_l @ theta - self.b[o[ell] : o[ell + 1]])

    def minimizer(self) -> np.ndarray:
        return np.linalg.lstsq(self.A, self.b, rcond=None)[0]

    def optimal_value(self) -> float:
        return self.objective(self.minimizer())

    def draw_samples(self, stream: RandomStream, count: int) -> np.ndarray:
        return stream.normals(count * self.m).reshape(count, self.m)

    def batch_of(self, sample) -> np.ndarray:
        return np.asarray(sample, dtype=np.float64).reshape(1, self.m)

    def evaluate(self, theta: np.ndarray, samples: np.ndarray) -> np.ndarray:
        return self.local_objectives(theta)[None, :] + self.noise_sd * samples

    def evaluate_many(self, thetas: np.ndarray, samples: np.ndarray) -> np.ndarray:
        """Costs for a stack of parameter vectors ``(batch, n)`` with one sample row each."""
        r = thetas @ self.A.T - self.b
        sq = r * r
        o = self.offsets
        f = np.stack([sq[:, o[i] : o[i + 1]].sum(axis=1) for i in range(self.m)], axis=1)
        return 0.5 * f + self.noise_sd * samples

    def initial_theta(self, master_seed: int) -> np.ndarray:
        parts = [
            self.init_scale * gaussian_vector(RandomStream(master_seed, i, Purpose.INIT), d)
            for i, d in enumerate(self.dims)
        ]
        return np.concatenate(parts)

    def theory_constants(self, theta: np.ndarray) -> TheoryConstants:
        """Smoothness is exact; G is the largest local gradient norm at ``theta``.

        The oracle noise is additive and scalar per agent: its gradient noise is
        zero, ``E[xi^2] = 1`` and ``F`` is ``noise_sd``-Lipschitz in ``xi``.
        """
        grads = [np.linalg.norm(self.local_gradient(i, theta)) for i in range(self.m)]
        g = float(max(grads))
        return TheoryConstants(L0=g, L=float(self._local_L.max()), sigma=0.0, G=g, v=1.0,
                               L_xi=self.noise_sd)


def ring_coupling(m: int, n_i: int, strength: float) -> np.ndarray:
    """Identity plus ``strength`` times identity blocks on the two ring neighbors."""
    n = m * n_i
    A = np.eye(n)
    if m > 1:
        for ell in range(m):
            for j in ((ell - 1) % m, (ell + 1) % m):
                if j == ell:
                    continue
                rows = slice(ell * n_i, (ell + 1) * n_i)
                cols = slice(j * n_i, (j + 1) * n_i)
                A[rows, cols] += strength * np.eye(n_i)
    return A


def coupled_quadratic(
    m: int,
    n_i: int,
    coupling: np.ndarray | None = None,
    targets: np.ndarray | None = None,
    noise_sd: float = 0.0,
    *,
    strength: float = 0.2,
    seed: int = 0,
    target_scale: float = 1.0,
    init_scale: float = 1.0,
) -> CoupledQuadratic:
    """Build a coupled quadratic; missing coupling/targets come from a ring and a seeded draw."""
    if m < 1 or n_i < 1:
        raise ConfigError("m and n_i must be >= 1", "problem")
    if coupling is None:
        coupling = ring_coupling(m, n_i, strength)
    if targets is None:
        targets = target_scale * gaussian_vector(RandomStream(seed, GLOBAL_AGENT, Purpose.INIT, lane=1), m * n_i)
    return CoupledQuadratic([n_i] * m, coupling, targets, noise_sd, init_scale=init_scale)


class CoupledNonconvex(CoupledQuadratic):
    """Smooth nonconvex variant: ``f_l(theta) = sum_k phi((A_l theta - b_l)_k)``, ``phi(x) = x^2 / (1 + x^2)``.

    ``phi`` is bounded, 2-smooth and nonconvex for ``|x| > 1/sqrt(3)``; the
    global minimum 0 is attained wherever the residual vanishes.
    """

    name = "nonconvex"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._local_L = 2.0 * self._local_L

    @staticmethod
    def phi(x: np.ndarray) -> np.ndarray:
        return x * x / (1.0 + x * x)

    @staticmethod
    def dphi(x: np.ndarray) -> np.ndarray:
        return 2.0 * x / (1.0 + x * x) ** 2

    def local_objectives(self, theta: np.ndarray) -> np.ndarray:
        r = self.residual(np.asarray(theta, dtype=np.float64))
        return np.bincount(self._owner, weights=self.phi(r), minlength=self.m)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.A.T @ self.dphi(self.residual(theta)) / self.m

    def local_gradient(self, ell: int, theta: np.ndarray) -> np.ndarray:
        o = self.offsets
        A_l = self.A[o[ell] : o[ell + 1]]
        return A_l.T @ self.dphi(A_l @ theta - self.b[o[ell] : o[ell + 1]])

    def evaluate_many(self, thetas: np.ndarray, samples: np.ndarray) -> np.ndarray:
        v = self.phi(thetas @ self.A.T - self.b)
        o = self.offsets
        f = np.stack([v[:, o[i] : o[i + 1]].sum(axis=1) for i in range(self.m)], axis=1)
        return f + self.noise_sd * samples


def coupled_nonconvex(m: int, n_i: int, noise_sd: float = 0.0, *, strength: float = 0.2, seed: int = 0,
                      target_scale: float = 1.0, init_scale: float = 1.0) -> CoupledNonconvex:
    q = coupled_quadratic(m, n_i, noise_sd=noise_sd, strength=strength, seed=seed, target_scale=target_scale)
    return CoupledNonconvex(q.dims, q.A, q.b, noise_sd, init_scale=init_scale)


# ---------------------------------------------------------------------------
# log-cosh test function (1-smooth)
# ---------------------------------------------------------------------------


def logcosh(theta: np.ndarray) -> float:
    x = np.abs(np.asarray(theta, dtype=np.float64))
    # log cosh x = |x| + log1p(exp(-2|x|)) - log 2
    return float(np.sum(x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)))


def logcosh_gradient(theta: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(theta, dtype=np.float64))


# ---------------------------------------------------------------------------
# Wireless power allocation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RaConfig:
    K: int = 5
    eta: float = 0.01
    power_max: float = POWER_MAX
    pathloss_exponent: float = 2.2
    area_scale: float | None = None
    feature_transform: str = "none"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("must be >= 1", "problem.K")
        for name in ("eta", "power_max", "pathloss_exponent", "init_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", f"problem.{name}")
        if self.area_scale is not None and not self.area_scale > 0:
            raise ConfigError("must be positive", "problem.area_scale")
        if self.feature_transform not in ("none", "log1p"):
            raise ConfigError("must be 'none' or 'log1p'", "problem.feature_transform")
        if self.power_max != POWER_MAX:
            raise ConfigError(f"the policy output range is fixed to [0, {POWER_MAX}]", "problem.power_max")


@dataclass
class ChannelMatrix:
    """Channel ``H[j, i]`` from transmitter i to receiver r(j), its thresholded copy and node positions."""

    H: np.ndarray
    H_tilde: np.ndarray
    tx_locations: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    rx_locations: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def to_csv(self, path: str | Path) -> None:
        """Row-major, real and imaginary parts interleaved per entry."""
        lines = []
        for row in self.H:
            vals = []
            for z in row:
                vals += [format(z.real, ".17g"), format(z.imag, ".17g")]
            lines.append(",".join(vals))
        Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def threshold_channel(H: np.ndarray, eta: float) -> np.ndarray:
    return np.where(np.abs(H) >= eta, H, 0.0)


def pathloss_gain(distance: np.ndarray | float, exponent: float = 2.2) -> np.ndarray | float:
    return np.power(distance, -exponent)


def place_nodes(m: int, stream: RandomStream, area_scale: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Transmitters uniform in [-s, s]^2; each receiver uniform within +-s/4 of its transmitter."""
    s = float(m if area_scale is None else area_scale)
    tx = -s + 2 * s * stream.uniforms(2 * m).reshape(m, 2)
    rx = tx + (-s / 4 + (s / 2) * stream.uniforms(2 * m).reshape(m, 2))
    return tx, rx


def pathloss_matrix(tx: np.ndarray, rx: np.ndarray, exponent: float = 2.2) -> np.ndarray:
    """``P[j, i] = ||l(i) - l(r(j))||^(-exponent)``."""
    dist = np.linalg.norm(tx[None, :, :] - rx[:, None, :], axis=2)
    return pathloss_gain(dist, exponent)


def complex_normal(stream: RandomStream, shape: tuple[int, ...]) -> np.ndarray:
    size = int(np.prod(shape))
    z = stream.normals(2 * size)
    return ((z[0::2] + 1j * z[1::2]) / math.sqrt(2.0)).reshape(shape)


def generate_channels(m: int, stream: RandomStream, cfg: RaConfig | None = None) -> ChannelMatrix:
    """Fresh node placement plus one Rayleigh fading draw."""
    if m < 2:
        raise ConfigError("need at least two agents", "problem.m")
    cfg = cfg or RaConfig()
    tx, rx = place_nodes(m, stream, cfg.area_scale)
    H = pathloss_matrix(tx, rx, cfg.pathloss_exponent) * complex_normal(stream, (m, m))
    return ChannelMatrix(H, threshold_channel(H, cfg.eta), tx, rx)


def rates_from_gains(p: np.ndarray, gains: np.ndarray) -> np.ndarray:
    """Achievable rates for power ``p`` (..., m) and squared gains ``|H|^2`` (..., m, m)."""
    received = gains * p[..., None, :]
    signal = np.diagonal(received, axis1=-2, axis2=-1)
    interference = received.sum(axis=-1) - signal
    return np.log1p(signal / (1.0 + interference))


def rate(i: int, p: np.ndarray, H: ChannelMatrix | np.ndarray) -> float:
    """Natural-log rate of agent ``i`` with receiver r(i) = i."""
    H = H.H if isinstance(H, ChannelMatrix) else np.asarray(H)
    p = np.asarray(p, dtype=np.float64)
    g = np.abs(H[i]) ** 2
    signal = g[i] * p[i]
    interference = float(np.dot(g, p) - signal)
    return float(math.log1p(signal / (1.0 + interference)))


def aggregation_features(
    channel_history: list[ChannelMatrix | np.ndarray],
    i: int,
    K: int,
    stats: dict | None = None,
) -> np.ndarray:
    """``y_i^k`` for k = 1..K from thresholded channels, most recent first.

    ``y^k = |H~_j^T| |H~_{j-1}^T| ... |H~_{j-k+1}^T| 1``.  When fewer than K
    matrices are available the oldest one is reused and ``stats['pads']`` is
    incremented.
    """
    mats = [np.abs((c.H_tilde if isinstance(c, ChannelMatrix) else np.asarray(c)).T)
            for c in channel_history]
    if not mats:
        raise ConfigError("empty channel history", "features")
    if len(mats) < K:
        if stats is not None:
            stats["pads"] = stats.get("pads", 0) + 1
        mats = mats + [mats[-1]] * (K - len(mats))
    m = mats[0].shape[0]
    out = np.empty(K)
    prod = np.eye(m)
    for k in range(K):
        prod = prod @ mats[k]
        out[k] = prod[i].sum()
    return out


@dataclass
class RaSamples:
    gains: np.ndarray     # (batch, m, m) |H|^2
    features: np.ndarray  # (batch, m, K)


class PowerAllocation(Problem):
    """Each agent's MLP maps aggregation features to its transmit power; cost is minus its rate."""

    name = "ra"

    def __init__(self, m: int, cfg: RaConfig | None = None, seed: int = 0):
        if m < 1:
            raise ConfigError("must be >= 1", "problem.m")
        self.cfg = cfg or RaConfig()
        self.seed = int(seed)
        k = self.cfg.K
        self.dims = [mlp_param_count(k)] * m
        everyone = frozenset(range(m))
        self.rx_sets = [everyone] * m
        self.tx_sets = [everyone] * m
        place = RandomStream(seed, GLOBAL_AGENT, Purpose.INIT, lane=2)
        self.tx_locations, self.rx_locations = place_nodes(m, place, self.cfg.area_scale)
        self.pathloss = pathloss_matrix(self.tx_locations, self.rx_locations, self.cfg.pathloss_exponent)
        self._history: deque[np.ndarray] = deque(maxlen=max(k - 1, 1))
        self._pads = 0

    @property
    def pad_count(self) -> int:
        return self._pads

    def get_state(self):
        return (list(self._history), self._pads)

    def set_state(self, state) -> None:
        hist, pads = state
        self._history.clear()
        self._history.extend(hist)
        self._pads = pads

    def reset_history(self) -> None:
        self._history.clear()
        self._pads = 0

    def draw_fading(self, stream: RandomStream, count: int) -> np.ndarray:
        m = self.m
        return self.pathloss[None] * complex_normal(stream, (count, m, m))

    def features_for(self, H: np.ndarray) -> np.ndarray:
        """Features for a sequence of channels (count, m, m), continuing the stored history."""
        k = self.cfg.K
        mags = np.abs(threshold_channel(H, self.cfg.eta)).transpose(0, 2, 1)
        count, m = H.shape[0], self.m
        hist = list(self._history)
        if k > 1 and len(hist) < k - 1:
            filler = hist[0] if hist else mags[0]
            missing = k - 1 - len(hist)
            # A sample is padded when its window reaches before the first matrix ever seen.
            self._pads += min(count, missing)
            hist = [filler] * missing + hist
        seq = np.concatenate([np.asarray(hist).reshape(-1, m, m), mags]) if k > 1 else mags
        lead = seq.shape[0] - count
        # y^k at position s = M_s @ y^{k-1} at position s-1, with y^0 = 1.
        # Position 0 has no predecessor; it is only read for k = 1.
        y_prev = np.ones((seq.shape[0], m))
        feats = np.empty((count, m, k))
        for kk in range(k):
            y = np.empty_like(y_prev)
            y[0] = seq[0] @ y_prev[0]
            y[1:] = np.einsum("sij,sj->si", seq[1:], y_prev[:-1])
            feats[:, :, kk] = y[lead:]
            y_prev = y
        if k > 1:
            self._history.extend(mags[-(k - 1):])
        if self.cfg.feature_transform == "log1p":
            feats = np.log1p(feats)
        return feats

    def draw_samples(self, stream: RandomStream, count: int) -> RaSamples:
        H = self.draw_fading(stream, count)
        return RaSamples(np.abs(H) ** 2, self.features_for(H))

    def batch_of(self, sample: RaSamples) -> RaSamples:
        return sample

    def powers(self, theta: np.ndarray, features: np.ndarray) -> np.ndarray:
        params = np.asarray(theta, dtype=np.float64).reshape(self.m, self.dims[0])
        return mlp_forward_batch(params, features)

    def evaluate(self, theta: np.ndarray, samples: RaSamples) -> np.ndarray:
        p = self.powers(theta, samples.features)
        return -rates_from_gains(p, samples.gains)

    def extra_metrics(self, values: np.ndarray) -> dict[str, float]:
        return {"sum_rate": float(-values.sum(axis=1).mean())}

    def initial_theta(self, master_seed: int) -> np.ndarray:
        parts = [
            mlp_init(RandomStream(master_seed, i, Purpose.INIT), self.cfg.K, self.cfg.init_scale)
            for i in range(self.m)
        ]
        return np.concatenate(parts)

    def random_power_sum_rate(self, stream: RandomStream, count: int) -> float:
        """Mean sum-rate with powers uniform on [0, power_max], independent per agent and sample."""
        H = self.draw_fading(stream, count)
        p = self.cfg.power_max * stream.uniforms(count * self.m).reshape(count, self.m)
        return float(rates_from_gains(p, np.abs(H) ** 2).sum(axis=1).mean())


def ra_cost_oracle(problem: PowerAllocation, ell: int, theta: np.ndarray, xi: RaSamples) -> float:
    """``-R_ell`` with every agent's power from its own policy on the shared sample ``xi``."""
    if xi.gains.ndim != 3 or xi.gains.shape[0] != 1:
        raise DimensionError("expected a single-sample batch")
    return float(problem.evaluate(theta, xi)[0, ell])

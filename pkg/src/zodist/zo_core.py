"""Gaussian randomized smoothing: smoothed values, scalar queries, variance constants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .numerics import RandomStream, gaussian_vector


@dataclass(frozen=True)
class SmoothingConfig:
    """Smoothing radius, batch size and whether both minibatches share samples."""

    mu: float
    batch_size: int = 1
    paired_samples: bool = False

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ConfigError(f"must be positive and finite, got {self.mu}", "smoothing.mu")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"must be an integer >= 1, got {self.batch_size}", "smoothing.batch_size")


@dataclass(frozen=True)
class TheoryConstants:
    L0: float = 0.0
    L: float = 0.0
    sigma: float = 0.0
    G: float = 0.0
    v: float = 0.0
    L_xi: float = 0.0

    def __post_init__(self):
        for name in ("L0", "L", "sigma", "G", "v", "L_xi"):
            value = getattr(self, name)
            if not value >= 0:
                raise ConfigError(f"must be non-negative, got {value}", f"theory.{name}")


def smoothed_value_mc(
    cost: Callable[[np.ndarray], float],
    theta: np.ndarray,
    mu: float,
    num_samples: int,
    stream: RandomStream,
) -> tuple[float, float]:
    """Monte-Carlo estimate of ``E_u[cost(theta + mu u)]`` and its standard error."""
    if num_samples < 2:
        raise ContractError("num_samples must be >= 2")
    theta = np.asarray(theta, dtype=np.float64)
    values = np.empty(num_samples)
    for j in range(num_samples):
        u = gaussian_vector(stream, theta.size)
        values[j] = cost(theta + mu * u)
        if not math.isfinite(values[j]):
            raise NumericError(f"cost returned {values[j]} at sample {j}", index=j)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(num_samples))


def compute_query(
    agent_id: int,
    unperturbed_values: Sequence[float],
    perturbed_values: Sequence[float],
    mu: float,
    m: int,
) -> float:
    """Scalar query ``(1/(mu m B)) * sum_j (F(theta, xi_j) - F(theta + mu u, xi'_j))``.

    The differences are accumulated left to right in plain float arithmetic so
    the result is reproducible bit for bit.
    """
    b = len(unperturbed_values)
    if b == 0 or b != len(perturbed_values):
        raise ContractError(
            f"agent {agent_id}: need two non-empty minibatches of equal size, "
            f"got {b} and {len(perturbed_values)}"
        )
    if not mu > 0:
        raise ContractError(f"agent {agent_id}: mu must be positive")
    if m < 1:
        raise ContractError(f"agent {agent_id}: m must be >= 1")
    total = 0.0
    for plain, perturbed in zip(unperturbed_values, perturbed_values):
        total += float(plain) - float(perturbed)
    return total / (mu * m * b)


def variance_bound(tc: TheoryConstants, n: int, cfg: SmoothingConfig) -> float:
    """Per-query estimator variance constant divided by the batch size.

    Unpaired mode includes the sample-mismatch term that grows as ``B / mu^2``;
    paired mode (both minibatches share samples) drops it but doubles the rest.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    b = cfg.batch_size
    mu = cfg.mu
    noise = tc.sigma**2 + tc.G**2
    smooth = mu**2 * tc.L**2 * (n + 6) ** 3
    if cfg.paired_samples:
        total = 8 * (n + 4) * noise + 2 * smooth
    else:
        if mu == 0:
            raise ZeroDivisionError("mu must be non-zero in unpaired mode")
        total = 4 * (n + 4) * noise + smooth + 4 * b * tc.L_xi**2 * tc.v**2 / mu**2
    return total / b

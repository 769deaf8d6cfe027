"""Theory constants, stepsize schedules, metrics rows and verification oracles."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .numerics import RandomStream, gaussian_vector

COHERENCE_MS = 25.0


class TheoryWarning(UserWarning):
    pass


@dataclass
class TheoryReport:
    M: float
    stepsize_upper: float
    eta_descent: float
    gamma_max: float
    dmax_bound: int
    sigma_tilde_sq: float | None = None
    realized_Dmax: int | None = None

    @property
    def compliant(self) -> bool:
        return self.eta_descent > 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def theory_constants(L: float, m: int, Dmax: int, gamma_max: float) -> TheoryReport:
    """``M = L (2 m Dmax + 1) / 2``, admissible stepsizes below ``1/M``, margin ``1 - M gamma_max``."""
    if not L > 0:
        raise ContractError("L must be positive")
    M = L * (2 * m * Dmax + 1) / 2
    eta = 1.0 - M * gamma_max
    report = TheoryReport(M=M, stepsize_upper=1.0 / M, eta_descent=eta, gamma_max=gamma_max,
                          dmax_bound=int(Dmax))
    if not eta > 0:
        warnings.warn(f"largest stepsize {gamma_max:g} >= 1/M = {1 / M:g}; descent margin {eta:g}",
                      TheoryWarning, stacklevel=2)
    return report


STEPSIZE_KINDS = ("power_quarter", "inv_sqrt", "constant")


def stepsize(t: int, kind: str, gamma0: float, r: float = 1.0) -> float:
    """``power_quarter``: gamma0 / (t+1)^0.25; ``inv_sqrt``: gamma0 / sqrt(t+r); ``constant``: gamma0."""
    if t < 0:
        raise ContractError("t must be >= 0")
    if kind == "power_quarter":
        return gamma0 / (t + 1) ** 0.25
    if kind == "inv_sqrt":
        if not r > 0:
            raise ContractError("r must be positive for inv_sqrt")
        return gamma0 / math.sqrt(t + r)
    if kind == "constant":
        return gamma0
    raise ConfigError(f"unknown stepsize kind {kind!r}", "stepsize.kind")


@dataclass(frozen=True)
class StepsizeSchedule:
    kind: str = "power_quarter"
    gamma0: float = 0.5
    r: float = 1.0

    def __post_init__(self):
        if self.kind not in STEPSIZE_KINDS:
            raise ConfigError(f"must be one of {STEPSIZE_KINDS}", "stepsize.kind")
        if not self.gamma0 > 0:
            raise ConfigError("must be positive", "stepsize.gamma0")
        if self.kind == "inv_sqrt" and not self.r > 0:
            raise ConfigError("must be positive", "stepsize.r")

    def __call__(self, t: int) -> float:
        return stepsize(t, self.kind, self.gamma0, self.r)

    @property
    def gamma_max(self) -> float:
        # all schedules are non-increasing in t
        return self(0)


def wall_time_axis(iterations: Sequence[int] | np.ndarray, batch_size: int,
                   coherence_ms: float = COHERENCE_MS) -> np.ndarray:
    """Elapsed milliseconds when each sample pair occupies one coherence interval."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    return np.asarray(iterations, dtype=np.float64) * batch_size * coherence_ms


def finite_diff_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    if not h > 0:
        raise ContractError("h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty(theta.size)
    for k in range(theta.size):
        e = np.zeros(theta.size)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def mc_smoothed_gradient(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    mu: float,
    num_samples: int,
    stream: RandomStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``(f(theta + mu u) - f(theta)) / mu * u`` over Gaussian ``u`` and its per-component SE."""
    if num_samples < 2:
        raise ContractError("num_samples must be >= 2")
    theta = np.asarray(theta, dtype=np.float64)
    f0 = f(theta)
    terms = np.empty((num_samples, theta.size))
    for j in range(num_samples):
        u = gaussian_vector(stream, theta.size)
        terms[j] = (f(theta + mu * u) - f0) / mu * u
    return terms.mean(axis=0), terms.std(axis=0, ddof=1) / math.sqrt(num_samples)


def running_min(values: Sequence[float]) -> np.ndarray:
    return np.minimum.accumulate(np.asarray(values, dtype=np.float64))


def loglog_slope(t: Sequence[float], y: Sequence[float], lo: float, hi: float) -> float:
    """Least-squares slope of log y against log t restricted to lo <= t <= hi."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (t >= lo) & (t <= hi) & (y > 0)
    if keep.sum() < 2:
        raise ContractError("need at least two positive points in range")
    return float(np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)[0])


# ---------------------------------------------------------------------------
# Metrics rows and CSV
# ---------------------------------------------------------------------------


@dataclass
class MetricsRow:
    t: int
    objective_mean: float
    agent_objectives: list[float]
    objective_exact: float = math.nan
    grad_sq: float = math.nan
    running_min_grad_sq: float = math.nan
    staleness_mean: float = math.nan
    staleness_max: float = math.nan
    param_staleness_mean: float = math.nan
    param_staleness_max: float = math.nan
    sum_rate: float = math.nan
    queries: int = 0
    updates: int = 0
    stale_dropped: int = 0
    pads: int = 0
    elapsed_ms: float = 0.0


SCALAR_COLUMNS = [
    "t", "objective_mean", "objective_exact", "grad_sq", "running_min_grad_sq",
    "staleness_mean", "staleness_max", "param_staleness_mean", "param_staleness_max",
    "sum_rate", "queries", "updates", "stale_dropped", "pads", "elapsed_ms",
]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def csv_header(m: int) -> list[str]:
    return SCALAR_COLUMNS + [f"objective_{i}" for i in range(m)]


def row_values(row: MetricsRow) -> list[str]:
    return [fmt(getattr(row, c)) for c in SCALAR_COLUMNS] + [fmt(v) for v in row.agent_objectives]


def emit_csv(rows: Sequence[MetricsRow], path: str | Path, m: int | None = None) -> Path:
    """Header plus one line per row, 17 significant digits, LF endings."""
    path = Path(path)
    if m is None:
        m = len(rows[0].agent_objectives) if rows else 0
    lines = [",".join(csv_header(m))]
    lines += [",".join(row_values(r)) for r in rows]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV {path}: {exc}") from exc
    return path


def mean_rows(replicates: Sequence[Sequence[MetricsRow]]) -> list[MetricsRow]:
    """Tick-wise mean over replicates (counters averaged as floats)."""
    if not replicates:
        return []
    length = min(len(r) for r in replicates)
    out = []
    for k in range(length):
        rows = [r[k] for r in replicates]
        kw = {}
        for c in SCALAR_COLUMNS:
            vals = [getattr(r, c) for r in rows]
            kw[c] = rows[0].t if c == "t" else float(np.mean(vals))
        kw["agent_objectives"] = np.mean([r.agent_objectives for r in rows], axis=0).tolist()
        out.append(MetricsRow(**kw))
    return out


def read_csv_column(path: str | Path, column: str) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    idx = header.index(column)
    return np.array([float(line.split(",")[idx]) for line in lines[1:]])

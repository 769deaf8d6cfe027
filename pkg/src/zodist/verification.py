"""Monte-Carlo checks of the oracle and smoothing properties the method relies on.

Each check returns a plain dict with the measured statistics and a ``passed``
flag, so the same code backs the ``verify`` preset and the acceptance tests.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .agent import AgentState, PerturbationBuffer, QueryMemory, QueryRecord, build_update_direction
from .diagnostics import StepsizeSchedule, finite_diff_gradient, mc_smoothed_gradient
from .network import build_block_overlap_graph
from .numerics import GLOBAL_AGENT, Purpose, RandomStream
from .problems import CoupledQuadratic, coupled_quadratic, logcosh
from .scheduler import ActivityConfig, SimConfig, init_world, tick
from .zo_core import SmoothingConfig, compute_query, smoothed_value_mc, variance_bound


@dataclass
class DirectionDraws:
    """``s`` has shape ``(num, n)``; the raw pieces allow replaying draws through agents."""

    s: np.ndarray
    u: np.ndarray
    values_a: np.ndarray
    values_b: np.ndarray


def sample_update_directions(
    problem: CoupledQuadratic,
    theta: np.ndarray,
    smoothing: SmoothingConfig,
    num: int,
    seed: int = 0,
) -> DirectionDraws:
    """Fresh zero-delay, all-active update directions at a fixed ``theta``.

    Every agent queries with its own perturbation and immediately combines the
    queries of its receive set, so ``s[k]`` stacks all agents' directions.
    """
    m, n, B, mu = problem.m, problem.n, smoothing.batch_size, smoothing.mu
    theta = np.asarray(theta, dtype=np.float64)
    u = RandomStream(seed, GLOBAL_AGENT, Purpose.PERTURBATION, lane=7).normals(num * n).reshape(num, n)
    samples = RandomStream(seed, GLOBAL_AGENT, Purpose.SAMPLE, lane=7)
    base = np.broadcast_to(theta, (num, n))
    pert = base + mu * u
    values_a = np.empty((B, num, m))
    values_b = np.empty((B, num, m))
    for j in range(B):
        xi_a = samples.normals(num * m).reshape(num, m)
        xi_b = xi_a if smoothing.paired_samples else samples.normals(num * m).reshape(num, m)
        values_a[j] = problem.evaluate_many(base, xi_a)
        values_b[j] = problem.evaluate_many(pert, xi_b)
    r = np.zeros((num, m))
    for j in range(B):
        r += values_a[j] - values_b[j]
    r /= mu * m * B
    o = problem.offsets
    s = np.empty((num, n))
    for i in range(m):
        coeff = r[:, sorted(problem.rx_sets[i])].sum(axis=1)
        s[:, o[i] : o[i + 1]] = coeff[:, None] * u[:, o[i] : o[i + 1]]
    return DirectionDraws(s=s, u=u, values_a=values_a, values_b=values_b)


def replay_through_agents(problem: CoupledQuadratic, draws: DirectionDraws, k: int, mu: float) -> np.ndarray:
    """Rebuild draw ``k`` with the agent-side query and update code."""
    m = problem.m
    o = problem.offsets
    records = [
        QueryRecord(ell, 0, compute_query(ell, draws.values_a[:, k, ell].tolist(),
                                          draws.values_b[:, k, ell].tolist(), mu, m))
        for ell in range(m)
    ]
    parts = []
    for i in range(m):
        buf = PerturbationBuffer(1, agent=i)
        buf.push(0, draws.u[k, o[i] : o[i + 1]])
        state = AgentState(
            id=i,
            theta=np.zeros(problem.dims[i]),
            query_memory=QueryMemory(records),
            perturbation_buffer=buf,
            rx_neighbors=frozenset(problem.rx_sets[i]),
            tx_neighbors=frozenset(problem.tx_sets[i]),
            stepsize=StepsizeSchedule("constant", 1.0),
        )
        parts.append(build_update_direction(state, 0, True))
    return np.concatenate(parts)


def _setup(m: int, n_i: int, noise_sd: float, seed: int) -> tuple[CoupledQuadratic, np.ndarray]:
    problem = coupled_quadratic(m, n_i, noise_sd=noise_sd, seed=seed)
    return problem, problem.initial_theta(seed)


def check_unbiased(paired: bool, *, m: int = 3, n_i: int = 2, mu: float = 0.5, noise_sd: float = 0.1,
                   num: int = 200_000, batch_size: int = 1, z_max: float = 4.0, seed: int = 0) -> dict:
    """MC mean of the update direction against ``-grad f`` (exact for quadratics)."""
    problem, theta = _setup(m, n_i, noise_sd, seed)
    draws = sample_update_directions(problem, theta, SmoothingConfig(mu, batch_size, paired), num, seed)
    mean = draws.s.mean(axis=0)
    se = draws.s.std(axis=0, ddof=1) / math.sqrt(num)
    target = -problem.gradient(theta)
    z = np.abs(mean - target) / se
    return {
        "paired": paired,
        "num": num,
        "mean": mean.tolist(),
        "target": target.tolist(),
        "se": se.tolist(),
        "max_z": float(z.max()),
        "passed": bool((z <= z_max).all()),
    }


def check_variance(paired: bool, batch_size: int, *, m: int = 3, n_i: int = 2, mu: float = 0.5,
                   noise_sd: float = 0.1, num: int = 200_000, seed: int = 0) -> dict:
    """Largest per-component variance of the direction against the theoretical constant."""
    problem, theta = _setup(m, n_i, noise_sd, seed)
    cfg = SmoothingConfig(mu, batch_size, paired)
    draws = sample_update_directions(problem, theta, cfg, num, seed + 1)
    var = draws.s.var(axis=0, ddof=1)
    bound = variance_bound(problem.theory_constants(theta), problem.n, cfg)
    return {
        "paired": paired,
        "batch_size": batch_size,
        "max_variance": float(var.max()),
        "bound": float(bound),
        "passed": bool(var.max() < bound),
    }


SMOOTHING_THETA = np.array([0.5, -1.0, 0.2, 1.5, -0.3, 0.0])


def check_smoothing_bounds(mu: float, *, num: int = 100_000, seed: int = 0, L: float = 1.0) -> dict:
    """Value and gradient gaps between log-cosh and its Gaussian smoothing."""
    theta = SMOOTHING_THETA
    n = theta.size
    f0 = logcosh(theta)
    value, value_se = smoothed_value_mc(logcosh, theta, mu, num, RandomStream(seed, GLOBAL_AGENT, Purpose.SAMPLE, lane=8))
    grad, grad_se = mc_smoothed_gradient(logcosh, theta, mu, num,
                                         RandomStream(seed, GLOBAL_AGENT, Purpose.SAMPLE, lane=9))
    fd = finite_diff_gradient(logcosh, theta, 1e-5)
    value_gap = abs(value - f0)
    grad_gap = float(np.linalg.norm(grad - fd))
    value_bound = mu**2 * L * n / 2 + 3 * value_se
    grad_bound = mu / 2 * L * (n + 3) ** 1.5 + 3 * float(np.linalg.norm(grad_se))
    return {
        "mu": mu,
        "value_gap": value_gap,
        "value_bound": value_bound,
        "grad_gap": grad_gap,
        "grad_bound": grad_bound,
        "passed": bool(value_gap <= value_bound and grad_gap <= grad_bound),
    }


def check_delay_trace(mode: str, p: float, seed: int, *, m: int = 6, kappa: int = 2, D: int = 3,
                      d_comm: int = 2, ticks: int = 400) -> dict:
    """Run tick by tick and inspect every stored timestamp after each tick."""
    problem = coupled_quadratic(m, 2, seed=seed)
    sim = SimConfig(
        smoothing=SmoothingConfig(0.1, 1, True),
        activity=ActivityConfig(p, p, p, D, mode),
        stepsize=StepsizeSchedule("inv_sqrt", 0.01),
        d_comm=d_comm,
        master_seed=seed,
        grad_eval_every=10**9,
        track_param_staleness=False,
    )
    graph = build_block_overlap_graph(m, kappa) if mode == "gossip" else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        world = init_world(problem, sim, graph)
    violations = 0
    worst = 0
    full_since = None
    for _ in range(ticks):
        tick(world)
        t = world.t - 1
        full = True
        for agent in world.agents:
            for rec in agent.query_memory:
                age = t - rec.timestamp
                worst = max(worst, age)
                if age < 0 or age > world.dmax:
                    violations += 1
            if len(agent.query_memory) < m:
                full = False
        if full and full_since is None:
            full_since = t
        elif not full:
            full_since = None
    ok = violations == 0 and worst <= world.dmax
    if mode == "gossip":
        ok = ok and full_since is not None
    return {
        "mode": mode,
        "p": p,
        "seed": seed,
        "violations": violations,
        "realized_Dmax": worst,
        "dmax_bound": world.dmax,
        "full_information_from": full_since,
        "passed": bool(ok),
    }


def run_verification(seed: int = 0, num: int = 200_000) -> dict:
    checks = []
    for paired in (True, False):
        checks.append({"name": f"unbiased_{'paired' if paired else 'unpaired'}",
                       **check_unbiased(paired, num=num, seed=seed)})
        for b in (1, 10):
            checks.append({"name": f"variance_{'paired' if paired else 'unpaired'}_B{b}",
                           **check_variance(paired, b, num=num, seed=seed)})
    for mu in (0.1, 0.5, 1.0):
        checks.append({"name": f"smoothing_mu{mu}", **check_smoothing_bounds(mu, num=num // 2, seed=seed)})
    for mode in ("direct", "gossip"):
        for p in (0.25, 0.9):
            checks.append({"name": f"delays_{mode}_p{p}", **check_delay_trace(mode, p, seed)})
    return {"seed": seed, "checks": checks, "all_passed": all(c["passed"] for c in checks)}

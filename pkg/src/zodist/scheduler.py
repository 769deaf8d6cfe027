"""Global clock and per-tick phase sequence for the direct and gossip protocols.

One tick ``t`` runs, in order:

1. activity draws (query / update / transmit) for every agent;
2. unperturbed evaluation slot at the joint parameters ``theta^t``;
3. perturbed evaluation slot at ``theta^t + mu u^t`` with every agent perturbed;
4. querying agents form their scalar query and store it;
5. broadcasting (own record to dependents, or the whole memory to graph neighbors);
6. delivery of due messages into the receivers' memories;
7. delay-invariant check, then updating agents apply their local step;
8. every agent draws and stores ``u^{t+1}``;
9. metrics for tick ``t``.

Step 8 runs after the update so a buffer of capacity ``Dmax + 1`` still holds
``u^{t - Dmax}`` when it is needed.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .agent import (
    AgentState,
    PerturbationBuffer,
    QueryMemory,
    QueryRecord,
    apply_update,
    build_update_direction,
)
from .diagnostics import MetricsRow, StepsizeSchedule, TheoryReport, theory_constants
from .errors import (
    ConfigError,
    ContractError,
    DelayInvariantError,
    SimulationError,
    ZodistError,
)
from .network import Graph, TransportState, check_connected, deliver_due, diameter, send
from .numerics import GLOBAL_AGENT, Purpose, RandomStream, gaussian_vector
from .problems import Problem
from .zo_core import SmoothingConfig, compute_query, variance_bound

MODES = ("direct", "gossip")
ROLES = ("query", "update", "transmit")


class BufferCapacityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ActivityConfig:
    """Activity probabilities and the asynchrony window ``D``.

    ``explicit_schedules`` maps agent id to ``{role: [ticks]}``; an agent with
    an explicit schedule ignores the probabilities and forcing for every role
    (a missing role means never active).  ``force=False`` disables the forcing
    rule that keeps every agent active at least once per window of D ticks.
    """

    p_q: float = 1.0
    p_u: float = 1.0
    p_tx: float = 1.0
    D: int = 1
    mode: str = "direct"
    explicit_schedules: dict[int, dict[str, list[int]]] | None = None
    force: bool = True

    def __post_init__(self):
        for name in ("p_q", "p_u", "p_tx"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"must be in [0, 1], got {p}", f"activity.{name}")
        if int(self.D) != self.D or self.D < 1:
            raise ConfigError(f"must be a positive integer, got {self.D}", "activity.D")
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}, got {self.mode!r}", "activity.mode")
        if self.explicit_schedules:
            for agent, roles in self.explicit_schedules.items():
                for role in roles:
                    if role not in ROLES:
                        raise ConfigError(f"unknown role {role!r}", f"activity.explicit_schedules.{agent}")


class Activity(NamedTuple):
    query: bool
    update: bool
    transmit: bool


def sample_activity(
    cfg: ActivityConfig,
    agent_id: int,
    t: int,
    history: dict[str, int],
    stream: RandomStream,
) -> Activity:
    """Bernoulli activity with forcing after ``D - 1`` idle ticks in a role.

    ``history`` maps role to the last tick the agent was active in it (-1 if
    never).  Three uniforms are consumed every call so stream positions do not
    depend on the outcome.  In direct mode an agent transmits exactly when it
    queries.
    """
    u = stream.uniforms(3)
    if cfg.explicit_schedules and agent_id in cfg.explicit_schedules:
        sched = cfg.explicit_schedules[agent_id]
        q = t in sched.get("query", ())
        up = t in sched.get("update", ())
        tx = t in sched.get("transmit", ())
    else:
        q = bool(u[0] < cfg.p_q)
        up = bool(u[1] < cfg.p_u)
        tx = bool(u[2] < cfg.p_tx)
        if cfg.force:
            q = q or t - history.get("query", -1) >= cfg.D
            up = up or t - history.get("update", -1) >= cfg.D
            tx = tx or t - history.get("transmit", -1) >= cfg.D
    if cfg.mode == "direct":
        tx = q
    return Activity(q, up, tx)


def conservative_dmax(activity: ActivityConfig, d_comm: int, graph: Graph | None) -> int:
    """Largest record age the protocol can produce under the forcing rule.

    Direct: a query at least every D ticks plus one hop.  Gossip: each hop adds
    up to D ticks of waiting for the relay's next transmission plus the link
    delay, over at most ``diameter`` hops.
    """
    wait = activity.D - 1
    if activity.mode == "direct":
        return wait + d_comm
    if graph is None:
        raise ConfigError("gossip mode needs a communication graph", "graph")
    return wait + diameter(graph) * (activity.D + d_comm)


@dataclass
class SimConfig:
    smoothing: SmoothingConfig
    activity: ActivityConfig = field(default_factory=ActivityConfig)
    stepsize: StepsizeSchedule = field(default_factory=StepsizeSchedule)
    d_comm: int = 1
    fixed_delay: bool = False
    master_seed: int = 0
    dmax: int | None = None
    buffer_capacity: int | None = None
    grad_eval_every: int = 100
    grad_mc_samples: int = 0
    track_param_staleness: bool = True
    record_activity: bool = False


@dataclass
class WorldState:
    t: int
    agents: list[AgentState]
    transport: TransportState
    problem: Problem
    config: SimConfig
    graph: Graph
    dmax: int
    metrics: list[MetricsRow] = field(default_factory=list)
    theta_history: deque = field(default_factory=deque)
    realized_dmax: int = 0
    full_info_tick: int | None = None
    running_min_grad_sq: float = math.inf
    queries: int = 0
    updates: int = 0
    activity_log: list[tuple[int, int, bool, bool, bool]] = field(default_factory=list)
    report: TheoryReport | None = None
    _sample_stream: RandomStream | None = None
    _diag_stream: RandomStream | None = None
    _pert_streams: list[RandomStream] = field(default_factory=list)
    _sched_streams: list[RandomStream] = field(default_factory=list)
    _delay_streams: list[RandomStream] = field(default_factory=list)
    _last_grad_sq: float = math.nan
    _inject: list[tuple[int, QueryRecord]] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.agents)

    def joint_theta(self) -> np.ndarray:
        return np.concatenate([a.theta for a in self.agents])

    def theta_at(self, tau: int) -> np.ndarray:
        if not self.theta_history:
            raise ZodistError("parameter history is empty")
        first = self.theta_history[0][0]
        idx = tau - first
        if idx < 0 or idx >= len(self.theta_history):
            raise ZodistError(
                f"parameter window holds [{first}, {self.theta_history[-1][0]}], asked for {tau}"
            )
        return self.theta_history[idx][1]

    def inject_record(self, agent: int, record: QueryRecord) -> None:
        """Test hook: place ``record`` into ``agent``'s memory at the next delivery phase."""
        self._inject.append((agent, record))


def communication_graph(problem: Problem, activity: ActivityConfig, graph: Graph | None) -> Graph:
    if activity.mode == "direct":
        return Graph.from_neighbor_sets([sorted(s - {i}) for i, s in enumerate(problem.tx_sets)])
    if graph is None:
        raise ConfigError("gossip mode needs a communication graph", "graph")
    if graph.m != problem.m:
        raise ConfigError(f"graph has {graph.m} nodes, problem has {problem.m} agents", "graph")
    return graph


def init_world(problem: Problem, cfg: SimConfig, graph: Graph | None = None,
               theta0: np.ndarray | None = None) -> WorldState:
    act = cfg.activity
    g = communication_graph(problem, act, graph)
    if act.mode == "gossip" and not check_connected(g):
        raise ConfigError("gossip mode requires a strongly connected graph", "graph")
    dmax = cfg.dmax if cfg.dmax is not None else conservative_dmax(act, cfg.d_comm, g)
    capacity = cfg.buffer_capacity if cfg.buffer_capacity is not None else dmax + 1
    if capacity < dmax + 1:
        warnings.warn(
            f"perturbation buffer capacity {capacity} is below Dmax + 1 = {dmax + 1}; "
            "updates may hit a buffer underrun",
            BufferCapacityWarning,
            stacklevel=2,
        )
    seed = cfg.master_seed
    theta = problem.initial_theta(seed) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    if theta.shape != (problem.n,):
        raise ConfigError(f"initial parameters must have length {problem.n}", "theta0")
    o = problem.offsets
    pert_streams = [RandomStream(seed, i, Purpose.PERTURBATION) for i in range(problem.m)]
    agents = []
    for i in range(problem.m):
        buf = PerturbationBuffer(capacity, agent=i)
        buf.push(0, gaussian_vector(pert_streams[i], problem.dims[i]))
        agents.append(
            AgentState(
                id=i,
                theta=theta[o[i] : o[i + 1]].copy(),
                query_memory=QueryMemory(),
                perturbation_buffer=buf,
                rx_neighbors=frozenset(problem.rx_sets[i]),
                tx_neighbors=frozenset(problem.tx_sets[i]),
                stepsize=cfg.stepsize,
            )
        )
    world = WorldState(
        t=0,
        agents=agents,
        transport=TransportState(g, cfg.d_comm, cfg.fixed_delay),
        problem=problem,
        config=cfg,
        graph=g,
        dmax=dmax,
        theta_history=deque(maxlen=dmax + 1),
    )
    world._sample_stream = RandomStream(seed, GLOBAL_AGENT, Purpose.SAMPLE)
    world._diag_stream = RandomStream(seed, GLOBAL_AGENT, Purpose.SAMPLE, lane=1)
    world._pert_streams = pert_streams
    world._sched_streams = [RandomStream(seed, i, Purpose.SCHEDULE) for i in range(problem.m)]
    world._delay_streams = [RandomStream(seed, i, Purpose.DELAY) for i in range(problem.m)]
    world.theta_history.append((0, theta.copy()))
    world.report = _theory_report(world, theta)
    return world


def _theory_report(world: WorldState, theta: np.ndarray) -> TheoryReport | None:
    tc = world.problem.theory_constants(theta)
    if tc is None or not tc.L > 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = theory_constants(tc.L, world.m, world.dmax, world.config.stepsize.gamma_max)
    report.sigma_tilde_sq = variance_bound(tc, world.problem.n, world.config.smoothing) * world.config.smoothing.batch_size
    return report


def check_delay_invariant(world: WorldState) -> tuple[float, int]:
    """Assert every stored record is at most ``dmax`` old; return (mean, max) age."""
    t = world.t
    total = 0
    count = 0
    worst = 0
    for agent in world.agents:
        for rec in agent.query_memory:
            age = t - rec.timestamp
            if age < 0 or age > world.dmax:
                raise DelayInvariantError(t, agent.id, rec.source_agent, rec.timestamp, world.dmax)
            total += age
            count += 1
            worst = max(worst, age)
    return (total / count if count else math.nan), worst


def measure_staleness(world: WorldState) -> tuple[float, float]:
    """Mean and max of ``||theta^t - theta^T||^2`` over agents and stored dependency records."""
    current = world.theta_at(world.t)
    vals = []
    cache: dict[int, float] = {}
    for agent in world.agents:
        for source in sorted(agent.rx_neighbors):
            rec = agent.query_memory.get(source)
            if rec is None:
                continue
            if rec.timestamp not in cache:
                d = current - world.theta_at(rec.timestamp)
                cache[rec.timestamp] = float(d @ d)
            vals.append(cache[rec.timestamp])
    if not vals:
        return math.nan, math.nan
    return float(np.mean(vals)), float(np.max(vals))


def _has_full_info(world: WorldState) -> bool:
    return all(len(a.query_memory) == world.m for a in world.agents)


def _mc_grad_sq(world: WorldState, theta: np.ndarray) -> float:
    cfg = world.config
    problem = world.problem
    n = cfg.grad_mc_samples
    if n < 2:
        return math.nan
    mu = cfg.smoothing.mu
    stream = world._diag_stream
    state = problem.get_state()
    samples = problem.draw_samples(stream, n)
    f0 = problem.evaluate(theta, samples).mean(axis=1)
    acc = np.zeros(problem.n)
    for j in range(n):
        u = gaussian_vector(stream, problem.n)
        sub = _take(samples, j)
        f1 = problem.evaluate(theta + mu * u, sub).mean(axis=1)[0]
        acc += (f1 - f0[j]) / mu * u
    problem.set_state(state)
    g = acc / n
    return float(g @ g)


def _take(samples, j):
    if isinstance(samples, np.ndarray):
        return samples[j : j + 1]
    return type(samples)(**{k: v[j : j + 1] for k, v in vars(samples).items()})


def tick(world: WorldState) -> WorldState:
    t = world.t
    cfg = world.config
    sm = cfg.smoothing
    problem = world.problem
    m = world.m
    phase = "activity"
    agent_ctx: int | None = None
    try:
        acts = []
        for a in world.agents:
            hist = {"query": a.last_query, "update": a.last_update, "transmit": a.last_transmit}
            acts.append(sample_activity(cfg.activity, a.id, t, hist, world._sched_streams[a.id]))
        if cfg.record_activity:
            world.activity_log.extend((t, i, *act) for i, act in enumerate(acts))

        phase = "unperturbed slot"
        theta = world.joint_theta()
        samples_a = problem.draw_samples(world._sample_stream, sm.batch_size)
        values_a = problem.evaluate(theta, samples_a)

        phase = "perturbed slot"
        u_t = np.concatenate([a.perturbation_buffer.lookup(t) for a in world.agents])
        samples_b = samples_a if sm.paired_samples else problem.draw_samples(world._sample_stream, sm.batch_size)
        values_b = problem.evaluate(theta + sm.mu * u_t, samples_b)

        phase = "query"
        for a, act in zip(world.agents, acts):
            if act.query:
                agent_ctx = a.id
                r = compute_query(a.id, values_a[:, a.id].tolist(), values_b[:, a.id].tolist(), sm.mu, m)
                a.query_memory.ingest(QueryRecord(a.id, t, r))
                a.last_query = t
                world.queries += 1
        agent_ctx = None

        phase = "broadcast"
        for a, act in zip(world.agents, acts):
            if not act.transmit:
                continue
            agent_ctx = a.id
            a.last_transmit = t
            if cfg.activity.mode == "direct":
                payload = (a.query_memory.get(a.id),)
                targets = sorted(a.tx_neighbors - {a.id})
            else:
                payload = a.query_memory.snapshot()
                targets = world.graph.out_neighbors(a.id)
            if payload and payload[0] is not None and targets:
                send(world.transport, [(a.id, j, payload) for j in targets], t, world._delay_streams[a.id])
        agent_ctx = None

        phase = "delivery"
        for msg in deliver_due(world.transport, t):
            mem = world.agents[msg.dst].query_memory
            for rec in msg.payload:
                mem.ingest(rec)
        for dst, rec in world._inject:
            world.agents[dst].query_memory._force(rec)
        world._inject.clear()

        phase = "invariants"
        age_mean, age_max = check_delay_invariant(world)
        world.realized_dmax = max(world.realized_dmax, age_max)
        if world.full_info_tick is None and _has_full_info(world):
            world.full_info_tick = t
        if cfg.track_param_staleness:
            pst_mean, pst_max = measure_staleness(world)
        else:
            pst_mean = pst_max = math.nan

        phase = "update"
        gamma = cfg.stepsize(t)
        for a, act in zip(world.agents, acts):
            if not act.update:
                continue
            agent_ctx = a.id
            s = build_update_direction(a, t, True)
            apply_update(a, gamma, s)
            a.last_update = t
            a.n_updates += 1
            world.updates += 1
        agent_ctx = None

        phase = "perturbation"
        for a in world.agents:
            a.perturbation_buffer.push(t + 1, gaussian_vector(world._pert_streams[a.id], a.dim))

        phase = "metrics"
        objective_exact = problem.objective(theta)
        grad = problem.gradient(theta)
        if grad is not None:
            grad_sq = float(grad @ grad)
        elif cfg.grad_mc_samples >= 2 and t % cfg.grad_eval_every == 0:
            grad_sq = _mc_grad_sq(world, theta)
            world._last_grad_sq = grad_sq
        else:
            grad_sq = world._last_grad_sq
        if not math.isnan(grad_sq):
            world.running_min_grad_sq = min(world.running_min_grad_sq, grad_sq)
        agent_obj = values_a.mean(axis=0)
        extra = problem.extra_metrics(values_a)
        world.metrics.append(
            MetricsRow(
                t=t,
                objective_mean=float(agent_obj.mean()),
                agent_objectives=agent_obj.tolist(),
                objective_exact=math.nan if objective_exact is None else objective_exact,
                grad_sq=grad_sq,
                running_min_grad_sq=world.running_min_grad_sq if math.isfinite(world.running_min_grad_sq) else math.nan,
                staleness_mean=age_mean,
                staleness_max=float(age_max),
                param_staleness_mean=pst_mean,
                param_staleness_max=pst_max,
                sum_rate=extra.get("sum_rate", math.nan),
                queries=world.queries,
                updates=world.updates,
                stale_dropped=sum(a.query_memory.stale_dropped for a in world.agents),
                pads=problem.pad_count,
                elapsed_ms=float(t * sm.batch_size * 25.0),
            )
        )
    except SimulationError:
        raise
    except ZodistError as exc:
        raise SimulationError(t, phase, exc, agent=getattr(exc, "agent", None) if agent_ctx is None else agent_ctx) from exc
    except (ValueError, ArithmeticError) as exc:
        raise SimulationError(t, phase, exc, agent=agent_ctx) from exc

    world.t = t + 1
    world.theta_history.append((world.t, world.joint_theta()))
    return world


def run(world: WorldState, num_ticks: int) -> WorldState:
    if num_ticks < 1:
        raise ContractError("num_ticks must be >= 1")
    for _ in range(num_ticks):
        tick(world)
        for a in world.agents:
            buf = a.perturbation_buffer
            if len(buf) != min(world.t + 1, buf.capacity):
                raise SimulationError(world.t, "buffer check",
                                      ZodistError(f"buffer holds {len(buf)} entries"), agent=a.id)
    if world.report is not None:
        world.report.realized_Dmax = world.realized_dmax
    return world

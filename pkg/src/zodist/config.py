"""JSON run configuration, presets and the experiment runner.

A run is a pure function of its :class:`RunConfig`.  Unknown keys are
rejected with their dotted path so typos never silently fall back to defaults.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .diagnostics import StepsizeSchedule, emit_csv, mean_rows, theory_constants
from .errors import ConfigError
from .network import Graph, build_block_overlap_graph, load_adjacency, neighbor_counts
from .problems import PowerAllocation, Problem, RaConfig, coupled_nonconvex, coupled_quadratic
from .scheduler import ActivityConfig, SimConfig, WorldState, init_world, run
from .zo_core import SmoothingConfig


@dataclass
class ProblemSection:
    kind: str = "quadratic"
    m: int = 4
    n_i: int = 2
    strength: float = 0.2
    noise_sd: float = 0.0
    target_scale: float = 1.0
    init_scale: float = 1.0
    problem_seed: int | None = None
    K: int = 5
    eta: float = 0.01
    feature_transform: str = "none"


@dataclass
class ActivitySection:
    p_q: float = 1.0
    p_u: float = 1.0
    p_tx: float = 1.0
    D: int = 1
    mode: str = "direct"
    force: bool = True
    explicit_schedules: dict | None = None


@dataclass
class SmoothingSection:
    mu: float = 1.0
    batch_size: int = 1
    paired_samples: bool = False


@dataclass
class GraphSection:
    kappa: int | None = None
    adjacency_file: str | None = None


@dataclass
class NetworkSection:
    d_comm: int = 1
    fixed_delay: bool = False


@dataclass
class StepsizeSection:
    kind: str = "power_quarter"
    gamma0: float = 0.5
    r: float = 1.0
    theory_fraction: float | None = None


@dataclass
class DiagnosticsSection:
    grad_eval_every: int = 100
    grad_mc_samples: int = 0
    track_param_staleness: bool = True


@dataclass
class RunConfig:
    name: str = "run"
    problem: ProblemSection = field(default_factory=ProblemSection)
    activity: ActivitySection = field(default_factory=ActivitySection)
    smoothing: SmoothingSection = field(default_factory=SmoothingSection)
    graph: GraphSection = field(default_factory=GraphSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    stepsize: StepsizeSection = field(default_factory=StepsizeSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    num_ticks: int = 1000
    master_seed: int = 0
    replicates: int = 1
    dmax: int | None = None
    buffer_capacity: int | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        return _build(cls, data, "")

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        return cls.from_dict(json.loads(text))


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path or "<root>")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError("unknown field", where)
        ftype = fields[key].type
        sub = _SECTIONS.get(ftype)
        if sub is not None:
            kwargs[key] = _build(sub, value, where)
        else:
            kwargs[key] = _check_type(value, ftype, where)
    return cls(**kwargs)


_SCALARS = {"int": (int,), "float": (int, float), "bool": (bool,), "str": (str,), "dict": (dict,)}


def _check_type(value: Any, ftype: str, where: str) -> Any:
    names = [t.strip() for t in ftype.split("|")]
    if value is None:
        if "None" in names:
            return None
        raise ConfigError("must not be null", where)
    for name in names:
        allowed = _SCALARS.get(name)
        if allowed is None:
            continue
        if isinstance(value, bool) and name != "bool":
            continue
        if isinstance(value, allowed):
            return float(value) if name == "float" else value
    raise ConfigError(f"expected {ftype}, got {type(value).__name__}", where)


_SECTIONS = {
    "ProblemSection": ProblemSection,
    "ActivitySection": ActivitySection,
    "SmoothingSection": SmoothingSection,
    "GraphSection": GraphSection,
    "NetworkSection": NetworkSection,
    "StepsizeSection": StepsizeSection,
    "DiagnosticsSection": DiagnosticsSection,
}


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``dotted.key=value`` overrides; values parse as JSON, else as strings."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value", "--set")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError("unknown field", key)
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError("unknown field", key)
        node[parts[-1]] = value
    return RunConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Building simulation objects
# ---------------------------------------------------------------------------


def build_problem(cfg: RunConfig) -> Problem:
    p = cfg.problem
    seed = cfg.master_seed if p.problem_seed is None else p.problem_seed
    if p.kind == "quadratic":
        return coupled_quadratic(p.m, p.n_i, noise_sd=p.noise_sd, strength=p.strength, seed=seed,
                                 target_scale=p.target_scale, init_scale=p.init_scale)
    if p.kind == "nonconvex":
        return coupled_nonconvex(p.m, p.n_i, noise_sd=p.noise_sd, strength=p.strength, seed=seed,
                                 target_scale=p.target_scale, init_scale=p.init_scale)
    if p.kind == "ra":
        ra = RaConfig(K=p.K, eta=p.eta, feature_transform=p.feature_transform, init_scale=p.init_scale)
        return PowerAllocation(p.m, ra, seed=seed)
    raise ConfigError(f"unknown problem kind {p.kind!r}", "problem.kind")


def build_graph(cfg: RunConfig, m: int) -> Graph | None:
    g = cfg.graph
    if g.adjacency_file is not None:
        graph = load_adjacency(g.adjacency_file)
        if graph.m != m:
            raise ConfigError(f"adjacency has {graph.m} nodes, expected {m}", "graph.adjacency_file")
        return graph
    if g.kappa is not None:
        return build_block_overlap_graph(m, g.kappa)
    if cfg.activity.mode == "gossip":
        raise ConfigError("gossip mode needs graph.kappa or graph.adjacency_file", "graph")
    return None


def build_sim_config(cfg: RunConfig, seed: int) -> SimConfig:
    a = cfg.activity
    schedules = None
    if a.explicit_schedules:
        schedules = {int(k): {r: list(v) for r, v in roles.items()} for k, roles in a.explicit_schedules.items()}
    activity = ActivityConfig(a.p_q, a.p_u, a.p_tx, a.D, a.mode, schedules, a.force)
    s = cfg.smoothing
    smoothing = SmoothingConfig(s.mu, s.batch_size, s.paired_samples)
    st = cfg.stepsize
    schedule = StepsizeSchedule(st.kind, st.gamma0, st.r)
    if cfg.num_ticks < 1:
        raise ConfigError("must be >= 1", "num_ticks")
    if cfg.replicates < 1:
        raise ConfigError("must be >= 1", "replicates")
    d = cfg.diagnostics
    return SimConfig(
        smoothing=smoothing,
        activity=activity,
        stepsize=schedule,
        d_comm=cfg.network.d_comm,
        fixed_delay=cfg.network.fixed_delay,
        master_seed=seed,
        dmax=cfg.dmax,
        buffer_capacity=cfg.buffer_capacity,
        grad_eval_every=d.grad_eval_every,
        grad_mc_samples=d.grad_mc_samples,
        track_param_staleness=d.track_param_staleness,
    )


def build_world(cfg: RunConfig, replicate: int = 0) -> WorldState:
    """Fresh world for one replicate (seed ``master_seed + replicate``)."""
    seed = cfg.master_seed + replicate
    problem = build_problem(cfg)
    graph = build_graph(cfg, problem.m)
    sim = build_sim_config(cfg, seed)
    if cfg.stepsize.theory_fraction is not None:
        # gamma0 = min(fraction / M, gamma0) with M from the configured Dmax bound
        probe = init_world(problem, sim, graph)
        tc = problem.theory_constants(probe.joint_theta())
        if tc is None or not tc.L > 0:
            raise ConfigError("problem has no smoothness constant", "stepsize.theory_fraction")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            M = theory_constants(tc.L, problem.m, probe.dmax, 1.0).M
        sim.stepsize = StepsizeSchedule(cfg.stepsize.kind, min(cfg.stepsize.theory_fraction / M, cfg.stepsize.gamma0),
                                        cfg.stepsize.r)
        problem = build_problem(cfg)
    return init_world(problem, sim, graph)


def theory_payload(world: WorldState) -> dict:
    out: dict[str, Any] = {
        "dmax_bound": world.dmax,
        "realized_Dmax": world.realized_dmax,
        "buffer_capacity": world.agents[0].perturbation_buffer.capacity,
        "full_info_tick": world.full_info_tick,
        "gamma0": world.config.stepsize.gamma0,
        "neighbor_counts": neighbor_counts(world.graph),
        "messages_sent": world.transport.sent,
        "messages_delivered": world.transport.delivered,
        "ticks": world.t,
    }
    if world.report is not None:
        r = dataclasses.asdict(world.report)
        r["realized_Dmax"] = world.realized_dmax
        out["theory"] = r
        out["theory_compliant"] = world.report.eta_descent > 0
    return out


def _dump_json(obj, path: Path) -> None:
    def default(x):
        if isinstance(x, (np.integer,)):
            return int(x)
        if isinstance(x, (np.floating,)):
            return float(x)
        raise TypeError(type(x))

    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n", newline="\n")


def run_config(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Run every replicate, write CSVs, mean curve, theory JSON and a resolved-config snapshot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), newline="\n")
    replicate_rows = []
    theory = {}
    for k in range(cfg.replicates):
        world = build_world(cfg, k)
        run(world, cfg.num_ticks)
        emit_csv(world.metrics, out / f"replicate_{k}.csv", world.m)
        replicate_rows.append(world.metrics)
        theory[f"replicate_{k}"] = theory_payload(world)
    m = len(replicate_rows[0][0].agent_objectives)
    emit_csv(mean_rows(replicate_rows), out / "mean.csv", m)
    _dump_json(theory, out / "theory.json")
    return theory


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _ra(name: str, m: int = 6, kappa: int = 2, p: float = 0.9, batch: int = 10, ticks: int = 1500,
        replicates: int = 5) -> RunConfig:
    return RunConfig(
        name=name,
        problem=ProblemSection(kind="ra", m=m),
        activity=ActivitySection(p_q=p, p_u=p, p_tx=p, D=10, mode="gossip"),
        smoothing=SmoothingSection(mu=2.0, batch_size=batch, paired_samples=False),
        graph=GraphSection(kappa=kappa),
        network=NetworkSection(d_comm=1, fixed_delay=True),
        stepsize=StepsizeSection(kind="power_quarter", gamma0=0.5),
        diagnostics=DiagnosticsSection(track_param_staleness=False),
        num_ticks=ticks,
        replicates=replicates,
    )


def quadratic_convergence_config() -> RunConfig:
    return RunConfig(
        name="quadratic_convergence",
        problem=ProblemSection(kind="quadratic", m=4, n_i=2, strength=0.2),
        activity=ActivitySection(p_q=0.9, p_u=0.9, p_tx=0.9, D=2, mode="direct"),
        smoothing=SmoothingSection(mu=0.01, batch_size=1, paired_samples=True),
        network=NetworkSection(d_comm=2),
        stepsize=StepsizeSection(kind="inv_sqrt", gamma0=0.5, r=1.0, theory_fraction=0.9),
        num_ticks=20000,
        replicates=1,
    )


def delay_sweep_configs() -> list[tuple[str, RunConfig]]:
    out = []
    for d_comm in (1, 10):
        cfg = RunConfig(
            name=f"delay_dcomm{d_comm}",
            problem=ProblemSection(kind="quadratic", m=4, n_i=2, strength=0.2, problem_seed=0),
            activity=ActivitySection(p_q=0.9, p_u=0.9, p_tx=0.9, D=2, mode="direct"),
            smoothing=SmoothingSection(mu=0.01, batch_size=1, paired_samples=True),
            network=NetworkSection(d_comm=d_comm, fixed_delay=True),
            stepsize=StepsizeSection(kind="constant", gamma0=0.2),
            num_ticks=2000,
            replicates=5,
        )
        out.append((f"dcomm{d_comm}", cfg))
    return out


def rate_diagnostic_config() -> RunConfig:
    # Starts close to the optimum so the run is variance-dominated over the whole
    # fitting window; in paired mode the additive oracle noise cancels and the
    # remaining variance comes from the smoothing radius.
    return RunConfig(
        name="rate_diagnostic",
        problem=ProblemSection(kind="quadratic", m=4, n_i=2, strength=0.2, noise_sd=1.0,
                               target_scale=0.1, init_scale=0.1),
        activity=ActivitySection(p_q=0.9, p_u=0.9, p_tx=0.9, D=2, mode="direct"),
        smoothing=SmoothingSection(mu=1.2, batch_size=1, paired_samples=True),
        network=NetworkSection(d_comm=2),
        stepsize=StepsizeSection(kind="inv_sqrt", gamma0=0.5, r=1.0),
        num_ticks=10000,
        replicates=10,
    )


def _preset_fig2() -> list[tuple[str, RunConfig]]:
    return [(f"p{int(p * 100):03d}", _ra(f"fig2_desk_p{p}", p=p)) for p in (0.25, 0.9)]


def _preset_fig3() -> list[tuple[str, RunConfig]]:
    return [(f"B{b}", _ra(f"fig3_desk_B{b}", batch=b)) for b in FIG3_BATCHES]


def _preset_fig4() -> list[tuple[str, RunConfig]]:
    return [(f"m{m}", _ra(f"fig4_desk_m{m}", m=m)) for m in (4, 8)]


FIG3_BATCHES = (1, 5, 20)

PRESETS: dict[str, tuple[str, Any]] = {
    "fig2_desk": ("RA, m=6, kappa=2, activity p in {0.25, 0.9}, 5 replicates (delay comparison)", _preset_fig2),
    "fig3_desk": ("RA batch-size sweep B in {1, 5, 20} with wall-time axis", _preset_fig3),
    "fig4_desk": ("RA agent-count sweep m in {4, 8}", _preset_fig4),
    "quadratic_convergence": ("coupled quadratic, m=4, D_comm=2, p=0.9, theory-scaled 1/sqrt(t) stepsize",
                              lambda: [("run", quadratic_convergence_config())]),
    "delay_ordering": ("coupled quadratic, fixed link delay 1 vs 10 at a constant stepsize, 5 replicates",
                       delay_sweep_configs),
    "rate_diagnostic": ("coupled quadratic with 1/sqrt(t) stepsizes for the log-log rate slope",
                        lambda: [("run", rate_diagnostic_config())]),
    "verify": ("Monte-Carlo checks of oracle unbiasedness, variance bound, smoothing bounds and delays", None),
}


def list_presets() -> list[tuple[str, str]]:
    return [(name, desc) for name, (desc, _) in PRESETS.items()]


def preset_configs(name: str) -> list[tuple[str, RunConfig]]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "--preset")
    factory = PRESETS[name][1]
    if factory is None:
        raise ConfigError(f"preset {name!r} is not a simulation sweep", "--preset")
    return [(label, copy.deepcopy(cfg)) for label, cfg in factory()]


def run_experiment(
    config_path: str | Path | None = None,
    overrides: list[str] | None = None,
    *,
    preset: str | None = None,
    seed: int | None = None,
    out: str | Path = "runs",
    verify_samples: int = 200_000,
) -> Path:
    """Run a config file or a preset sweep; returns the output directory."""
    overrides = list(overrides or [])
    if seed is not None:
        overrides.append(f"master_seed={seed}")
    out = Path(out)
    if preset == "verify":
        from .verification import run_verification

        out.mkdir(parents=True, exist_ok=True)
        results = run_verification(seed=0 if seed is None else seed, num=verify_samples)
        _dump_json(results, out / "verify.json")
        if not results["all_passed"]:
            raise VerificationFailed(out / "verify.json")
        return out
    if preset is not None:
        runs = [(label, apply_overrides(cfg, overrides)) for label, cfg in preset_configs(preset)]
    elif config_path is not None:
        cfg = RunConfig.from_json(Path(config_path).read_text())
        runs = [(None, apply_overrides(cfg, overrides))]
    else:
        raise ConfigError("either a config file or a preset is required", "--config")
    for label, cfg in runs:
        run_config(cfg, out if label is None else out / label)
    return out


class VerificationFailed(Exception):
    def __init__(self, path: Path):
        self.path = path
        super().__init__(f"verification failed; see {path}")

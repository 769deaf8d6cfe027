"""Asynchronous distributed zeroth-order optimization over a delayed message-passing network."""

from .agent import (
    AgentState,
    PerturbationBuffer,
    QueryMemory,
    QueryRecord,
    apply_update,
    build_update_direction,
    ingest_records,
    push_perturbation,
)
from .config import RunConfig, list_presets, run_experiment
from .diagnostics import MetricsRow, StepsizeSchedule, TheoryReport, emit_csv, stepsize, theory_constants
from .network import Graph, TransportState, build_block_overlap_graph, check_connected, deliver_due, send
from .numerics import Purpose, RandomStream, gaussian_vector, mlp_forward
from .problems import (
    CoupledNonconvex,
    CoupledQuadratic,
    PowerAllocation,
    RaConfig,
    coupled_nonconvex,
    coupled_quadratic,
)
from .scheduler import ActivityConfig, SimConfig, WorldState, init_world, run, sample_activity, tick
from .zo_core import SmoothingConfig, TheoryConstants, compute_query, smoothed_value_mc, variance_bound

__version__ = "0.1.0"

"""Acceptance criteria.  Each test records one PASS/FAIL line, printed in the terminal summary."""

import time
import warnings

import numpy as np
import pytest

from zodist.config import apply_overrides, build_world, delay_sweep_configs, preset_configs, run_experiment
from zodist.config import quadratic_convergence_config, rate_diagnostic_config
from zodist.diagnostics import loglog_slope
from zodist.numerics import GLOBAL_AGENT, Purpose, RandomStream
from zodist.scheduler import run
from zodist.verification import check_delay_trace, check_smoothing_bounds, check_unbiased, check_variance

RESULTS: dict[int, str] = {}


def record(k: int, name: str, ok: bool, detail: str, started: float) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] C{k} {name}: {detail} ({time.perf_counter() - started:.1f}s)"
    RESULTS[k] = line
    print(line)
    assert ok, line


def simulate(cfg, replicate=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        world = build_world(cfg, replicate)
        run(world, cfg.num_ticks)
    return world


def column(world, name):
    return np.array([getattr(r, name) for r in world.metrics])


def test_c1_unbiased_oracle():
    t0 = time.perf_counter()
    res = [check_unbiased(paired, m=3, n_i=2, mu=0.5, num=200_000, z_max=4.0) for paired in (True, False)]
    ok = all(r["passed"] for r in res)
    detail = ", ".join(f"{'paired' if r['paired'] else 'unpaired'} max |z|={r['max_z']:.2f}" for r in res)
    record(1, "unbiased oracle", ok, detail + " (limit 4)", t0)


def test_c2_bounded_variance():
    t0 = time.perf_counter()
    res = [check_variance(paired, b, m=3, n_i=2, mu=0.5, num=200_000) for paired in (True, False) for b in (1, 10)]
    ok = all(r["max_variance"] < r["bound"] for r in res)
    detail = "; ".join(
        f"{'P' if r['paired'] else 'U'} B={r['batch_size']}: {r['max_variance']:.3g} < {r['bound']:.4g}" for r in res
    )
    record(2, "bounded variance", ok, detail, t0)


def test_c3_smoothing_bounds():
    t0 = time.perf_counter()
    res = [check_smoothing_bounds(mu, num=100_000) for mu in (0.1, 0.5, 1.0)]
    ok = all(r["value_gap"] <= r["value_bound"] and r["grad_gap"] <= r["grad_bound"] for r in res)
    detail = "; ".join(
        f"mu={r['mu']}: |df|={r['value_gap']:.3g}<={r['value_bound']:.3g}, "
        f"|dg|={r['grad_gap']:.3g}<={r['grad_bound']:.3g}"
        for r in res
    )
    record(3, "smoothing bounds", ok, detail, t0)


def test_c4_delay_and_propagation():
    t0 = time.perf_counter()
    runs = [check_delay_trace(mode, p, seed, m=6, kappa=2)
            for seed in range(5) for mode in ("direct", "gossip") for p in (0.25, 0.9)]
    violations = sum(r["violations"] for r in runs)
    gossip_full = all(r["full_information_from"] is not None for r in runs if r["mode"] == "gossip")
    bounded = all(0 <= r["realized_Dmax"] <= r["dmax_bound"] for r in runs)
    worst = max(r["realized_Dmax"] for r in runs)
    latest = max(r["full_information_from"] for r in runs if r["mode"] == "gossip")
    ok = violations == 0 and gossip_full and bounded
    record(4, "delay and propagation invariants", ok,
           f"{len(runs)} runs, {violations} violations, max realized Dmax {worst}, "
           f"gossip full information by tick {latest}", t0)


def test_c5_convergence():
    t0 = time.perf_counter()
    cfg = quadratic_convergence_config()
    assert (cfg.problem.m, cfg.network.d_comm, cfg.activity.p_q, cfg.num_ticks) == (4, 2, 0.9, 20_000)
    assert cfg.smoothing.paired_samples and cfg.stepsize.kind == "inv_sqrt"
    world = simulate(cfg)
    assert world.config.stepsize.gamma0 == pytest.approx(min(0.9 / world.report.M, 0.5))
    g = column(world, "grad_sq")
    rmin = column(world, "running_min_grad_sq")
    ratio = rmin[-1] / g[0]
    record(5, "convergence", ratio <= 0.01,
           f"running-min |grad|^2 {rmin[-1]:.3g} = {ratio:.2%} of initial {g[0]:.3g} (limit 1%)", t0)


def test_c6_delay_ordering():
    t0 = time.perf_counter()
    areas = {}
    for label, cfg in delay_sweep_configs():
        assert cfg.replicates == 5 and cfg.network.fixed_delay and cfg.stepsize.kind == "constant"
        gaps = []
        for k in range(cfg.replicates):
            world = simulate(cfg, k)
            gaps.append(column(world, "objective_exact") - world.problem.optimal_value())
        areas[label] = float(np.mean(gaps, axis=0).sum())
    ok = areas["dcomm10"] >= 0.98 * areas["dcomm1"]
    record(6, "delay ordering", ok,
           f"area D_comm=10 {areas['dcomm10']:.4g} vs D_comm=1 {areas['dcomm1']:.4g} "
           f"(ratio {areas['dcomm10'] / areas['dcomm1']:.4f}, limit >= 0.98)", t0)


def test_c7_rate_diagnostic():
    t0 = time.perf_counter()
    cfg = rate_diagnostic_config()
    assert cfg.stepsize.kind == "inv_sqrt" and cfg.smoothing.paired_samples
    curves = []
    for k in range(cfg.replicates):
        world = simulate(cfg, k)
        curves.append(column(world, "running_min_grad_sq"))
    t = column(world, "t") + 1.0
    slope = loglog_slope(t, np.mean(curves, axis=0), 1e2, 1e4)
    record(7, "rate diagnostic", -0.75 <= slope <= -0.25,
           f"log-log slope {slope:.3f} over t in [1e2, 1e4], mean of {cfg.replicates} runs (band [-0.75, -0.25])", t0)


def ra_desk(seed, p, kappa):
    base = dict(preset_configs("fig2_desk"))["p090"]
    return apply_overrides(base, [
        f"master_seed={seed}", "replicates=1", "num_ticks=2000", f"graph.kappa={kappa}",
        f"activity.p_q={p}", f"activity.p_u={p}", f"activity.p_tx={p}",
    ])


def test_c8_ra_desk_scale():
    t0 = time.perf_counter()
    trained, baseline, sync = [], [], []
    for seed in range(3):
        cfg = ra_desk(seed, 0.9, 2)
        assert (cfg.problem.m, cfg.smoothing.mu, cfg.smoothing.batch_size) == (6, 2.0, 10)
        assert (cfg.stepsize.kind, cfg.stepsize.gamma0) == ("power_quarter", 0.5)
        world = simulate(cfg)
        trained.append(column(world, "sum_rate")[-100:].mean())
        baseline.append(world.problem.random_power_sum_rate(RandomStream(seed, GLOBAL_AGENT, Purpose.SAMPLE, lane=5),
                                                            20_000))
        sync_world = simulate(ra_desk(seed, 1.0, 6))
        assert sync_world.config.d_comm == 1
        sync.append(column(sync_world, "sum_rate")[-100:].mean())
    vs_random = np.mean(trained) / np.mean(baseline)
    vs_sync = np.mean(trained) / np.mean(sync)
    ok = vs_random >= 1.15 and vs_sync >= 0.9
    record(8, "RA desk scale", ok,
           f"trained {np.mean(trained):.3f}, random {np.mean(baseline):.3f} (x{vs_random:.3f}, limit 1.15), "
           f"sync {np.mean(sync):.3f} (x{vs_sync:.3f}, limit 0.9)", t0)


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c9_determinism(tmp_path):
    t0 = time.perf_counter()
    names = ["fig2_desk", "fig3_desk", "fig4_desk", "quadratic_convergence", "delay_ordering", "rate_diagnostic"]
    mismatched = []
    files = 0
    for name in names + ["verify"]:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            if name == "verify":
                run_experiment(preset="verify", out=out, verify_samples=20_000)
            else:
                run_experiment(preset=name, overrides=["num_ticks=40", "replicates=2"], out=out)
            outs.append(tree_bytes(out))
        files += len(outs[0])
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(name)
    record(9, "determinism", not mismatched,
           f"{len(names) + 1} presets, {files} CSV/JSON files compared byte for byte, mismatches: {mismatched or 'none'}",
           t0)


def test_c10_staleness_decay():
    t0 = time.perf_counter()
    cfg = apply_overrides(quadratic_convergence_config(), ["num_ticks=10001"])
    early, late = [], []
    for k in range(3):
        st = column(simulate(cfg, k), "param_staleness_max")
        early.append(st[100])
        late.append(st[10_000])
    ratio = np.mean(late) / np.mean(early)
    record(10, "staleness decay", ratio <= 0.01,
           f"max |theta^t - theta^T|^2 at t=1e4 is {ratio:.2e} of its value at t=1e2 (mean of 3 seeds, limit 1e-2)",
           t0)

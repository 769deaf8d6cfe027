import json
import subprocess
import sys

import numpy as np
import pytest

from zodist.cli import main
from zodist.config import (
    FIG3_BATCHES,
    RunConfig,
    apply_overrides,
    build_world,
    list_presets,
    preset_configs,
    run_config,
    run_experiment,
)
from zodist.diagnostics import read_csv_column, wall_time_axis
from zodist.errors import ConfigError


def small(cfg, ticks=30, reps=2):
    return apply_overrides(cfg, [f"num_ticks={ticks}", f"replicates={reps}"])


def test_defaults_roundtrip():
    cfg = RunConfig()
    assert RunConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize(
    "data,path",
    [({"bogus": 1}, "bogus"), ({"smoothing": {"radius": 1}}, "smoothing.radius"),
     ({"smoothing": {"mu": "big"}}, "smoothing.mu"), ({"num_ticks": 1.5}, "num_ticks"),
     ({"activity": {"force": 1}}, "activity.force"), ({"graph": 3}, "graph"),
     ({"master_seed": None}, "master_seed")],
)
def test_strict_validation_names_field(data, path):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert info.value.field == path


def test_int_accepted_for_float():
    cfg = RunConfig.from_dict({"smoothing": {"mu": 2}})
    assert cfg.smoothing.mu == 2.0 and isinstance(cfg.smoothing.mu, float)


def test_overrides():
    cfg = apply_overrides(RunConfig(), ["smoothing.mu=0.3", "activity.mode=gossip", "graph.kappa=2"])
    assert (cfg.smoothing.mu, cfg.activity.mode, cfg.graph.kappa) == (0.3, "gossip", 2)
    for bad in ["smoothing.nope=1", "nope.mu=1", "justtext"]:
        with pytest.raises(ConfigError):
            apply_overrides(cfg, [bad])


def test_semantic_errors_surface_field():
    with pytest.raises(ConfigError, match="activity.p_q"):
        build_world(apply_overrides(RunConfig(), ["activity.p_q=2.0"]))
    with pytest.raises(ConfigError, match="graph"):
        build_world(apply_overrides(RunConfig(), ["activity.mode=gossip"]))
    with pytest.raises(ConfigError, match="problem.kind"):
        build_world(apply_overrides(RunConfig(), ["problem.kind=cubic"]))


def test_required_presets_registered():
    names = [n for n, _ in list_presets()]
    for required in ("fig2_desk", "fig3_desk", "fig4_desk", "quadratic_convergence", "verify"):
        assert required in names
    with pytest.raises(ConfigError):
        preset_configs("nope")


def test_fig_presets_shapes():
    fig2 = preset_configs("fig2_desk")
    assert [c.activity.p_q for _, c in fig2] == [0.25, 0.9]
    assert all(c.replicates == 5 and c.problem.m == 6 and c.graph.kappa == 2 for _, c in fig2)
    assert [c.smoothing.batch_size for _, c in preset_configs("fig3_desk")] == list(FIG3_BATCHES)
    assert [c.problem.m for _, c in preset_configs("fig4_desk")] == [4, 8]


def test_theory_fraction_sets_gamma0():
    world = build_world(preset_configs("quadratic_convergence")[0][1])
    assert world.config.stepsize.gamma0 == pytest.approx(min(0.9 / world.report.M, 0.5))
    assert world.report.eta_descent == pytest.approx(0.1)


def test_run_config_outputs(tmp_path):
    cfg = small(preset_configs("quadratic_convergence")[0][1])
    theory = run_config(cfg, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["config.json", "mean.csv", "replicate_0.csv", "replicate_1.csv", "theory.json"]
    assert len(read_csv_column(tmp_path / "replicate_0.csv", "t")) == 30
    assert json.loads((tmp_path / "theory.json").read_text()) == json.loads(json.dumps(theory))
    assert theory["replicate_0"]["theory"]["M"] > 0
    assert RunConfig.from_json((tmp_path / "config.json").read_text()) == cfg
    a = read_csv_column(tmp_path / "replicate_0.csv", "objective_mean")
    b = read_csv_column(tmp_path / "replicate_1.csv", "objective_mean")
    np.testing.assert_allclose(read_csv_column(tmp_path / "mean.csv", "objective_mean"), (a + b) / 2)


def test_fig3_wall_time_column(tmp_path):
    cfg = small(preset_configs("fig3_desk")[2][1], ticks=5, reps=1)
    run_config(cfg, tmp_path)
    t = read_csv_column(tmp_path / "replicate_0.csv", "t")
    np.testing.assert_array_equal(read_csv_column(tmp_path / "replicate_0.csv", "elapsed_ms"),
                                  wall_time_axis(t, cfg.smoothing.batch_size))


def test_snapshot_reproduces_outputs(tmp_path):
    run_experiment(preset="fig4_desk", overrides=["num_ticks=8", "replicates=1"], out=tmp_path / "a")
    run_experiment(tmp_path / "a" / "m4" / "config.json", out=tmp_path / "b")
    for name in ("replicate_0.csv", "mean.csv", "theory.json", "config.json"):
        assert (tmp_path / "a" / "m4" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    run_experiment(preset="quadratic_convergence", overrides=["num_ticks=5"], out=tmp_path / "a")
    run_experiment(preset="quadratic_convergence", overrides=["num_ticks=5"], seed=3, out=tmp_path / "b")
    a = (tmp_path / "a" / "run" / "replicate_0.csv").read_bytes()
    b = (tmp_path / "b" / "run" / "replicate_0.csv").read_bytes()
    assert a != b


def test_cli_run_and_exit_codes(tmp_path, capsys):
    assert main(["presets"]) == 0
    assert "fig2_desk" in capsys.readouterr().out
    assert main(["run", "--preset", "quadratic_convergence", "--set", "num_ticks=3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "run" / "replicate_0.csv").exists()
    assert main(["run", "--preset", "quadratic_convergence", "--set", "smoothing.bogus=1"]) == 2
    assert "smoothing.bogus" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit):
        main(["run"])


def test_cli_config_file(tmp_path):
    cfg = apply_overrides(RunConfig(), ["num_ticks=4", "problem.kind=nonconvex"])
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert main(["run", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "mean.csv").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "zodist", "presets"], capture_output=True, text=True, check=True)
    assert "verify" in out.stdout

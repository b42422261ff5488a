import os

import numpy as np
import pytest
import torch

from tcavoidsrc.bench.ablation import AblationRow, run_ablation
from tcavoidsrc.bench.controllers import make_controller, make_frontend
from tcavoidsrc.bench.profile import LatencyProfile, StageStats, memory_profile, profile_latency
from tcavoidsrc.bench.results import (
    BENCHMARK_FIELDS,
    NOT_AVAILABLE,
    SWEEP_FIELDS,
    read_rows,
    write_ablation,
    write_benchmark,
    write_latency,
    write_memory_trace,
    write_rows,
    write_tracking_sweep,
)
from tcavoidsrc.bench.runners import (
    BenchmarkResult,
    ModeTrace,
    TrackingSweepResult,
    TrialResult,
    check_ids,
    run_dynamic_benchmark,
    run_memory_demo,
    run_tracking_sweep,
    run_trial,
    scenario_id,
)
from tcavoidsrc.bench.scenarios import SweepLine, centered_obstacle, sweep_targets, tool_of_size
from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.common.types import InteractionMode, TrialOutcome
from tcavoidsrc.netcore.checkpoint import load_grid
from tcavoidsrc.perception.model import CollidableRegionNet


def test_sweep_line(desk_config):
    line = SweepLine.from_config(desk_config)
    assert line.length == pytest.approx(0.3)
    assert line.duration == pytest.approx(1.2)
    np.testing.assert_allclose(line.position(0.6), [0.26, 0.3, 0.2])
    np.testing.assert_allclose(line.position(-1.0), line.start)
    np.testing.assert_allclose(line.position(10.0), line.end)


def test_centered_obstacles(desk_config, rng):
    line = SweepLine.from_config(desk_config)
    static = centered_obstacle(desk_config, line, 0.0, rng)
    assert np.all(np.abs(static.position - line.midpoint[:2]) <= 0.02)
    assert static.speed == 0.0

    moving = centered_obstacle(desk_config, line, 0.2, rng)
    assert moving.speed == pytest.approx(0.2)
    # spawned beyond the line end, heading back along the line
    assert moving.position[1] < line.end[1]
    assert moving.velocity[1] > 0


def test_sweep_targets_cover_the_plane(desk_config):
    targets, shape = sweep_targets(desk_config)
    assert shape == (8, 12)
    assert targets.shape == (96, 3)
    np.testing.assert_allclose(targets[:, 2], 0.2)
    np.testing.assert_allclose(targets[0], [0.025, 0.025, 0.2])
    np.testing.assert_allclose(targets[1], [0.025, 0.075, 0.2])


def test_tool_of_size():
    np.testing.assert_array_equal(tool_of_size(0.0).size, 0.0)
    tool = tool_of_size(0.1)
    np.testing.assert_allclose(tool.offset, [0.05, 0.0, 0.0])
    np.testing.assert_allclose(tool.size, [0.1, 0.1, 0.1])


def test_method_and_perception_ids(small_config):
    assert scenario_id(0.0) == "static"
    assert scenario_id(0.2) == "dynamic_0.2"
    check_ids("apf", "cluster")
    check_ids("hybrid", "ours")
    with pytest.raises(ConfigError):
        check_ids("apf", "ours")
    with pytest.raises(ConfigError):
        check_ids("teleport", "gt")
    with pytest.raises(ConfigError):
        make_controller(small_config, "rl")
    with pytest.raises(ConfigError):
        make_frontend(small_config, "lidar")


def test_benchmark_rates():
    trials = [
        TrialResult(0, TrialOutcome.SUCCESS, 10, 0.1),
        TrialResult(1, TrialOutcome.COLLISION, 4, 0.0),
        TrialResult(2, TrialOutcome.SUCCESS, 12, 0.2),
        TrialResult(3, TrialOutcome.TIMEOUT, 15, 0.05),
    ]
    result = BenchmarkResult("apf", "gt", "static", trials)
    assert result.success_rate == 50.0
    assert result.collision_rate == 25.0
    assert result.tool_violation_rate == 0.0
    assert result.timeout_rate == 25.0
    assert list(result.summary()) == BENCHMARK_FIELDS
    assert BenchmarkResult("apf", "gt", "static", []).success_rate == 0.0


def test_tracking_sweep_summaries(tmp_path):
    result = TrackingSweepResult(
        tool_sizes=[0.0],
        grid_shape=(2, 2),
        targets=np.array([[0.025, 0.025, 0.2], [0.025, 0.075, 0.2], [0.075, 0.025, 0.2], [0.075, 0.075, 0.2]]),
        errors=np.array([[np.nan, 0.002, 0.0005, 0.0001]]),
        collided=np.zeros((1, 4), dtype=bool),
        spacing=0.05,
    )
    np.testing.assert_allclose(result.high_error_area(0.001), [0.0025])
    np.testing.assert_allclose(result.free_space_error(0.001), [0.0003])
    assert result.error_grid(0).shape == (2, 2)

    write_tracking_sweep(str(tmp_path), result, 0.001)
    rows = read_rows(os.path.join(tmp_path, "tracking_sweep.csv"))
    assert list(rows[0]) == SWEEP_FIELDS
    assert rows[0]["error"] is None
    assert rows[1]["error"] == pytest.approx(0.002)
    assert rows[1]["collided"] is False
    grid = load_grid(os.path.join(tmp_path, "tracking_errors_tool0.grid"))
    assert grid.dims == (2, 2, 1)


def test_tracking_sweep_runs_every_free_target(small_config):
    sweep = run_tracking_sweep(
        small_config, InteractionMode.ENGAGE, tool_sizes=[0.0], controller="nominal", hold_seconds=0.06
    )
    assert sweep.errors.shape == (1, 96)
    assert sweep.error_grid(0).shape == (8, 12)
    finite = np.isfinite(sweep.errors)
    assert finite.any()
    assert np.all(sweep.errors[finite] >= 0.0)
    assert not sweep.collided[~finite].any()
    with pytest.raises(ConfigError):
        run_tracking_sweep(small_config, tool_sizes=[0.0], controller="rl_only", hold_seconds=0.02)


def test_rows_round_trip_not_available(tmp_path):
    path = str(tmp_path / "nested" / "rows.csv")
    row = {"seed": 3, "min_clearance": NOT_AVAILABLE, "method": "apf"}
    write_rows(path, ["seed", "min_clearance", "method"], [row])
    assert read_rows(path) == [{"seed": 3, "min_clearance": None, "method": "apf"}]


def test_trials_are_reproducible(small_config):
    first = run_trial(small_config, "apf", "gt", 0.2, seed=4)
    second = run_trial(small_config, "apf", "gt", 0.2, seed=4)
    assert first.outcome is second.outcome
    assert first.steps == second.steps == len(first.records)
    np.testing.assert_array_equal(first.waypoints, second.waypoints)
    assert first.steps <= small_config.bench.timeout_steps


def test_hybrid_trial_counts_switches(small_config):
    trial = run_trial(small_config, "hybrid", "gt", 0.0, seed=0)
    assert trial.switches >= 0
    assert all(0.0 <= record.v_body <= 1.0 for record in trial.records)


def test_dynamic_benchmark_writes_results(small_config, tmp_path):
    result = run_dynamic_benchmark(small_config, "apf", "gt", obstacle_speed=0.0, seed=0)
    assert result.n_trials == 2
    assert [trial.seed for trial in result.trials] == [0, 1]
    total = result.success_rate + result.collision_rate + result.tool_violation_rate + result.timeout_rate
    assert total == pytest.approx(100.0)

    write_benchmark(str(tmp_path), [result])
    summary = read_rows(os.path.join(tmp_path, "benchmark.csv"))
    assert summary[0]["trials"] == 2
    assert summary[0]["scenario"] == "static"
    trials = read_rows(os.path.join(tmp_path, "trials_apf_gt_static.csv"))
    assert [row["seed"] for row in trials] == [0, 1]
    assert os.path.exists(os.path.join(tmp_path, "telemetry", "apf_gt_static_seed0.csv"))


def test_memory_demo(small_config, tmp_path):
    trace = run_memory_demo(small_config, steps=5)
    assert trace.memory.shape == (5, 8, 12, 8)
    assert trace.labels.shape == (5, 8, 12, 8)
    assert np.all((trace.memory > 0) & (trace.memory < 1))
    assert trace.observed().any()

    write_memory_trace(str(tmp_path), trace, every=2)
    assert sorted(f for f in os.listdir(tmp_path) if f.startswith("memory_")) == [
        "memory_00000.grid",
        "memory_00002.grid",
        "memory_00004.grid",
    ]
    np.testing.assert_allclose(load_grid(os.path.join(tmp_path, "memory_00002.grid")).cells, trace.memory[2], rtol=1e-6)


def test_stage_stats():
    stats = StageStats.from_seconds([0.001, 0.003])
    assert stats.mean == pytest.approx(2.0)
    assert stats.sd == pytest.approx(1.0)
    assert stats.max == pytest.approx(3.0)
    assert stats.median == pytest.approx(2.0)
    profile = LatencyProfile({"control": stats}, stats, 2)
    assert [row["stage"] for row in profile.rows()] == ["control", "wall"]


def test_profile_latency_smoke(small_config, tmp_path):
    profile = profile_latency(small_config, steps=2)
    assert profile.steps == 2
    assert set(profile.stages) == {"perception", "esdf", "inference", "control"}
    write_latency(str(tmp_path), profile, {"device": "cpu"})
    assert len(read_rows(os.path.join(tmp_path, "latency.csv"))) == 5


def test_memory_profile(small_config):
    torch.manual_seed(0)
    model = CollidableRegionNet.from_config(small_config)
    result = memory_profile(model)
    assert result["total"] == result["perception"] > 0


def test_mode_trace_path_length():
    trace = ModeTrace(
        InteractionMode.ENGAGE,
        TrialOutcome.SUCCESS,
        np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]),
        np.zeros(2),
        np.zeros(2, dtype=bool),
        0,
    )
    assert trace.tool_path_length == pytest.approx(5.0)


def test_ablation_rejects_unknown_variants(small_config, tmp_path):
    with pytest.raises(ConfigError):
        run_ablation(small_config, variants=["voxels"])
    row = AblationRow("mapping", 2, 50.0, 0.0, 0.0, 1.5, 0)
    write_ablation(str(tmp_path), [row])
    assert read_rows(os.path.join(tmp_path, "ablation.csv"))[0]["variant"] == "mapping"

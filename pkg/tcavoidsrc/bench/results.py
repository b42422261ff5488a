import csv
import dataclasses
import json
import logging
import os
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from tcavoidsrc.bench.ablation import AblationRow
from tcavoidsrc.bench.profile import LatencyProfile
from tcavoidsrc.bench.runners import BenchmarkResult, MemoryTrace, ModeTrace, TrackingSweepResult
from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.control.telemetry import write_telemetry
from tcavoidsrc.netcore.checkpoint import save_grid
from tcavoidsrc.world.voxel_grid import VoxelGrid

logger = logging.getLogger(__name__)

BENCHMARK_FIELDS = [
    "method",
    "perception",
    "scenario",
    "trials",
    "success_rate",
    "collision_rate",
    "tool_violation_rate",
    "timeout_rate",
]
TRIAL_FIELDS = ["seed", "outcome", "steps", "min_clearance", "tool_corner_violations", "switches"]
SWEEP_FIELDS = ["tool_size", "index", "x", "y", "z", "error", "collided"]
MODE_TRACE_FIELDS = ["step", "x", "y", "z", "v_max", "reactive"]
LATENCY_FIELDS = ["stage", "mean_ms", "sd_ms", "max_ms", "median_ms"]
NOT_AVAILABLE = "N/A"

_INT_FIELDS = {
    "trials",
    "seed",
    "steps",
    "step",
    "tool_corner_violations",
    "switches",
    "index",
    "episodes",
    "over_filtered",
}
_FLOAT_FIELDS = {
    "success_rate",
    "collision_rate",
    "tool_violation_rate",
    "timeout_rate",
    "min_clearance",
    "tool_size",
    "x",
    "y",
    "z",
    "error",
    "mean_return",
    "mean_ms",
    "sd_ms",
    "max_ms",
    "median_ms",
    "v_max",
}


def write_rows(path: str, fields: Sequence[str], rows: Iterable[Mapping[str, object]]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _parse(name: str, value: str):
    if value == NOT_AVAILABLE:
        return None
    if name in _INT_FIELDS:
        return int(value)
    if name in _FLOAT_FIELDS:
        return float(value)
    if name in ("collided", "reactive"):
        return value == "True"
    return value


def read_rows(path: str) -> List[Dict[str, object]]:
    """Rows of any CSV written here, with numeric columns converted back."""
    with open(path, newline="") as f:
        return [{name: _parse(name, value) for name, value in row.items()} for row in csv.DictReader(f)]


def write_json(path: str, payload) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_benchmark(directory: str, results: Sequence[BenchmarkResult], telemetry: bool = True) -> None:
    """``benchmark.csv`` and ``benchmark.json`` summaries, one ``trials_*.csv`` per result and, with ``telemetry``,
    the per-step controller records of every trial under ``telemetry/``."""
    summaries = [result.summary() for result in results]
    write_rows(os.path.join(directory, "benchmark.csv"), BENCHMARK_FIELDS, summaries)
    write_json(os.path.join(directory, "benchmark.json"), summaries)
    for result in results:
        prefix = f"{result.method}_{result.perception}_{result.scenario}"
        name = f"trials_{prefix}.csv"
        rows = (
            {
                "seed": trial.seed,
                "outcome": trial.outcome.value,
                "steps": trial.steps,
                "min_clearance": trial.min_clearance,
                "tool_corner_violations": trial.tool_corner_violations,
                "switches": trial.switches,
            }
            for trial in result.trials
        )
        write_rows(os.path.join(directory, name), TRIAL_FIELDS, rows)
        if telemetry:
            for trial in result.trials:
                if trial.records:
                    path = os.path.join(directory, "telemetry", f"{prefix}_seed{trial.seed}.csv")
                    write_telemetry(path, trial.records)
    logger.info("Wrote %d benchmark results to %s", len(results), directory)


def write_tracking_sweep(directory: str, result: TrackingSweepResult, threshold: float) -> None:
    rows = []
    for s, size in enumerate(result.tool_sizes):
        for i, target in enumerate(result.targets):
            error = result.errors[s, i]
            rows.append(
                {
                    "tool_size": size,
                    "index": i,
                    "x": target[0],
                    "y": target[1],
                    "z": target[2],
                    "error": NOT_AVAILABLE if np.isnan(error) else float(error),
                    "collided": bool(result.collided[s, i]),
                }
            )
    write_rows(os.path.join(directory, "tracking_sweep.csv"), SWEEP_FIELDS, rows)

    areas = result.high_error_area(threshold)
    free = result.free_space_error(threshold)
    summary = [
        {
            "tool_size": size,
            "high_error_area": float(areas[s]),
            "free_space_error": None if np.isnan(free[s]) else float(free[s]),
        }
        for s, size in enumerate(result.tool_sizes)
    ]
    write_json(os.path.join(directory, "tracking_sweep.json"), summary)

    origin = result.targets.min(axis=0) - result.spacing / 2
    for s, size in enumerate(result.tool_sizes):
        grid = VoxelGrid(origin, result.spacing, result.error_grid(s)[..., None])
        save_grid(os.path.join(directory, f"tracking_errors_tool{size:g}.grid"), grid)


def write_memory_trace(directory: str, trace: MemoryTrace, every: int = 10) -> None:
    """Fused-memory and frame-label grid dumps every ``every`` steps and a JSON index of them."""
    os.makedirs(directory, exist_ok=True)
    index = []
    for step in range(0, len(trace.memory), every):
        memory_name, labels_name = f"memory_{step:05d}.grid", f"labels_{step:05d}.grid"
        save_grid(os.path.join(directory, memory_name), trace.snapshot(step))
        save_grid(os.path.join(directory, labels_name), trace.grid.with_cells(trace.labels[step].astype(np.float32)))
        index.append(
            {"step": step, "memory": memory_name, "labels": labels_name, "ee": trace.ee_positions[step].tolist()}
        )
    write_json(os.path.join(directory, "memory_trace.json"), {"over_filtered": trace.over_filtered, "frames": index})


def write_mode_traces(directory: str, traces: Mapping[InteractionMode, ModeTrace]) -> None:
    summary = []
    for mode, trace in traces.items():
        rows = (
            {"step": i, "x": c[0], "y": c[1], "z": c[2], "v_max": v, "reactive": bool(r)}
            for i, (c, v, r) in enumerate(zip(trace.tool_centers, trace.v_max, trace.reactive))
        )
        write_rows(os.path.join(directory, f"mode_trace_{mode.value}.csv"), MODE_TRACE_FIELDS, rows)
        summary.append(
            {
                "mode": mode.value,
                "outcome": trace.outcome.value,
                "tool_path_length": trace.tool_path_length,
                "tool_corner_violations": trace.tool_corner_violations,
            }
        )
    write_json(os.path.join(directory, "mode_trace.json"), summary)


def write_latency(directory: str, profile: LatencyProfile, extra: Optional[Mapping[str, object]] = None) -> None:
    write_rows(os.path.join(directory, "latency.csv"), LATENCY_FIELDS, profile.rows())
    payload = {"steps": profile.steps, "stages": {name: dataclasses.asdict(s) for name, s in profile.stages.items()}}
    payload["wall"] = dataclasses.asdict(profile.wall)
    payload.update(extra or {})
    write_json(os.path.join(directory, "latency.json"), payload)


def write_ablation(directory: str, rows: Sequence[AblationRow]) -> None:
    fields = [f.name for f in dataclasses.fields(AblationRow)]
    write_rows(os.path.join(directory, "ablation.csv"), fields, (row.as_row() for row in rows))
    write_json(os.path.join(directory, "ablation.json"), [row.as_row() for row in rows])

import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from omegaconf import DictConfig, OmegaConf
from tqdm import tqdm

from tcavoidsrc.baselines.clearance import PERCEPTION_KINDS
from tcavoidsrc.bench.controllers import (
    METHODS,
    BenchController,
    NominalController,
    PolicyController,
    ProprioObservation,
    make_controller,
)
from tcavoidsrc.bench.scenarios import (
    SweepLine,
    centered_obstacle,
    dynamic_scenario,
    start_configuration,
    sweep_obstacle,
    sweep_targets,
    tool_of_size,
)
from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.common.types import ActiveController, InteractionMode, TrialOutcome
from tcavoidsrc.control.constraints import TOOL_VIOLATION
from tcavoidsrc.control.controller import Command, ControllerSettings, Policy, ZeroPolicy, nominal_step
from tcavoidsrc.control.telemetry import TelemetryRecord
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import ee_pose
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.perception.model import CollidableRegionNet
from tcavoidsrc.perception.observation import Label
from tcavoidsrc.rl.env import ReachEnv
from tcavoidsrc.rl.observations import (
    OBSERVATION_KINDS,
    FusedMemoryObservation,
    ObservationBuilder,
    SensorRig,
    StepContext,
    build_observation,
)
from tcavoidsrc.safety.proxy import ClearanceSafetyProxy, surface_clearances
from tcavoidsrc.world.scene import Scenario, Scene, Workspace
from tcavoidsrc.world.voxel_grid import VoxelGrid

logger = logging.getLogger(__name__)

SWEEP_CONTROLLERS = ("hybrid", "rl_only", "nominal")
# Sweep targets farther than this fraction of the reach from the base are reported as N/A
REACH_MARGIN = 0.98


def perception_choices(method: str) -> Tuple[str, ...]:
    if method in ("apf", "mppi"):
        return PERCEPTION_KINDS
    if method in ("rl", "hybrid"):
        return ("gt",) + OBSERVATION_KINDS
    if method == "nominal":
        return ("gt",)
    raise ConfigError(f"Unknown method {method!r}, expected one of {METHODS}")


def check_ids(method: str, perception: str) -> None:
    choices = perception_choices(method)
    if perception not in choices:
        raise ConfigError(f"Unknown perception {perception!r} for method {method!r}, expected one of {choices}")


def scenario_id(obstacle_speed: float) -> str:
    return "static" if obstacle_speed == 0.0 else f"dynamic_{obstacle_speed:g}"


def with_episode_steps(config: DictConfig, steps: int) -> DictConfig:
    """Config copy whose environment truncation happens after ``steps`` steps."""
    return OmegaConf.merge(config, {"rl": {"episode_steps": int(steps)}})


def observation_builder(
    config: DictConfig, method: str, perception: str, model: Optional[CollidableRegionNet] = None, noisy: bool = True
) -> ObservationBuilder:
    if method in ("rl", "hybrid") and perception in OBSERVATION_KINDS:
        return build_observation(config, perception, model, noisy)
    return ProprioObservation(len(config.chain.joint_axes), config.perception.history)


@dataclass(eq=False)
class TrialResult:
    seed: int
    outcome: TrialOutcome
    steps: int
    min_clearance: float
    tool_corner_violations: int = 0
    switches: int = 0
    records: List[TelemetryRecord] = field(default_factory=list)
    waypoints: Optional[np.ndarray] = None


@dataclass(eq=False)
class BenchmarkResult:
    method: str
    perception: str
    scenario: str
    trials: List[TrialResult]

    def _rate(self, outcome: TrialOutcome) -> float:
        if not self.trials:
            return 0.0
        return 100.0 * sum(trial.outcome is outcome for trial in self.trials) / len(self.trials)

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def success_rate(self) -> float:
        return self._rate(TrialOutcome.SUCCESS)

    @property
    def collision_rate(self) -> float:
        return self._rate(TrialOutcome.COLLISION)

    @property
    def tool_violation_rate(self) -> float:
        return self._rate(TrialOutcome.TOOL_VIOLATION)

    @property
    def timeout_rate(self) -> float:
        return self._rate(TrialOutcome.TIMEOUT)

    def summary(self) -> Dict[str, object]:
        return {
            "method": self.method,
            "perception": self.perception,
            "scenario": self.scenario,
            "trials": self.n_trials,
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "tool_violation_rate": self.tool_violation_rate,
            "timeout_rate": self.timeout_rate,
        }


def _telemetry(
    env: ReachEnv, controller: BenchController, q_prev: np.ndarray, costs: np.ndarray, body: float, tool_gap: float
) -> TelemetryRecord:
    if controller.safety is not None:
        v_body, v_tool = controller.safety.v_body, controller.safety.v_tool
    else:
        proxy = ClearanceSafetyProxy()
        v_body, v_tool = proxy.value(body), proxy.value(tool_gap)
    return TelemetryRecord(
        t=env.steps * env.dt,
        q=q_prev,
        q_des=env.q,
        active=controller.active,
        v_body=v_body,
        v_tool=v_tool,
        costs=np.asarray(costs),
        ee_pose=env.ee_pose,
    )


def run_episode(
    env: ReachEnv,
    controller: BenchController,
    scenario: Scenario,
    q0: np.ndarray,
    seed: int,
    line: SweepLine,
    orientation: np.ndarray,
    max_steps: int,
) -> TrialResult:
    """Drives one waypoint sweep and classifies it.

    The waypoint follows ``line``; a trial succeeds once the sweep is over and the end effector is within the
    success tolerance of the final waypoint. Collision beats tool violation, which beats success and timeout.
    """
    dt = env.dt
    scenario = scenario._replace(targets=[Pose(line.position(dt), orientation)])
    observation, _ = env.reset(seed=seed, options={"scenario": scenario, "q0": q0})
    controller.reset(env)

    records, waypoints = [], []
    min_clearance = np.inf
    corner_violations = 0
    outcome = TrialOutcome.TIMEOUT
    for step in range(max_steps):
        t = (step + 1) * dt
        waypoint = line.position(t)
        env.set_target(Pose(waypoint, orientation))
        q_prev = env.q
        observation, _, terminated, _, info = env.advance(controller.act(env, observation))

        body, tool_gap = surface_clearances(env.chain, env.q, env.command.tool, env.scene)
        min_clearance = min(min_clearance, body)
        if env.command.mode is InteractionMode.PROTECTIVE:
            corner_violations += int(info["costs"][TOOL_VIOLATION])
        records.append(_telemetry(env, controller, q_prev, info["costs"], body, tool_gap))
        waypoints.append(waypoint)

        if terminated:
            outcome = TrialOutcome.COLLISION
            break
        if t >= line.duration and info["position_error"] < env.success_tolerance:
            outcome = TrialOutcome.SUCCESS
            break
        if env.done:
            break

    if outcome is not TrialOutcome.COLLISION and env.tool_violation:
        outcome = TrialOutcome.TOOL_VIOLATION
    switches = controller.controller.switches if isinstance(controller, PolicyController) else 0
    return TrialResult(
        seed, outcome, len(records), float(min_clearance), corner_violations, switches, records, np.array(waypoints)
    )


def run_trial(
    config: DictConfig,
    method: str,
    perception: str,
    obstacle_speed: float,
    seed: int,
    policy: Optional[Policy] = None,
    model: Optional[CollidableRegionNet] = None,
    tool: Optional[ToolRegion] = None,
    mode: InteractionMode = InteractionMode.ENGAGE,
    noisy: bool = True,
) -> TrialResult:
    check_ids(method, perception)
    rng = np.random.default_rng(seed)
    chain = SerialChain.from_config(config.chain)
    scenario, q0, line = dynamic_scenario(config, chain, obstacle_speed, rng, tool, mode)
    max_steps = config.bench.timeout_steps
    env = ReachEnv(with_episode_steps(config, max_steps), observation_builder(config, method, perception, model, noisy))
    controller = make_controller(config, method, perception, seed, policy, noisy)
    orientation = ee_pose(chain, q0).orientation
    return run_episode(env, controller, scenario, q0, seed, line, orientation, max_steps)


def _trial_job(arguments) -> TrialResult:
    return run_trial(*arguments)


def run_dynamic_benchmark(
    config: DictConfig,
    method: str,
    perception: str = "gt",
    obstacle_speed: float = 0.0,
    trials: Optional[int] = None,
    seed: Optional[int] = None,
    policy: Optional[Policy] = None,
    model: Optional[CollidableRegionNet] = None,
    tool: Optional[ToolRegion] = None,
    mode: InteractionMode = InteractionMode.ENGAGE,
    n_workers: Optional[int] = None,
) -> BenchmarkResult:
    """Waypoint sweep past a centered obstacle; trial ``i`` runs with seed ``seed + i``.

    With more than one worker the trials run in a process pool and are aggregated in trial order, so the result
    does not depend on the worker count.
    """
    check_ids(method, perception)
    trials = config.bench.trials if trials is None else trials
    seed = config.training.seed if seed is None else seed
    n_workers = config.bench.n_workers if n_workers is None else n_workers
    jobs = [
        (config, method, perception, obstacle_speed, seed + i, policy, model, tool, mode) for i in range(trials)
    ]
    desc = f"{method}/{perception} at {obstacle_speed:g} m/s"
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(tqdm(pool.map(_trial_job, jobs), total=trials, desc=desc))
    else:
        results = [_trial_job(job) for job in tqdm(jobs, desc=desc)]

    result = BenchmarkResult(method, perception, scenario_id(obstacle_speed), results)
    logger.info(
        "%s: success %.1f%%, collision %.1f%%, tool violation %.1f%%",
        desc,
        result.success_rate,
        result.collision_rate,
        result.tool_violation_rate,
    )
    return result


@dataclass(eq=False)
class TrackingSweepResult:
    """Mean hold error per target and tool size; ``nan`` marks targets inside the obstacle or out of reach."""

    tool_sizes: List[float]
    grid_shape: Tuple[int, int]
    targets: np.ndarray
    errors: np.ndarray
    collided: np.ndarray
    spacing: float

    def error_grid(self, tool_index: int) -> np.ndarray:
        return self.errors[tool_index].reshape(self.grid_shape)

    def high_error_area(self, threshold: float) -> np.ndarray:
        """Area in square meters of reachable cells whose mean error exceeds ``threshold``, per tool size."""
        errors = np.where(np.isnan(self.errors), -np.inf, self.errors)
        return (errors > threshold).sum(axis=1) * self.spacing ** 2

    def free_space_error(self, threshold: float) -> np.ndarray:
        """Mean error over the cells that stayed below ``threshold``, per tool size."""
        result = []
        for errors in self.errors:
            free = errors[~np.isnan(errors) & (errors <= threshold)]
            result.append(float(free.mean()) if free.size else np.nan)
        return np.array(result)


def _sweep_controller(config: DictConfig, controller: str, policy: Optional[Policy]) -> BenchController:
    if controller == "nominal":
        return NominalController(config)
    if controller == "hybrid":
        return PolicyController(config, policy or ZeroPolicy(len(config.chain.joint_axes)))
    if controller == "rl_only":
        if policy is None:
            raise ConfigError("The rl_only sweep needs a trained policy")
        return PolicyController(config, policy, rl_only=True)
    raise ConfigError(f"Unknown sweep controller {controller!r}, expected one of {SWEEP_CONTROLLERS}")


def run_tracking_sweep(
    config: DictConfig,
    mode: InteractionMode = InteractionMode.PROTECTIVE,
    tool_sizes: Optional[Sequence[float]] = None,
    controller: str = "hybrid",
    policy: Optional[Policy] = None,
    hold_seconds: Optional[float] = None,
) -> TrackingSweepResult:
    """Holds every target of a plane grid for ``hold_seconds`` starting from home next to a static obstacle.

    The error of a cell is the mean end-effector position error over the last third of the hold.
    """
    bench = config.bench
    tool_sizes = list(bench.tool_sizes if tool_sizes is None else tool_sizes)
    hold_seconds = bench.hold_seconds if hold_seconds is None else hold_seconds
    steps = max(1, int(round(hold_seconds / config.control.dt)))
    tail = max(1, steps // 3)

    chain = SerialChain.from_config(config.chain)
    workspace = Workspace.from_config(config.workspace)
    obstacle = sweep_obstacle(config)
    scene = Scene(workspace, (obstacle,))
    targets, grid_shape = sweep_targets(config)
    orientation = ee_pose(chain, chain.home).orientation
    unreachable = np.linalg.norm(targets - chain.base_position, axis=1) > REACH_MARGIN * chain.reach
    blocked = obstacle.contains(targets, workspace.table_height) | unreachable

    env = ReachEnv(
        with_episode_steps(config, steps), ProprioObservation(chain.n_joints, config.perception.history)
    )
    errors = np.full((len(tool_sizes), len(targets)), np.nan)
    collided = np.zeros((len(tool_sizes), len(targets)), dtype=bool)
    for s, size in enumerate(tool_sizes):
        tool = tool_of_size(size)
        for i in tqdm(range(len(targets)), desc=f"Tracking sweep, tool {size:g} m"):
            if blocked[i]:
                continue
            target = Pose(targets[i], orientation)
            scenario = Scenario(scene, [target], [], tool, mode)
            bench_controller = _sweep_controller(config, controller, policy)
            env.reset(seed=i, options={"scenario": scenario, "q0": chain.home})
            bench_controller.reset(env)
            observation = env.observation_builder.build(env.context())
            history = deque(maxlen=tail)
            for _ in range(steps):
                observation, _, terminated, _, info = env.advance(bench_controller.act(env, observation))
                history.append(info["position_error"])
                if terminated:
                    collided[s, i] = True
                    break
            errors[s, i] = float(np.mean(history))
    return TrackingSweepResult(tool_sizes, grid_shape, targets, errors, collided, bench.sweep_grid_spacing)


@dataclass(eq=False)
class MemoryTrace:
    """Per-step frame labels and fused occupancy of a scripted trajectory past a static obstacle."""

    grid: VoxelGrid
    labels: np.ndarray
    memory: np.ndarray
    ee_positions: np.ndarray
    over_filtered: int

    def snapshot(self, step: int) -> VoxelGrid:
        return self.grid.with_cells(self.memory[step])

    def observed(self) -> np.ndarray:
        """Cells labelled by at least one frame."""
        return np.any(self.labels != Label.UNKNOWN, axis=0)


def run_memory_demo(
    config: DictConfig, steps: Optional[int] = None, remove_obstacle_at: Optional[int] = None, seed: int = 0
) -> MemoryTrace:
    """Sweeps the end effector back and forth along the benchmark line and records the fused memory.

    ``remove_obstacle_at`` deletes the obstacle from the scene from that step on, so its cells get re-observed
    as free.
    """
    chain = SerialChain.from_config(config.chain)
    workspace = Workspace.from_config(config.workspace)
    line = SweepLine.from_config(config)
    dt = config.control.dt
    steps = int(round(2 * line.duration / dt)) if steps is None else steps
    rng = np.random.default_rng(seed)
    scene = Scene(workspace, (centered_obstacle(config, line, 0.0, rng),))

    settings = ControllerSettings.from_config(config)
    q, start = start_configuration(chain, line.start, config)
    history = deque([q.copy()] * settings.history, maxlen=settings.history)
    fusion = FusedMemoryObservation(SensorRig.from_config(config), config.perception, chain.n_joints)

    labels, memory, ee_positions = [], [], []
    for step in range(steps):
        if remove_obstacle_at is not None and step == remove_obstacle_at:
            scene = scene.with_obstacles(())
        # Ping-pong along the line so the arm occludes the table on the way back
        t = (step + 1) * dt % (2 * line.duration)
        t = 2 * line.duration - t if t > line.duration else t
        cmd = Command(Pose(line.position(t), start.orientation), InteractionMode.ENGAGE, ToolRegion.empty())
        q = nominal_step(chain, q, cmd, settings)
        history.append(q.copy())
        fusion.build(StepContext(scene, chain, q, np.stack(history), cmd, rng))
        labels.append(fusion.last_observation.labels.copy())
        memory.append(fusion.memory.copy())
        ee_positions.append(ee_pose(chain, q).position)
    return MemoryTrace(
        workspace.empty_grid(), np.stack(labels), np.stack(memory), np.stack(ee_positions), fusion.over_filtered
    )


@dataclass(eq=False)
class ModeTrace:
    mode: InteractionMode
    outcome: TrialOutcome
    tool_centers: np.ndarray
    v_max: np.ndarray
    reactive: np.ndarray
    tool_corner_violations: int

    @property
    def tool_path_length(self) -> float:
        if len(self.tool_centers) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.tool_centers, axis=0), axis=1)))


def run_mode_trace(
    config: DictConfig,
    policy: Optional[Policy] = None,
    tool_size: float = 0.1,
    seed: Optional[int] = None,
    model: Optional[CollidableRegionNet] = None,
    perception: str = "gt",
) -> Dict[InteractionMode, ModeTrace]:
    """Same static sweep in both interaction modes with the hybrid controller; tool-centre paths and safety."""
    seed = config.training.seed if seed is None else seed
    tool = tool_of_size(tool_size)
    traces = {}
    for mode in InteractionMode:
        trial = run_trial(config, "hybrid", perception, 0.0, seed, policy, model, tool, mode)
        centers = np.array([tool.center(record.ee_pose) for record in trial.records]).reshape(-1, 3)
        v_max = np.array(
            [max(r.v_body, r.v_tool) if mode is InteractionMode.PROTECTIVE else r.v_body for r in trial.records]
        )
        reactive = np.array([record.active is ActiveController.REACTIVE for record in trial.records])
        traces[mode] = ModeTrace(mode, trial.outcome, centers, v_max, reactive, trial.tool_corner_violations)
        logger.info(
            "%s mode: %s, tool path %.3f m, %d corner violations",
            mode.value,
            trial.outcome.value,
            traces[mode].tool_path_length,
            trial.tool_corner_violations,
        )
    return traces

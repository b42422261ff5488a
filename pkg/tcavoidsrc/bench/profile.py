import logging
import time
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import torch
from omegaconf import DictConfig
from tqdm import tqdm

from tcavoidsrc.baselines.clearance import GroundTruthClearance
from tcavoidsrc.baselines.mppi import MppiConfig, MppiPlanner
from tcavoidsrc.control.controller import Command, ControllerSettings, HybridController, Policy, hybrid_step
from tcavoidsrc.kinematics.chain import SerialChain
from tcavoidsrc.netcore.engine import parameter_bytes
from tcavoidsrc.perception.model import CollidableRegionNet, build_proprio
from tcavoidsrc.rl.observations import SensorRig, StepContext
from tcavoidsrc.rl.policy import ActorCritic, TorchPolicy
from tcavoidsrc.world.scene import ScenarioRanges, Workspace, sample_scenario
from tcavoidsrc.world.voxel_grid import compute_esdf

logger = logging.getLogger(__name__)

STAGES = ("perception", "esdf", "inference", "control")


@dataclass(frozen=True)
class StageStats:
    mean: float
    sd: float
    max: float
    median: float

    @staticmethod
    def from_seconds(samples) -> "StageStats":
        ms = np.asarray(samples, dtype=np.float64) * 1e3
        return StageStats(float(ms.mean()), float(ms.std()), float(ms.max()), float(np.median(ms)))


@dataclass(frozen=True)
class LatencyProfile:
    """Per-stage step latency in milliseconds; ``wall`` times the whole step including bookkeeping."""

    stages: Dict[str, StageStats]
    wall: StageStats
    steps: int

    def rows(self) -> List[Dict[str, object]]:
        named = list(self.stages.items()) + [("wall", self.wall)]
        return [
            {"stage": name, "mean_ms": s.mean, "sd_ms": s.sd, "max_ms": s.max, "median_ms": s.median}
            for name, s in named
        ]


def _default_models(config: DictConfig, seed: int):
    torch.manual_seed(seed)
    return CollidableRegionNet.from_config(config).eval(), TorchPolicy(ActorCritic.from_config(config, "ours"))


def profile_latency(
    config: DictConfig,
    steps: Optional[int] = None,
    model: Optional[CollidableRegionNet] = None,
    policy: Optional[Policy] = None,
    seed: int = 0,
) -> LatencyProfile:
    """Times the runtime loop of the hybrid controller on a random static scenario.

    Stages: depth rendering plus voxelization, ESDF of the predicted occupancy, encoder inference, and the
    hybrid controller step (policy, critic switch, IK). Untrained networks of the configured size are used when
    none are given since the timing only depends on the architecture.
    """
    steps = config.bench.profile_steps if steps is None else steps
    if model is None or policy is None:
        default_model, default_policy = _default_models(config, seed)
        model = default_model if model is None else model
        policy = default_policy if policy is None else policy

    rng = np.random.default_rng(seed)
    chain = SerialChain.from_config(config.chain)
    workspace = Workspace.from_config(config.workspace)
    ranges = ScenarioRanges.from_config(config.scenario_ranges, config.rl.reset_fraction)
    scenario = sample_scenario(rng, ranges, workspace, chain)
    cmd = Command(scenario.targets[0], scenario.mode, scenario.tool)
    rig = SensorRig.from_config(config)
    settings = ControllerSettings.from_config(config)
    controller = HybridController(chain, policy, settings)

    q = chain.home.copy()
    controller.reset(q)
    history = deque([q.copy()] * settings.history, maxlen=settings.history)
    prev = np.full(workspace.dims, 0.5)
    timings = {stage: [] for stage in STAGES}
    wall = []
    for _ in tqdm(range(steps), desc="Profiling"):
        start = time.perf_counter()
        observation, _ = rig.capture(StepContext(scenario.scene, chain, q, np.stack(history), cmd, rng))
        t_perception = time.perf_counter()
        compute_esdf(workspace.empty_grid().with_cells(prev > 0.5))
        t_esdf = time.perf_counter()
        output = model.encode(observation, prev, build_proprio(np.stack(history), cmd.target, cmd.tool, cmd.mode))
        t_inference = time.perf_counter()
        q = hybrid_step(controller, q, output, cmd).q_des
        t_control = time.perf_counter()

        prev = output.predicted_occupancy.cells
        history.append(q.copy())
        for stage, begin, end in zip(
            STAGES, (start, t_perception, t_esdf, t_inference), (t_perception, t_esdf, t_inference, t_control)
        ):
            timings[stage].append(end - begin)
        wall.append(time.perf_counter() - start)

    profile = LatencyProfile(
        {stage: StageStats.from_seconds(samples) for stage, samples in timings.items()},
        StageStats.from_seconds(wall),
        steps,
    )
    logger.info("Median step %.2f ms over %d steps", profile.wall.median, steps)
    return profile


def profile_mppi(config: DictConfig, n_samples: int = 512, steps: int = 50, seed: int = 0) -> StageStats:
    """Planning latency of one MPPI step on a random static scenario with ground-truth clearance."""
    rng = np.random.default_rng(seed)
    chain = SerialChain.from_config(config.chain)
    workspace = Workspace.from_config(config.workspace)
    ranges = ScenarioRanges.from_config(config.scenario_ranges, config.rl.reset_fraction)
    scenario = sample_scenario(rng, ranges, workspace, chain)
    planner = MppiPlanner(chain, MppiConfig.from_config(config.mppi, n_samples), config.control.dt, rng)
    clearance = GroundTruthClearance(scenario.scene)

    q = chain.home.copy()
    samples = []
    for _ in tqdm(range(steps), desc=f"Profiling MPPI with {n_samples} samples"):
        start = time.perf_counter()
        q = planner.step(q, scenario.targets[0], clearance, scenario.tool, scenario.mode)
        samples.append(time.perf_counter() - start)
    return StageStats.from_seconds(samples)


def memory_profile(model: CollidableRegionNet, policy: Optional[ActorCritic] = None) -> Dict[str, int]:
    """Parameter memory in bytes of the runtime networks."""
    result = {"perception": parameter_bytes(model)}
    if policy is not None:
        result["policy"] = parameter_bytes(policy)
    result["total"] = sum(result.values())
    return result
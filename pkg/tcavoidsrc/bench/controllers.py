import logging
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.baselines.apf import ApfConfig, apf_step
from tcavoidsrc.baselines.clearance import (
    PERCEPTION_KINDS,
    ClearanceSource,
    EsdfClearance,
    GroundTruthClearance,
    TrackClearance,
)
from tcavoidsrc.baselines.mppi import MppiConfig, MppiPlanner
from tcavoidsrc.baselines.tracking import Tracker, TrackerSettings
from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.common.types import ActiveController
from tcavoidsrc.control.controller import (
    ControllerSettings,
    HybridController,
    Policy,
    ZeroPolicy,
    nominal_step,
)
from tcavoidsrc.kinematics.solver import body_spheres_world, ee_pose, link_frames
from tcavoidsrc.perception.model import build_proprio, proprio_size
from tcavoidsrc.perception.observation import Label, filter_self
from tcavoidsrc.rl.env import ReachEnv
from tcavoidsrc.rl.observations import FusedMemoryObservation, ObservationBuilder, SensorRig, StepContext
from tcavoidsrc.safety.proxy import ClearanceSafetyProxy
from tcavoidsrc.safety.switching import SafetyValues

logger = logging.getLogger(__name__)

METHODS = ("apf", "mppi", "rl", "hybrid", "nominal")


class ProprioObservation(ObservationBuilder):
    """Proprioception only, for controllers that do their own sensing."""

    def __init__(self, n_joints: int, history: int):
        super().__init__(None)
        self._size = proprio_size(n_joints, history)

    @property
    def size(self) -> int:
        return self._size

    def reset(self) -> None:
        pass

    def build(self, context: StepContext) -> np.ndarray:
        cmd = context.command
        return build_proprio(context.q_history, cmd.target, cmd.tool, cmd.mode)


class PerceptionFrontend(ABC):
    """Turns the current simulator state into a clearance source for the classical planners."""

    def reset(self) -> None:
        pass

    @abstractmethod
    def update(self, env: ReachEnv) -> ClearanceSource:
        pass


class GroundTruthFrontend(PerceptionFrontend):
    def update(self, env: ReachEnv) -> ClearanceSource:
        return GroundTruthClearance(env.scene)


class ClusterFrontend(PerceptionFrontend):
    """Self-filtered camera frame, 26-connected clusters, constant-velocity box tracks."""

    def __init__(self, config: DictConfig, rig: SensorRig):
        self._config = config
        self._rig = rig
        self._settings = TrackerSettings.from_config(config)
        self.tracker = Tracker(self._settings)

    def reset(self) -> None:
        self.tracker = Tracker(self._settings)

    def update(self, env: ReachEnv) -> ClearanceSource:
        context = env.context()
        observation, _ = self._rig.capture(context)
        frames = link_frames(env.chain, env.q)
        centers, radii = body_spheres_world(env.chain, env.q, frames)
        filtered = filter_self(
            observation,
            centers,
            radii,
            env.command.tool,
            ee_pose(env.chain, env.q, frames),
            self._config.perception.self_filter_margin,
        )
        occupancy = filtered.grid.with_cells(filtered.mask(Label.OCCUPIED))
        tracks = self.tracker.step(occupancy, self._config.control.dt)
        return TrackClearance(tracks, floor=self._config.workspace.table_height)


class EsdfFrontend(PerceptionFrontend):
    """ESDF of the fused occupancy memory thresholded at 0.5."""

    def __init__(self, config: DictConfig, rig: SensorRig):
        self._memory = FusedMemoryObservation(rig, config.perception, len(config.chain.joint_axes))

    def reset(self) -> None:
        self._memory.reset()

    def update(self, env: ReachEnv) -> ClearanceSource:
        self._memory.build(env.context())
        grid = env.workspace.empty_grid().with_cells(self._memory.memory)
        return EsdfClearance.from_occupancy(grid)


def make_frontend(config: DictConfig, perception: str, noisy: bool = True) -> PerceptionFrontend:
    if perception == "gt":
        return GroundTruthFrontend()
    if perception == "cluster":
        return ClusterFrontend(config, SensorRig.from_config(config, noisy))
    if perception == "esdf":
        return EsdfFrontend(config, SensorRig.from_config(config, noisy))
    raise ConfigError(f"Unknown perception {perception!r}, expected one of {PERCEPTION_KINDS}")


class BenchController(ABC):
    """Produces the next joint target from the simulator state and the latest env observation."""

    active: ActiveController = ActiveController.NOMINAL
    safety: Optional[SafetyValues] = None

    @abstractmethod
    def reset(self, env: ReachEnv) -> None:
        pass

    @abstractmethod
    def act(self, env: ReachEnv, observation: np.ndarray) -> np.ndarray:
        pass


class ApfController(BenchController):
    def __init__(self, config: DictConfig, frontend: PerceptionFrontend):
        self._cfg = ApfConfig.from_config(config.apf)
        self._dt = config.control.dt
        self._frontend = frontend

    def reset(self, env: ReachEnv) -> None:
        self._frontend.reset()

    def act(self, env: ReachEnv, observation: np.ndarray) -> np.ndarray:
        clearance = self._frontend.update(env)
        return apf_step(env.chain, env.q, env.command.target, clearance, self._cfg, self._dt)


class MppiController(BenchController):
    def __init__(self, config: DictConfig, frontend: PerceptionFrontend, seed: int, n_samples: Optional[int] = None):
        self._cfg = MppiConfig.from_config(config.mppi, n_samples)
        self._dt = config.control.dt
        self._frontend = frontend
        self._seed = seed
        self.planner: Optional[MppiPlanner] = None
        self.infeasible_steps = 0

    def reset(self, env: ReachEnv) -> None:
        self._frontend.reset()
        self.planner = MppiPlanner(env.chain, self._cfg, self._dt, np.random.default_rng(self._seed))
        self.infeasible_steps = 0

    def act(self, env: ReachEnv, observation: np.ndarray) -> np.ndarray:
        clearance = self._frontend.update(env)
        cmd = env.command
        q_des = self.planner.step(env.q, cmd.target, clearance, cmd.tool, cmd.mode)
        self.infeasible_steps += int(self.planner.last_result.infeasible)
        return q_des


class NominalController(BenchController):
    def __init__(self, config: DictConfig):
        self._settings = ControllerSettings.from_config(config)

    def reset(self, env: ReachEnv) -> None:
        pass

    def act(self, env: ReachEnv, observation: np.ndarray) -> np.ndarray:
        return nominal_step(env.chain, env.q, env.command, self._settings)


class PolicyController(BenchController):
    """Residual policy inside the critic-switched hybrid controller; ``rl_only`` always executes the policy output.

    Safety values come from the observation builder when it has learned heads, otherwise from ground-truth
    clearance.
    """

    def __init__(self, config: DictConfig, policy: Policy, rl_only: bool = False):
        self._settings = ControllerSettings.from_config(config)
        self._policy = policy
        self._rl_only = rl_only
        self._proxy = ClearanceSafetyProxy()
        self.controller: Optional[HybridController] = None

    def reset(self, env: ReachEnv) -> None:
        self.controller = HybridController(env.chain, self._policy, self._settings, rl_only=self._rl_only)
        self.controller.reset(env.q)

    def act(self, env: ReachEnv, observation: np.ndarray) -> np.ndarray:
        cmd = env.command
        safety = env.observation_builder.safety(env.context())
        if safety is None:
            safety = self._proxy(env.chain, env.q, cmd.tool, cmd.mode, env.scene)
        self.controller.state.observe(env.q)
        output = self.controller.step(env.q, observation, safety, cmd)
        self.active, self.safety = output.active, output.safety
        return output.q_des


def make_controller(
    config: DictConfig,
    method: str,
    perception: str = "gt",
    seed: int = 0,
    policy: Optional[Policy] = None,
    noisy: bool = True,
) -> BenchController:
    if method == "apf":
        return ApfController(config, make_frontend(config, perception, noisy))
    if method == "mppi":
        return MppiController(config, make_frontend(config, perception, noisy), seed)
    if method == "nominal":
        return NominalController(config)
    if method == "rl" and policy is None:
        raise ConfigError("The rl method needs a trained policy")
    if method in ("rl", "hybrid"):
        # Without a trained policy the hybrid controller holds still whenever the critic reports risk
        policy = ZeroPolicy(len(config.chain.joint_axes)) if policy is None else policy
        return PolicyController(config, policy, rl_only=method == "rl")
    raise ConfigError(f"Unknown method {method!r}, expected one of {METHODS}")

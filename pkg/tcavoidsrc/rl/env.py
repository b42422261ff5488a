import logging
from collections import deque
from typing import Any, Dict, NamedTuple, Optional

import gymnasium
import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.common.errors import ContractError
from tcavoidsrc.common.types import InteractionMode, TrialOutcome
from tcavoidsrc.control.constraints import (
    BODY_COLLISION,
    TOOL_VIOLATION,
    ConstraintLimits,
    KinematicTransition,
    constraint_costs,
)
from tcavoidsrc.control.controller import Command
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import body_spheres_world, clamp_to_limits, ee_pose, link_frames, rate_limit
from tcavoidsrc.rl.observations import ObservationBuilder, StepContext
from tcavoidsrc.world.scene import (
    Scenario,
    ScenarioRanges,
    Scene,
    Workspace,
    configuration_is_free,
    ground_truth_esdf,
    sample_configuration,
    sample_scenario,
    step_obstacles,
)
from tcavoidsrc.world.voxel_grid import VoxelGrid

logger = logging.getLogger(__name__)

MAX_RESET_TRIES = 100


class RewardTerms(NamedTuple):
    position: float
    orientation: float
    smooth_velocity: float
    smooth_acceleration: float

    @property
    def total(self) -> float:
        return self.position + self.orientation + self.smooth_velocity + self.smooth_acceleration


def orientation_reward(current: Pose, target: Pose) -> float:
    # |w| of current * target^-1 for unit quaternions
    w = abs(float(np.dot(current.orientation, target.orientation)))
    return 1.0 - 2.0 * float(np.arccos(np.clip(w, 0.0, 1.0)))


def reach_reward(
    ee: Pose, target: Pose, q_des: np.ndarray, q_des_prev: np.ndarray, q_des_prev2: np.ndarray
) -> RewardTerms:
    position_error = float(np.sum((target.position - ee.position) ** 2))
    return RewardTerms(
        position=1.0 - float(np.clip(position_error, 0.0, 1.0)),
        orientation=orientation_reward(ee, target),
        smooth_velocity=-1e-3 * float(np.sum((q_des - q_des_prev) ** 2)),
        smooth_acceleration=-1e-4 * float(np.sum((q_des - 2 * q_des_prev + q_des_prev2) ** 2)),
    )


class ReachEnv(gymnasium.Env):
    """Kinematic reaching task with obstacles, a tool box and an interaction mode.

    Actions are residual joint offsets. The commanded target is tracked perfectly within one step after
    joint-limit clamping and rate limiting. A body collision terminates the episode; reaching the last
    waypoint is reported through ``info["success"]`` without ending it.
    """

    metadata = {"render_modes": []}

    def __init__(
        self, config: DictConfig, observation: ObservationBuilder, ranges: Optional[ScenarioRanges] = None
    ):
        super().__init__()
        self._config = config
        self.chain = SerialChain.from_config(config.chain)
        self.workspace = Workspace.from_config(config.workspace)
        self.ranges = ranges or ScenarioRanges.from_config(config.scenario_ranges, config.rl.reset_fraction)
        self.limits = ConstraintLimits.from_config(config.control)
        self.observation_builder = observation
        self._dt = config.control.dt
        self._action_bound = config.control.action_bound
        self._episode_steps = config.rl.episode_steps
        self._success_tolerance = config.rl.success_tolerance
        self._history = config.perception.history

        n = self.chain.n_joints
        self.action_space = gymnasium.spaces.Box(-self._action_bound, self._action_bound, shape=(n,), dtype=np.float32)
        self.observation_space = gymnasium.spaces.Box(-np.inf, np.inf, shape=(observation.size,), dtype=np.float32)

        self._done = True
        self._scene: Optional[Scene] = None
        self._esdf: Optional[VoxelGrid] = None

    @property
    def scene(self) -> Scene:
        return self._scene

    @property
    def esdf(self) -> VoxelGrid:
        return self._esdf

    @property
    def q(self) -> np.ndarray:
        return self._q.copy()

    @property
    def ee_pose(self) -> Pose:
        return self._ee

    @property
    def command(self) -> Command:
        return self._command

    @property
    def steps(self) -> int:
        return self._steps

    @property
    def dt(self) -> float:
        return self._dt

    @property
    def success_tolerance(self) -> float:
        return self._success_tolerance

    @property
    def done(self) -> bool:
        return self._done

    @property
    def tool_violation(self) -> bool:
        """Whether a protective-mode tool-corner violation happened in this episode."""
        return self._tool_violation

    @property
    def q_history(self) -> np.ndarray:
        return np.stack(self._q_history)

    def context(self) -> StepContext:
        return StepContext(self._scene, self.chain, self._q, self.q_history, self._command, self.np_random)

    def set_target(self, target: Pose) -> None:
        """Moves the active waypoint, used by scripted sweeps."""
        self._targets[self._waypoint] = target
        self._command = Command(target, self._command.mode, self._command.tool)

    def _initial_configuration(self) -> np.ndarray:
        for _ in range(MAX_RESET_TRIES):
            q = sample_configuration(self.chain, self.np_random, self.ranges.reset_fraction)
            if configuration_is_free(self.chain, q, self._esdf):
                return q
        logger.debug("No free random start configuration, starting from home")
        return self.chain.home.copy()

    def reset(self, *, seed: Optional[int] = None, options: Optional[Dict[str, Any]] = None):
        super().reset(seed=seed)
        options = options or {}
        scenario: Scenario = options.get("scenario") or sample_scenario(
            self.np_random, self.ranges, self.workspace, self.chain
        )
        self._scene = scenario.scene
        self._esdf = ground_truth_esdf(self._scene)
        self._targets = list(scenario.targets)
        self._waypoint = 0
        self._command = Command(self._targets[0], scenario.mode, scenario.tool)

        q0 = options.get("q0")
        self._q = self._initial_configuration() if q0 is None else np.asarray(q0, dtype=np.float64).copy()
        self._ee = ee_pose(self.chain, self._q)
        self._q_des_prev = self._q.copy()
        self._q_des_prev2 = self._q.copy()
        self._q_history = deque([self._q.copy()] * self._history, maxlen=self._history)
        self._steps = 0
        self._success = False
        self._tool_violation = False
        self._done = False

        self.observation_builder.reset()
        observation = self.observation_builder.build(self.context())
        return observation.astype(np.float32), {"costs": np.zeros(4), "success": False}

    def step(self, action):
        if self._done:
            raise ContractError("step() called on a finished episode, call reset() first")
        action = np.clip(np.asarray(action, dtype=np.float64), -self._action_bound, self._action_bound)
        q_des = rate_limit(self.chain, self._q, clamp_to_limits(self.chain, self._q + action), self._dt)
        return self.advance(q_des)

    def advance(self, q_des: np.ndarray):
        """Executes a joint target produced by any controller; the gymnasium step tuple is returned."""
        if self._done:
            raise ContractError("advance() called on a finished episode, call reset() first")
        q_des = rate_limit(self.chain, self._q, clamp_to_limits(self.chain, q_des), self._dt)

        moving = any(o.speed > 0 for o in self._scene.obstacles)
        self._scene = step_obstacles(self._scene, self._dt)
        if moving:
            self._esdf = ground_truth_esdf(self._scene)

        frames = link_frames(self.chain, q_des)
        ee_next = ee_pose(self.chain, q_des, frames)
        centers, radii = body_spheres_world(self.chain, q_des, frames)
        transition = KinematicTransition(self._q, q_des, self._ee, ee_next, centers, radii)
        command = self._command
        costs = constraint_costs(self.chain, transition, self._esdf, command.tool, command.mode, self.limits)
        terms = reach_reward(ee_next, command.target, q_des, self._q_des_prev, self._q_des_prev2)

        position_error = float(np.linalg.norm(command.target.position - ee_next.position))
        if position_error < self._success_tolerance:
            if self._waypoint == len(self._targets) - 1:
                self._success = True
            else:
                self._waypoint += 1
                self._command = Command(self._targets[self._waypoint], command.mode, command.tool)

        self._q_des_prev2, self._q_des_prev = self._q_des_prev, q_des.copy()
        self._q, self._ee = q_des.copy(), ee_next
        self._q_history.append(q_des.copy())
        self._steps += 1
        self._tool_violation |= command.mode is InteractionMode.PROTECTIVE and bool(costs[TOOL_VIOLATION])

        terminated = bool(costs[BODY_COLLISION])
        truncated = not terminated and self._steps >= self._episode_steps
        self._done = terminated or truncated

        observation = self.observation_builder.build(self.context())
        info = {
            "costs": costs,
            "reward_terms": terms,
            "success": self._success,
            "position_error": position_error,
            "waypoint": self._waypoint,
        }
        if self._done:
            info["outcome"] = self.outcome(terminated)
        return observation.astype(np.float32), terms.total, terminated, truncated, info

    def outcome(self, collided: bool) -> TrialOutcome:
        if collided:
            return TrialOutcome.COLLISION
        if self._tool_violation:
            return TrialOutcome.TOOL_VIOLATION
        if self._success:
            return TrialOutcome.SUCCESS
        return TrialOutcome.TIMEOUT

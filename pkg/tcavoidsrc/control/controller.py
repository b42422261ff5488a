import logging
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, NamedTuple, Optional

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.common.types import ActiveController, InteractionMode
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import clamp_to_limits, dls_ik_step, rate_limit, solve_ik
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.perception.model import PerceptionOutput, build_proprio
from tcavoidsrc.safety.switching import SafetySwitch, SafetyValues, aggregate

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Command:
    target: Pose
    mode: InteractionMode = InteractionMode.ENGAGE
    tool: ToolRegion = field(default_factory=ToolRegion.empty)


@dataclass(frozen=True)
class ControllerSettings:
    dt: float = 0.02
    damping: float = 0.05
    orientation_weight: float = 1.0
    action_bound: float = 0.05
    max_ik_iters: int = 20
    tol_pos: float = 1e-7
    tol_rot: float = 1e-6
    threshold: float = 0.8
    hysteresis: float = 0.1
    history: int = 4

    @staticmethod
    def from_config(config: DictConfig) -> "ControllerSettings":
        control = config.control
        return ControllerSettings(
            dt=control.dt,
            damping=control.damping,
            orientation_weight=control.orientation_weight,
            action_bound=control.action_bound,
            max_ik_iters=control.max_ik_iters,
            tol_pos=control.tol_pos,
            tol_rot=control.tol_rot,
            threshold=config.safety.threshold,
            hysteresis=config.safety.hysteresis,
            history=config.perception.history,
        )


@dataclass(eq=False)
class ControllerState:
    """Commanded targets of the two previous steps and the measured joint history, oldest first."""

    active: ActiveController
    q_des_prev: np.ndarray
    q_des_prev2: np.ndarray
    q_history: Deque[np.ndarray]

    @staticmethod
    def initial(q0: np.ndarray, history: int) -> "ControllerState":
        q0 = np.asarray(q0, dtype=np.float64)
        return ControllerState(
            ActiveController.NOMINAL, q0.copy(), q0.copy(), deque([q0.copy()] * history, maxlen=history)
        )

    def history_array(self) -> np.ndarray:
        return np.stack(self.q_history)

    def observe(self, q: np.ndarray) -> None:
        self.q_history.append(np.asarray(q, dtype=np.float64).copy())

    def commit(self, q_des: np.ndarray) -> None:
        self.q_des_prev2 = self.q_des_prev
        self.q_des_prev = q_des.copy()


class Policy(ABC):
    @property
    @abstractmethod
    def n_actions(self) -> int:
        pass

    @abstractmethod
    def act(self, observation: np.ndarray, deterministic: bool = True) -> np.ndarray:
        pass


class ZeroPolicy(Policy):
    def __init__(self, n_actions: int):
        self._n_actions = n_actions

    @property
    def n_actions(self) -> int:
        return self._n_actions

    def act(self, observation: np.ndarray, deterministic: bool = True) -> np.ndarray:
        return np.zeros(self._n_actions)


def build_policy_observation(latent: np.ndarray, q_history: np.ndarray, cmd: Command) -> np.ndarray:
    """``[latent | joint history | target position | target Euler | tool | mode]``"""
    latent = np.asarray(latent, dtype=np.float32).reshape(-1)
    return np.concatenate([latent, build_proprio(q_history, cmd.target, cmd.tool, cmd.mode)])


def nominal_step(chain: SerialChain, q: np.ndarray, cmd: Command, settings: ControllerSettings) -> np.ndarray:
    """One damped least squares step toward the target, clamped and rate-limited."""
    dq = dls_ik_step(chain, q, cmd.target, settings.damping, settings.orientation_weight)
    return rate_limit(chain, q, clamp_to_limits(chain, q + dq), settings.dt)


def policy_step(policy: Policy, observation: np.ndarray, q: np.ndarray, action_bound: float) -> np.ndarray:
    action = np.clip(policy.act(observation, deterministic=True), -action_bound, action_bound)
    return np.asarray(q, dtype=np.float64) + action


class HybridOutput(NamedTuple):
    q_des: np.ndarray
    active: ActiveController
    safety: SafetyValues
    ik_converged: Optional[bool]


class HybridController:
    """Residual policy with a critic-gated switch.

    While the critic reports low risk the policy output warm-starts an iterative IK solve toward the target;
    otherwise the policy output is executed directly. Both branches are clamped and rate-limited.
    """

    def __init__(
        self, chain: SerialChain, policy: Policy, settings: ControllerSettings = ControllerSettings(), rl_only=False
    ):
        self._chain = chain
        self._policy = policy
        self._settings = settings
        self._rl_only = rl_only
        self._switch = SafetySwitch(settings.threshold, settings.hysteresis)
        self._state = ControllerState.initial(chain.home, settings.history)
        self._ik_failures = 0

    @property
    def state(self) -> ControllerState:
        return self._state

    @property
    def settings(self) -> ControllerSettings:
        return self._settings

    @property
    def ik_failures(self) -> int:
        return self._ik_failures

    @property
    def switches(self) -> int:
        return self._switch.switches

    def reset(self, q0: np.ndarray) -> None:
        self._switch.reset()
        self._state = ControllerState.initial(q0, self._settings.history)
        self._ik_failures = 0

    def observation(self, latent: np.ndarray, cmd: Command) -> np.ndarray:
        return build_policy_observation(latent, self._state.history_array(), cmd)

    def step(self, q: np.ndarray, observation: np.ndarray, safety: SafetyValues, cmd: Command) -> HybridOutput:
        settings = self._settings
        q = np.asarray(q, dtype=np.float64)
        active = self._switch.update(safety.v_max)
        q_policy = policy_step(self._policy, observation, q, settings.action_bound)

        converged = None
        q_des = q_policy
        if active is ActiveController.NOMINAL and not self._rl_only:
            result = solve_ik(
                self._chain,
                q_policy,
                cmd.target,
                max_iters=settings.max_ik_iters,
                tol_pos=settings.tol_pos,
                tol_rot=settings.tol_rot,
                damping=settings.damping,
                orientation_weight=settings.orientation_weight,
            )
            converged = result.converged
            if result.converged:
                q_des = result.q
            else:
                self._ik_failures += 1
                logger.debug("IK warm start failed (residual %.2e), using the policy output", result.pos_residual)

        q_des = rate_limit(self._chain, q, clamp_to_limits(self._chain, q_des), settings.dt)
        self._state.commit(q_des)
        self._state.active = active
        return HybridOutput(q_des, active, safety, converged)


def hybrid_step(
    controller: HybridController, q: np.ndarray, perception: PerceptionOutput, cmd: Command
) -> HybridOutput:
    """Controller step driven by the learned encoder: latent for the policy and critic heads for the switch."""
    controller.state.observe(q)
    v_body, v_tool = (float(v) for v in perception.safety_values.detach().cpu().numpy())
    observation = controller.observation(perception.latent.detach().cpu().numpy(), cmd)
    return controller.step(q, observation, aggregate(v_body, v_tool, cmd.mode), cmd)

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.baselines.clearance import ClearanceSource
from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import link_frames_batch, rate_limit, sphere_centers_from_frames
from tcavoidsrc.kinematics.tool_region import ToolRegion

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MppiConfig:
    horizon_steps: int = 25
    n_samples: int = 4000
    temperature: float = 0.5
    noise_std: float = 0.02
    w_tracking: float = 1.0
    w_collision: float = 100.0
    w_smooth: float = 0.1
    margin: float = 0.03

    def __post_init__(self):
        if self.horizon_steps <= 0 or self.n_samples <= 0:
            raise ValueError(f"Horizon and sample count must be positive, got {self.horizon_steps}, {self.n_samples}")
        if self.temperature <= 0:
            raise ValueError(f"Temperature must be positive, got {self.temperature}")

    @staticmethod
    def from_config(config: DictConfig, n_samples: Optional[int] = None) -> "MppiConfig":
        return MppiConfig(
            horizon_steps=config.horizon_steps,
            n_samples=config.n_samples if n_samples is None else n_samples,
            temperature=config.temperature,
            noise_std=config.noise_std,
            w_tracking=config.w_tracking,
            w_collision=config.w_collision,
            w_smooth=config.w_smooth,
            margin=config.margin,
        )


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """``exp(-(S_k - min S) / lambda)`` normalized to sum to one."""
    if temperature <= 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    costs = np.asarray(costs, dtype=np.float64)
    weights = np.exp(-(costs - costs.min()) / temperature)
    return weights / weights.sum()


class MppiResult(NamedTuple):
    sequence: np.ndarray
    weights: np.ndarray
    costs: np.ndarray
    infeasible: bool


class MppiPlanner:
    """Sampling MPC over joint displacement sequences with kinematic rollouts.

    Controls are per-step joint displacements bounded by the velocity limits. The mean sequence is warm-started
    by shifting the previous plan one step.
    """

    def __init__(self, chain: SerialChain, cfg: MppiConfig, dt: float, rng: np.random.Generator):
        self.chain = chain
        self.cfg = cfg
        self.dt = dt
        self.rng = rng
        self._max_step = chain.joint_vel_limits * dt
        self._mean = np.zeros((cfg.horizon_steps, chain.n_joints))
        self.last_result: Optional[MppiResult] = None

    def reset(self) -> None:
        self._mean = np.zeros_like(self._mean)

    @property
    def mean_sequence(self) -> np.ndarray:
        return self._mean.copy()

    def rollout_costs(
        self,
        q: np.ndarray,
        controls: np.ndarray,
        target: Pose,
        clearance: ClearanceSource,
        tool: ToolRegion,
        mode: InteractionMode,
    ):
        """Costs (K,) of control sequences (K, H, n) and whether each rollout collides."""
        cfg = self.cfg
        k, h, n = controls.shape
        trajectories = np.clip(
            q + np.cumsum(controls, axis=1), self.chain.joint_limits_lo, self.chain.joint_limits_hi
        ).reshape(-1, n)
        frames = link_frames_batch(self.chain, trajectories)

        ee = frames[:, self.chain.ee_link, :3, 3].reshape(k, h, 3)
        tracking = np.sum((ee - target.position) ** 2, axis=(1, 2))

        centers = sphere_centers_from_frames(self.chain, frames)
        gaps = clearance.distance(centers.reshape(-1, 3)).reshape(k * h, -1) - self.chain.sphere_radii
        if mode is InteractionMode.PROTECTIVE and np.any(tool.size > 0):
            ee_frames = frames[:, self.chain.ee_link]
            corners = np.einsum("bij,cj->bci", ee_frames[:, :3, :3], tool.local_corners()) + ee_frames[:, None, :3, 3]
            gaps = np.concatenate([gaps, clearance.distance(corners.reshape(-1, 3)).reshape(k * h, -1)], axis=1)
        gaps = gaps.reshape(k, h, -1)
        collides = np.any(gaps <= 0.0, axis=(1, 2))
        collision = np.sum(np.maximum(cfg.margin - gaps, 0.0) + (gaps <= 0.0), axis=(1, 2))

        smooth = np.sum(np.diff(controls, axis=1) ** 2, axis=(1, 2)) / self.dt ** 2

        costs = cfg.w_tracking * tracking + cfg.w_collision * collision + cfg.w_smooth * smooth
        return costs, collides

    def plan(
        self,
        q: np.ndarray,
        target: Pose,
        clearance: ClearanceSource,
        tool: Optional[ToolRegion] = None,
        mode: InteractionMode = InteractionMode.ENGAGE,
    ) -> MppiResult:
        cfg = self.cfg
        tool = ToolRegion.empty() if tool is None else tool
        q = np.asarray(q, dtype=np.float64)
        noise = self.rng.normal(0.0, cfg.noise_std, size=(cfg.n_samples,) + self._mean.shape)
        controls = np.clip(self._mean + noise, -self._max_step, self._max_step)
        costs, collides = self.rollout_costs(q, controls, target, clearance, tool, mode)

        weights = mppi_weights(costs, cfg.temperature)
        if np.all(collides):
            logger.debug("Every MPPI rollout collides, holding position")
            self.reset()
            self.last_result = MppiResult(np.zeros_like(self._mean), weights, costs, True)
            return self.last_result

        sequence = np.einsum("k,khn->hn", weights, controls)
        self._mean = np.concatenate([sequence[1:], np.zeros((1, sequence.shape[1]))])
        self.last_result = MppiResult(sequence, weights, costs, False)
        return self.last_result

    def step(
        self,
        q: np.ndarray,
        target: Pose,
        clearance: ClearanceSource,
        tool: Optional[ToolRegion] = None,
        mode: InteractionMode = InteractionMode.ENGAGE,
    ) -> np.ndarray:
        """Plans and returns the joint target after executing the first control."""
        result = self.plan(q, target, clearance, tool, mode)
        q_next = np.clip(q + result.sequence[0], self.chain.joint_limits_lo, self.chain.joint_limits_hi)
        return rate_limit(self.chain, q, q_next, self.dt)

from dataclasses import dataclass

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.world.voxel_grid import VoxelGrid, esdf_sample_with_gradient

N_CONSTRAINTS = 4
BODY_COLLISION, TOOL_VIOLATION, EE_SPEED, JOINT_SPEED = range(N_CONSTRAINTS)


def tool_corner_violation(esdf: VoxelGrid, ee_pose: Pose, tool: ToolRegion, threshold: float = 0.025) -> bool:
    values, _, _ = esdf_sample_with_gradient(esdf, tool.corners(ee_pose))
    return bool(values.min() < threshold)


def body_collision(esdf: VoxelGrid, centers: np.ndarray, radii: np.ndarray) -> bool:
    values, _, _ = esdf_sample_with_gradient(esdf, centers)
    return bool(np.any(values < radii))


@dataclass(frozen=True)
class ConstraintLimits:
    dt: float = 0.02
    tool_threshold: float = 0.025
    ee_speed_limit: float = 0.5
    joint_speed_fraction: float = 0.8

    @staticmethod
    def from_config(config: DictConfig) -> "ConstraintLimits":
        return ConstraintLimits(
            dt=config.dt,
            tool_threshold=config.tool_threshold,
            ee_speed_limit=config.ee_speed_limit,
            joint_speed_fraction=config.joint_speed_fraction,
        )


@dataclass(frozen=True, eq=False)
class KinematicTransition:
    """One simulator step: joint positions and end-effector poses before and after, plus body spheres after."""

    q: np.ndarray
    q_next: np.ndarray
    ee_pose: Pose
    ee_pose_next: Pose
    sphere_centers_next: np.ndarray
    sphere_radii: np.ndarray

    def ee_speed(self, dt: float) -> float:
        return float(np.linalg.norm(self.ee_pose_next.position - self.ee_pose.position) / dt)

    def joint_speeds(self, dt: float) -> np.ndarray:
        return np.abs(self.q_next - self.q) / dt


def constraint_costs(
    chain: SerialChain,
    transition: KinematicTransition,
    esdf: VoxelGrid,
    tool: ToolRegion,
    mode: InteractionMode,
    limits: ConstraintLimits = ConstraintLimits(),
) -> np.ndarray:
    """Indicator costs (body collision, tool violation, EE speed, joint speed) of a transition."""
    costs = np.zeros(N_CONSTRAINTS)
    costs[BODY_COLLISION] = body_collision(esdf, transition.sphere_centers_next, transition.sphere_radii)
    if mode is InteractionMode.PROTECTIVE:
        costs[TOOL_VIOLATION] = tool_corner_violation(esdf, transition.ee_pose_next, tool, limits.tool_threshold)
    costs[EE_SPEED] = transition.ee_speed(limits.dt) > limits.ee_speed_limit
    joint_limits = limits.joint_speed_fraction * chain.joint_vel_limits
    costs[JOINT_SPEED] = np.any(transition.joint_speeds(limits.dt) > joint_limits)
    return costs

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import ee_pose, solve_ik
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.world.scene import Footprint, ObstacleSpec, Scenario, Scene, Workspace

SPAWN_JITTER = 0.02


@dataclass(frozen=True, eq=False)
class SweepLine:
    """End-effector waypoint moving from ``start`` to ``end`` at constant speed, then holding at ``end``."""

    start: np.ndarray
    end: np.ndarray
    speed: float

    @staticmethod
    def from_config(config: DictConfig) -> "SweepLine":
        bench = config.bench
        return SweepLine(np.asarray(bench.sweep_start, float), np.asarray(bench.sweep_end, float), bench.waypoint_speed)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def duration(self) -> float:
        return self.length / self.speed

    @property
    def midpoint(self) -> np.ndarray:
        return (self.start + self.end) / 2

    def position(self, t: float) -> np.ndarray:
        if self.length == 0.0:
            return self.start.copy()
        travelled = min(self.speed * max(t, 0.0), self.length)
        return self.start + (self.end - self.start) * travelled / self.length


def start_configuration(chain: SerialChain, position: np.ndarray, config: DictConfig) -> Tuple[np.ndarray, Pose]:
    """IK solution from home to a start position and the resulting EE pose used as the waypoint orientation."""
    control = config.control
    result = solve_ik(
        chain,
        chain.home,
        Pose(position),
        max_iters=500,
        tol_pos=control.tol_pos,
        tol_rot=control.tol_rot,
        damping=control.damping,
        orientation_weight=control.orientation_weight,
    )
    return result.q, ee_pose(chain, result.q)


def centered_obstacle(config: DictConfig, line: SweepLine, speed: float, rng: np.random.Generator) -> ObstacleSpec:
    """Static case: box on the sweep midpoint. Dynamic case: box spawned past the line end, moving to the midpoint."""
    bench = config.bench
    size = np.asarray(bench.obstacle_size, dtype=np.float64)
    jitter = rng.uniform(-SPAWN_JITTER, SPAWN_JITTER, size=2)
    if speed == 0.0:
        return ObstacleSpec(Footprint.BOX, size[:2], float(size[2]), line.midpoint[:2] + jitter)
    direction = (line.end - line.start)[:2]
    direction = direction / np.linalg.norm(direction)
    spawn = line.end[:2] + direction * bench.obstacle_spawn_offset + jitter
    heading = line.midpoint[:2] - spawn
    velocity = speed * heading / np.linalg.norm(heading)
    return ObstacleSpec(Footprint.BOX, size[:2], float(size[2]), spawn, velocity=velocity)


def dynamic_scenario(
    config: DictConfig,
    chain: SerialChain,
    obstacle_speed: float,
    rng: np.random.Generator,
    tool: Optional[ToolRegion] = None,
    mode: InteractionMode = InteractionMode.ENGAGE,
    obstacles: Optional[List[ObstacleSpec]] = None,
) -> Tuple[Scenario, np.ndarray, SweepLine]:
    line = SweepLine.from_config(config)
    q0, start_pose = start_configuration(chain, line.start, config)
    if obstacles is None:
        obstacles = [centered_obstacle(config, line, obstacle_speed, rng)]
    scene = Scene(Workspace.from_config(config.workspace), tuple(obstacles))
    tool = ToolRegion.empty() if tool is None else tool
    end_pose = Pose(line.end, start_pose.orientation)
    return Scenario(scene, [end_pose], [], tool, mode), q0, line


def sweep_obstacle(config: DictConfig) -> ObstacleSpec:
    spec = config.bench.sweep_obstacle
    return ObstacleSpec(Footprint.BOX, list(spec.size), float(spec.height), list(spec.center))


def tool_of_size(size: float) -> ToolRegion:
    """Cube of edge ``size`` sitting ahead of the flange along its x axis."""
    if size <= 0:
        return ToolRegion.empty()
    return ToolRegion(offset=(size / 2, 0.0, 0.0), size=(size, size, size))


def sweep_targets(config: DictConfig) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Target positions on the sweep plane, row-major over the two free axes, and the grid shape."""
    bench = config.bench
    workspace = Workspace.from_config(config.workspace)
    axis = bench.sweep_plane_axis
    free = [a for a in range(3) if a != axis]
    spacing = bench.sweep_grid_spacing
    axes = [
        np.arange(workspace.origin[a] + spacing / 2, workspace.upper[a], spacing) for a in free
    ]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    targets = np.empty(grid.shape[:2] + (3,))
    targets[..., free[0]] = grid[..., 0]
    targets[..., free[1]] = grid[..., 1]
    targets[..., axis] = bench.sweep_plane_value
    return targets.reshape(-1, 3), grid.shape[:2]

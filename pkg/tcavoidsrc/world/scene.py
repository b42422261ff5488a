import enum
import logging
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from omegaconf import DictConfig, OmegaConf

from tcavoidsrc.common.errors import ScenarioError
from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import body_spheres_world, ee_pose, link_frames
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.world.voxel_grid import VoxelGrid, compute_esdf, esdf_sample_with_gradient

logger = logging.getLogger(__name__)


class Footprint(enum.Enum):
    BOX = "box"
    CYLINDER = "cylinder"


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class ObstacleSpec:
    """Vertical extrusion standing on the table. For cylinders ``size[0]`` is the diameter."""

    footprint: Footprint
    size: np.ndarray
    height: float
    position: np.ndarray
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        for name, length in (("size", 2), ("position", 2), ("velocity", 2)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(length))
        if self.height <= 0:
            raise ValueError(f"Obstacle height must be positive, got {self.height}")
        if np.any(self.size <= 0):
            raise ValueError(f"Obstacle footprint must be positive, got {self.size}")

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))

    def half_extent_xy(self) -> np.ndarray:
        if self.footprint is Footprint.CYLINDER:
            return np.full(2, self.size[0] / 2)
        return np.abs(_yaw_matrix(self.yaw)) @ (self.size / 2)

    def _planar_excess(self, points: np.ndarray) -> np.ndarray:
        """Per-point planar distance outside the footprint (zero inside)."""
        rel = points[:, :2] - self.position
        if self.footprint is Footprint.CYLINDER:
            return np.maximum(np.linalg.norm(rel, axis=-1) - self.size[0] / 2, 0.0)
        local = rel @ _yaw_matrix(self.yaw)
        return np.linalg.norm(np.maximum(np.abs(local) - self.size / 2, 0.0), axis=-1)

    def contains(self, points: np.ndarray, table_height: float) -> np.ndarray:
        points = np.atleast_2d(points)
        rel = points[:, :2] - self.position
        if self.footprint is Footprint.CYLINDER:
            inside_xy = np.linalg.norm(rel, axis=-1) < self.size[0] / 2
        else:
            inside_xy = np.all(np.abs(rel @ _yaw_matrix(self.yaw)) < self.size / 2, axis=-1)
        inside_z = (points[:, 2] > table_height) & (points[:, 2] < table_height + self.height)
        return inside_xy & inside_z

    def distance(self, points: np.ndarray, table_height: float) -> np.ndarray:
        points = np.atleast_2d(points)
        dz = np.maximum(np.maximum(table_height - points[:, 2], points[:, 2] - table_height - self.height), 0.0)
        return np.hypot(self._planar_excess(points), dz)


@dataclass(frozen=True, eq=False)
class Workspace:
    origin: np.ndarray
    size: np.ndarray
    resolution: float = 0.05
    table_height: float = 0.0
    walls: bool = False

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=np.float64).reshape(3))
        if self.resolution <= 0 or np.any(self.size <= 0):
            raise ValueError("Workspace size and resolution must be positive")

    @staticmethod
    def from_config(config: DictConfig) -> "Workspace":
        return Workspace(
            origin=np.array(config.origin),
            size=np.array(config.size),
            resolution=float(config.resolution),
            table_height=float(config.table_height),
            walls=bool(config.walls),
        )

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in np.round(self.size / self.resolution))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.size

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.size))

    def empty_grid(self, fill: float = 0.0, dtype=np.float64) -> VoxelGrid:
        return VoxelGrid(self.origin.copy(), self.resolution, np.full(self.dims, fill, dtype=dtype))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.origin) & (points <= self.upper), axis=-1)


@dataclass(frozen=True, eq=False)
class Scene:
    workspace: Workspace
    obstacles: Tuple[ObstacleSpec, ...] = ()
    seed: Optional[int] = None

    def with_obstacles(self, obstacles: Sequence[ObstacleSpec]) -> "Scene":
        return replace(self, obstacles=tuple(obstacles))


def rasterize(scene: Scene) -> VoxelGrid:
    """Binary ground-truth occupancy: a cell is occupied iff its center lies inside matter."""
    workspace = scene.workspace
    grid = workspace.empty_grid(dtype=bool)
    centers = grid.centers().reshape(-1, 3)
    occupied = centers[:, 2] < workspace.table_height
    for obstacle in scene.obstacles:
        occupied |= obstacle.contains(centers, workspace.table_height)
    cells = occupied.reshape(grid.dims)
    if workspace.walls:
        cells[[0, -1], :, :] = True
        cells[:, [0, -1], :] = True
    grid.cells = cells
    return grid


def ground_truth_esdf(scene: Scene) -> VoxelGrid:
    return compute_esdf(rasterize(scene), max_distance=scene.workspace.diagonal)


def scene_clearance(scene: Scene, points: np.ndarray) -> np.ndarray:
    """Analytic distance from points to the nearest obstacle, the table slab or enabled walls."""
    points = np.atleast_2d(points)
    workspace = scene.workspace
    clearance = np.maximum(points[:, 2] - workspace.table_height, 0.0)
    for obstacle in scene.obstacles:
        clearance = np.minimum(clearance, obstacle.distance(points, workspace.table_height))
    if workspace.walls:
        wall_gap = np.minimum(points[:, :2] - workspace.origin[:2], workspace.upper[:2] - points[:, :2]).min(axis=-1)
        clearance = np.minimum(clearance, np.maximum(wall_gap, 0.0))
    return clearance


def step_obstacles(scene: Scene, dt: float) -> Scene:
    """Advances obstacles along their planar velocity; a moving obstacle stops where it meets the workspace border."""
    workspace = scene.workspace
    lo, hi = workspace.origin[:2], workspace.upper[:2]
    moved = []
    for obstacle in scene.obstacles:
        if obstacle.speed == 0.0:
            moved.append(obstacle)
            continue
        half = obstacle.half_extent_xy()
        position = obstacle.position + obstacle.velocity * dt
        velocity = obstacle.velocity.copy()
        was_inside = (obstacle.position >= lo + half) & (obstacle.position <= hi - half)
        clamped = np.clip(position, lo + half, hi - half)
        hit = was_inside & (clamped != position)
        position = np.where(hit, clamped, position)
        velocity[hit] = 0.0
        moved.append(replace(obstacle, position=position, velocity=velocity))
    return scene.with_obstacles(moved)


@dataclass(frozen=True)
class ScenarioRanges:
    n_obstacles: Tuple[int, int] = (1, 4)
    footprint: Tuple[float, float] = (0.05, 0.3)
    height: Tuple[float, float] = (0.1, 0.6)
    speed: Tuple[float, float] = (0.0, 0.0)
    tool_size: Tuple[float, float] = (0.0, 0.25)
    tool_offset: Tuple[float, float] = (-0.1, 0.1)
    target_lo: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    target_hi: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    target_clearance: float = 0.1
    base_clearance: float = 0.2
    n_targets: int = 1
    max_tries: int = 1000
    protective_probability: float = 0.5
    reset_fraction: float = 0.7

    @staticmethod
    def from_config(config: DictConfig, reset_fraction: float = 0.7) -> "ScenarioRanges":
        values = OmegaConf.to_container(config, resolve=True)
        values = {key: tuple(value) if isinstance(value, list) else value for key, value in values.items()}
        return ScenarioRanges(**values, reset_fraction=reset_fraction)


class Scenario(NamedTuple):
    scene: Scene
    targets: List[Pose]
    target_configurations: List[np.ndarray]
    tool: ToolRegion
    mode: InteractionMode


def sample_configuration(chain: SerialChain, rng: np.random.Generator, fraction: float) -> np.ndarray:
    middle = (chain.joint_limits_lo + chain.joint_limits_hi) / 2
    half = (chain.joint_limits_hi - chain.joint_limits_lo) / 2 * fraction
    return rng.uniform(middle - half, middle + half)


def configuration_is_free(chain: SerialChain, q: np.ndarray, esdf: VoxelGrid) -> bool:
    centers, radii = body_spheres_world(chain, q)
    values, _, _ = esdf_sample_with_gradient(esdf, centers)
    return bool(np.all(values >= radii))


def _sample_obstacle(rng: np.random.Generator, ranges: ScenarioRanges, workspace: Workspace) -> ObstacleSpec:
    footprint = Footprint.BOX if rng.random() < 0.5 else Footprint.CYLINDER
    if footprint is Footprint.BOX:
        size = rng.uniform(*ranges.footprint, size=2)
    else:
        size = np.full(2, rng.uniform(*ranges.footprint))
    height = rng.uniform(*ranges.height)
    yaw = rng.uniform(0.0, np.pi) if footprint is Footprint.BOX else 0.0
    obstacle = ObstacleSpec(footprint, size, height, np.zeros(2), yaw)
    half = obstacle.half_extent_xy()
    lo = workspace.origin[:2] + half
    position = rng.uniform(lo, np.maximum(workspace.upper[:2] - half, lo))
    speed = rng.uniform(*ranges.speed)
    heading = rng.uniform(0.0, 2 * np.pi)
    velocity = speed * np.array([np.cos(heading), np.sin(heading)])
    return replace(obstacle, position=position, velocity=velocity)


def _sample_obstacles(
    rng: np.random.Generator, ranges: ScenarioRanges, workspace: Workspace, chain: SerialChain, max_draws: int
) -> Tuple[Optional[List[ObstacleSpec]], int]:
    """Obstacles clear of the robot base and the number of draws spent; ``None`` once ``max_draws`` run out."""
    lo, hi = ranges.n_obstacles
    count = int(rng.integers(lo, hi + 1))
    base = chain.base_position
    probe = np.array([[base[0], base[1], workspace.table_height + 1e-6]])
    obstacles, draws = [], 0
    while len(obstacles) < count:
        if draws >= max_draws:
            return None, draws
        draws += 1
        obstacle = _sample_obstacle(rng, ranges, workspace)
        if obstacle.distance(probe, workspace.table_height)[0] > ranges.base_clearance:
            obstacles.append(obstacle)
    return obstacles, draws


def sample_scenario(
    rng: np.random.Generator, ranges: ScenarioRanges, workspace: Workspace, chain: SerialChain
) -> Scenario:
    """Random obstacles, reachable free-space targets, a tool box and an interaction mode.

    Targets come from forward kinematics of random configurations so they are reachable; they must lie
    inside the target box with ground-truth clearance above ``ranges.target_clearance``.
    """
    target_lo, target_hi = np.array(ranges.target_lo), np.array(ranges.target_hi)
    tries = 0
    while tries < ranges.max_tries:
        obstacles, draws = _sample_obstacles(rng, ranges, workspace, chain, ranges.max_tries - tries)
        tries += max(draws, 1)
        if obstacles is None:
            break
        scene = Scene(workspace, tuple(obstacles))
        esdf = ground_truth_esdf(scene)
        targets, configurations = [], []
        while len(targets) < ranges.n_targets and tries < ranges.max_tries:
            tries += 1
            q = sample_configuration(chain, rng, ranges.reset_fraction)
            frames = link_frames(chain, q)
            pose = ee_pose(chain, q, frames)
            if np.any(pose.position < target_lo) or np.any(pose.position > target_hi):
                continue
            clearance, _, oob = esdf_sample_with_gradient(esdf, pose.position)
            if oob[0] or clearance[0] <= ranges.target_clearance or not configuration_is_free(chain, q, esdf):
                continue
            targets.append(pose)
            configurations.append(q)
        if len(targets) < ranges.n_targets:
            continue

        tool = ToolRegion(
            offset=rng.uniform(*ranges.tool_offset, size=3),
            size=rng.uniform(*ranges.tool_size, size=3),
        )
        mode = InteractionMode.PROTECTIVE if rng.random() < ranges.protective_probability else InteractionMode.ENGAGE
        return Scenario(scene, targets, configurations, tool, mode)

    logger.warning("Scenario sampling gave up after %d tries", tries)
    raise ScenarioError(f"Could not sample a valid scenario in {ranges.max_tries} tries")

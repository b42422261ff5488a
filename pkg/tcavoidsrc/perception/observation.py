import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from tcavoidsrc.kinematics.chain import Pose
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.perception.camera import CameraModel
from tcavoidsrc.world.scene import Scene, Workspace, rasterize, scene_clearance
from tcavoidsrc.world.voxel_grid import VoxelGrid

logger = logging.getLogger(__name__)

# Hit points are pushed this far along their ray so surface points on a cell face land in the cell behind it
_HIT_NUDGE = 1e-6
# Voxel centers exactly half a voxel from a surface stay free
_LABEL_TOLERANCE = 1e-9


class Label(enum.IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(eq=False)
class ObservationGrid:
    """Per-voxel labels of one depth frame."""

    grid: VoxelGrid

    @staticmethod
    def unknown(workspace: Workspace) -> "ObservationGrid":
        return ObservationGrid(workspace.empty_grid(Label.UNKNOWN, dtype=np.uint8))

    @property
    def labels(self) -> np.ndarray:
        return self.grid.cells

    @property
    def occupancy(self) -> np.ndarray:
        occupancy = np.full(self.labels.shape, 0.5)
        occupancy[self.labels == Label.OCCUPIED] = 1.0
        occupancy[self.labels == Label.FREE] = 0.0
        return occupancy

    def mask(self, label: Label) -> np.ndarray:
        return self.labels == label


def voxelize_observation(
    cloud: np.ndarray, camera: CameraModel, workspace: Workspace, carve_step: float = 0.5
) -> ObservationGrid:
    """Labels voxels holding points occupied and voxels crossed by a ray strictly before its hit free.

    Rays are marched from the camera in steps of ``carve_step`` voxels; samples outside the workspace are skipped.
    Occupied labels always override free ones.
    """
    observation = ObservationGrid.unknown(workspace)
    grid = observation.grid
    labels = grid.cells
    cloud = np.atleast_2d(np.asarray(cloud, dtype=np.float64)).reshape(-1, 3)
    if len(cloud) == 0:
        return observation

    origin = camera.origin
    offsets = cloud - origin
    ranges = np.linalg.norm(offsets, axis=-1)
    dirs = offsets / ranges[:, None]

    step = workspace.resolution * carve_step
    n_steps = int(np.ceil(ranges.max() / step))
    free = np.zeros(grid.dims, dtype=bool)
    for i in range(n_steps):
        t = i * step
        active = t < ranges
        if not active.any():
            break
        samples = origin + dirs[active] * t
        index = grid.index_of(samples)
        inside = grid.in_bounds(index)
        index = index[inside]
        free[index[:, 0], index[:, 1], index[:, 2]] = True

    hits = cloud + dirs * _HIT_NUDGE
    index = grid.index_of(hits)
    index = index[grid.in_bounds(index)]
    occupied = np.zeros(grid.dims, dtype=bool)
    occupied[index[:, 0], index[:, 1], index[:, 2]] = True

    labels[free] = Label.FREE
    labels[occupied] = Label.OCCUPIED
    return observation


def fuse_memory(
    prev_probability: np.ndarray,
    observation: ObservationGrid,
    l_occ: float = 0.85,
    l_free: float = -0.4,
    p_min: float = 0.01,
    p_max: float = 0.99,
) -> np.ndarray:
    """Per-cell log-odds update; unknown cells keep their previous probability."""
    log_odds = logit(np.clip(prev_probability, p_min, p_max))
    log_odds = log_odds + np.where(observation.mask(Label.OCCUPIED), l_occ, 0.0)
    log_odds = log_odds + np.where(observation.mask(Label.FREE), l_free, 0.0)
    return np.clip(expit(log_odds), p_min, p_max)


def _self_mask(
    grid: VoxelGrid,
    centers: np.ndarray,
    radii: np.ndarray,
    tool: Optional[ToolRegion],
    ee_pose: Optional[Pose],
    margin: float,
) -> np.ndarray:
    voxel_centers = grid.centers().reshape(-1, 3)
    half = grid.resolution / 2
    mask = np.zeros(len(voxel_centers), dtype=bool)
    for center, radius in zip(centers, radii):
        # Distance from the sphere center to the voxel cube
        excess = np.maximum(np.abs(voxel_centers - center) - half, 0.0)
        mask |= np.linalg.norm(excess, axis=-1) <= radius + margin
    if tool is not None and ee_pose is not None and np.any(tool.size > 0):
        mask |= tool.contains(voxel_centers, ee_pose, margin + half)
    return mask.reshape(grid.dims)


def filter_self(
    observation: ObservationGrid,
    centers: np.ndarray,
    radii: np.ndarray,
    tool: Optional[ToolRegion] = None,
    ee_pose: Optional[Pose] = None,
    margin: float = 0.03,
) -> ObservationGrid:
    """Forces voxels touching the inflated robot spheres or tool box to unknown."""
    filtered = ObservationGrid(observation.grid.copy())
    mask = _self_mask(filtered.grid, centers, radii, tool, ee_pose, margin)
    removed = int(np.count_nonzero(mask & filtered.mask(Label.OCCUPIED)))
    if removed:
        logger.debug("Self filter removed %d occupied voxels", removed)
    filtered.labels[mask] = Label.UNKNOWN
    return filtered


def make_training_labels(scene: Scene) -> VoxelGrid:
    """Collidable-region target: 1 inside matter or where the analytic clearance of a voxel center is below half a
    voxel, else 0."""
    occupancy = rasterize(scene)
    clearance = scene_clearance(scene, occupancy.centers().reshape(-1, 3)).reshape(occupancy.dims)
    near = clearance < scene.workspace.resolution / 2 - _LABEL_TOLERANCE
    return occupancy.with_cells((occupancy.cells | near).astype(np.float32))

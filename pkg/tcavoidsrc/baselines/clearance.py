from abc import ABC, abstractmethod
from typing import Sequence, Tuple

import numpy as np

from tcavoidsrc.world.scene import Scene, scene_clearance
from tcavoidsrc.world.voxel_grid import VoxelGrid, compute_esdf, esdf_sample_with_gradient

PERCEPTION_KINDS = ("gt", "cluster", "esdf")


def clearance_from_gt(points: np.ndarray, scene: Scene) -> np.ndarray:
    return scene_clearance(scene, np.atleast_2d(points))


def clearance_from_esdf(points: np.ndarray, esdf: VoxelGrid) -> np.ndarray:
    values, _, _ = esdf_sample_with_gradient(esdf, points)
    return values


def box_distance(points: np.ndarray, center: np.ndarray, extents: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance from points to an axis-aligned box and the closest box points; 0 inside."""
    half = np.asarray(extents) / 2
    closest = np.clip(points, center - half, center + half)
    return np.linalg.norm(points - closest, axis=-1), closest


def clearance_from_tracks(points: np.ndarray, tracks: Sequence) -> np.ndarray:
    points = np.atleast_2d(points)
    clearance = np.full(len(points), np.inf)
    for track in tracks:
        clearance = np.minimum(clearance, box_distance(points, track.position, track.extents)[0])
    return clearance


class ClearanceSource(ABC):
    """Distance from query points to the nearest perceived obstacle, with its spatial gradient."""

    @abstractmethod
    def distance(self, points: np.ndarray) -> np.ndarray:
        pass

    def distance_with_gradient(self, points: np.ndarray, eps: float = 1e-4) -> Tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(points)
        gradients = np.zeros_like(points)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = eps
            gradients[:, axis] = (self.distance(points + step) - self.distance(points - step)) / (2 * eps)
        return self.distance(points), gradients


class GroundTruthClearance(ClearanceSource):
    def __init__(self, scene: Scene):
        self.scene = scene

    def distance(self, points: np.ndarray) -> np.ndarray:
        return clearance_from_gt(points, self.scene)


class EsdfClearance(ClearanceSource):
    """Trilinear ESDF lookups; points outside the grid read the clamped border value."""

    def __init__(self, esdf: VoxelGrid):
        self.esdf = esdf

    @staticmethod
    def from_occupancy(probabilities: VoxelGrid, threshold: float = 0.5) -> "EsdfClearance":
        return EsdfClearance(compute_esdf(probabilities.with_cells(probabilities.cells >= threshold)))

    def distance(self, points: np.ndarray) -> np.ndarray:
        return clearance_from_esdf(points, self.esdf)

    def distance_with_gradient(self, points: np.ndarray, eps: float = 1e-4) -> Tuple[np.ndarray, np.ndarray]:
        values, gradients, _ = esdf_sample_with_gradient(self.esdf, points)
        return values, gradients


class TrackClearance(ClearanceSource):
    def __init__(self, tracks: Sequence = (), floor: float = -np.inf):
        self.tracks = list(tracks)
        self.floor = floor

    def distance(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        # The table is not clustered; it stays a known plane
        return np.minimum(clearance_from_tracks(points, self.tracks), np.maximum(points[:, 2] - self.floor, 0.0))

import itertools
from dataclasses import dataclass

import numpy as np

from tcavoidsrc.kinematics.chain import Pose

_CORNER_SIGNS = np.array(list(itertools.product((-0.5, 0.5), repeat=3)))


@dataclass(frozen=True, eq=False)
class ToolRegion:
    """Box rigidly attached to the end-effector frame: center offset and edge lengths, both in meters."""

    offset: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=np.float64).reshape(3)
        size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(size < 0):
            raise ValueError(f"Tool size must be non-negative, got {size}")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "size", size)

    @staticmethod
    def empty() -> "ToolRegion":
        return ToolRegion(np.zeros(3), np.zeros(3))

    def local_corners(self) -> np.ndarray:
        return self.offset + _CORNER_SIGNS * self.size

    def corners(self, ee_pose: Pose) -> np.ndarray:
        return ee_pose.position + ee_pose.rotation.apply(self.local_corners())

    def center(self, ee_pose: Pose) -> np.ndarray:
        return ee_pose.position + ee_pose.rotation.apply(self.offset)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.size, self.offset])

    def contains(self, points: np.ndarray, ee_pose: Pose, margin: float = 0.0) -> np.ndarray:
        local = ee_pose.rotation.inv().apply(np.atleast_2d(points) - ee_pose.position) - self.offset
        return np.all(np.abs(local) <= self.size / 2 + margin, axis=-1)

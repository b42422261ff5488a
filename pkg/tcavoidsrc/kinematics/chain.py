from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from omegaconf import DictConfig
from scipy.spatial.transform import Rotation

QUATERNION_TOLERANCE = 1e-9


def _to_scipy_quat(wxyz: np.ndarray) -> np.ndarray:
    return np.array([wxyz[1], wxyz[2], wxyz[3], wxyz[0]])


def _from_scipy_quat(xyzw: np.ndarray) -> np.ndarray:
    quat = np.array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]], dtype=np.float64)
    return quat / np.linalg.norm(quat)


@dataclass(frozen=True, eq=False)
class Pose:
    """Position in meters and unit quaternion orientation stored as (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        position = np.asarray(self.position, dtype=np.float64).reshape(3)
        orientation = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(orientation) - 1.0) > QUATERNION_TOLERANCE:
            raise ValueError(f"Quaternion must be unit-norm, got norm {np.linalg.norm(orientation)}")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "orientation", orientation)

    @staticmethod
    def from_rotation(position: np.ndarray, rotation: Rotation) -> "Pose":
        return Pose(position, _from_scipy_quat(rotation.as_quat()))

    @staticmethod
    def from_matrix(transform: np.ndarray) -> "Pose":
        return Pose.from_rotation(transform[:3, 3], Rotation.from_matrix(transform[:3, :3]))

    @staticmethod
    def from_euler(position: np.ndarray, euler_xyz: np.ndarray) -> "Pose":
        return Pose.from_rotation(position, Rotation.from_euler("xyz", euler_xyz))

    @property
    def rotation(self) -> Rotation:
        return Rotation.from_quat(_to_scipy_quat(self.orientation))

    def as_matrix(self) -> np.ndarray:
        transform = np.eye(4)
        transform[:3, :3] = self.rotation.as_matrix()
        transform[:3, 3] = self.position
        return transform

    def euler(self) -> np.ndarray:
        return self.rotation.as_euler("xyz")

    def __repr__(self) -> str:
        position, orientation = np.round(self.position, 5).tolist(), np.round(self.orientation, 5).tolist()
        return f"Pose(position={position}, orientation={orientation})"


class BodySphere(NamedTuple):
    link: int
    center: np.ndarray
    radius: float


def offset_transform(xyz: Sequence[float], rpy: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    transform = np.eye(4)
    transform[:3, :3] = Rotation.from_euler("xyz", rpy).as_matrix()
    transform[:3, 3] = xyz
    return transform


@dataclass(eq=False)
class SerialChain:
    joint_axes: np.ndarray
    link_offsets: np.ndarray
    joint_limits_lo: np.ndarray
    joint_limits_hi: np.ndarray
    joint_vel_limits: np.ndarray
    body_spheres: List[BodySphere]
    ee_link: int
    home: Optional[np.ndarray] = None
    name: str = "chain"

    def __post_init__(self):
        self.joint_axes = np.asarray(self.joint_axes, dtype=np.float64).reshape(-1, 3)
        self.link_offsets = np.asarray(self.link_offsets, dtype=np.float64)
        self.joint_limits_lo = np.asarray(self.joint_limits_lo, dtype=np.float64)
        self.joint_limits_hi = np.asarray(self.joint_limits_hi, dtype=np.float64)
        self.joint_vel_limits = np.asarray(self.joint_vel_limits, dtype=np.float64)
        n = len(self.joint_axes)

        if self.link_offsets.shape != (n + 1, 4, 4):
            raise ValueError(f"Expected {n + 1} link offsets for {n} joints, got shape {self.link_offsets.shape}")
        for name in ("joint_limits_lo", "joint_limits_hi", "joint_vel_limits"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have {n} entries")
        if not np.allclose(np.linalg.norm(self.joint_axes, axis=1), 1.0, atol=1e-9):
            raise ValueError("Joint axes must be unit vectors")
        if not np.all(self.joint_limits_lo < self.joint_limits_hi):
            raise ValueError("Joint limits must satisfy lo < hi")
        if not np.all(self.joint_vel_limits > 0):
            raise ValueError("Joint velocity limits must be positive")
        if not 0 <= self.ee_link <= n:
            raise ValueError(f"ee_link must be in [0, {n}], got {self.ee_link}")
        for sphere in self.body_spheres:
            if sphere.radius <= 0:
                raise ValueError(f"Sphere radius must be positive, got {sphere.radius}")
            if not 0 <= sphere.link <= n:
                raise ValueError(f"Sphere link index {sphere.link} out of range")
        self.home = np.zeros(n) if self.home is None else np.asarray(self.home, dtype=np.float64)

    @property
    def n_joints(self) -> int:
        return len(self.joint_axes)

    @property
    def base_position(self) -> np.ndarray:
        return self.link_offsets[0, :3, 3].copy()

    @property
    def reach(self) -> float:
        # Upper bound on the distance between the first joint and any point of the chain
        return float(np.sum(np.linalg.norm(self.link_offsets[1:, :3, 3], axis=1)))

    @property
    def sphere_links(self) -> np.ndarray:
        return np.array([s.link for s in self.body_spheres], dtype=np.int64)

    @property
    def sphere_centers(self) -> np.ndarray:
        return np.array([s.center for s in self.body_spheres], dtype=np.float64).reshape(-1, 3)

    @property
    def sphere_radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.body_spheres], dtype=np.float64)

    @staticmethod
    def from_config(config: DictConfig) -> "SerialChain":
        return SerialChain(
            joint_axes=np.array(config.joint_axes, dtype=np.float64),
            link_offsets=np.stack([offset_transform(o.xyz, o.rpy) for o in config.link_offsets]),
            joint_limits_lo=np.array(config.joint_limits_lo),
            joint_limits_hi=np.array(config.joint_limits_hi),
            joint_vel_limits=np.array(config.joint_vel_limits),
            body_spheres=[
                BodySphere(int(s.link), np.array(s.center, dtype=np.float64), float(s.radius))
                for s in config.body_spheres
            ],
            ee_link=int(config.ee_link),
            home=np.array(config.home) if config.get("home", None) is not None else None,
            name=config.get("name", "chain"),
        )

    @staticmethod
    def planar(
        link_lengths: Sequence[float],
        base: Sequence[float] = (0.0, 0.0, 0.0),
        limit: float = np.pi,
        vel_limit: float = 1.5,
        sphere_radius: float = 0.02,
    ) -> "SerialChain":
        """Planar arm rotating about z with one sphere at every joint and one at the flange."""
        n = len(link_lengths)
        offsets = [offset_transform(base)] + [offset_transform((length, 0.0, 0.0)) for length in link_lengths]
        return SerialChain(
            joint_axes=np.tile([0.0, 0.0, 1.0], (n, 1)),
            link_offsets=np.stack(offsets),
            joint_limits_lo=np.full(n, -limit),
            joint_limits_hi=np.full(n, limit),
            joint_vel_limits=np.full(n, vel_limit),
            body_spheres=[BodySphere(i, np.zeros(3), sphere_radius) for i in range(n + 1)],
            ee_link=n,
            name=f"planar{n}",
        )

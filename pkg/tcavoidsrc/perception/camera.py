from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.kinematics.chain import Pose
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.world.scene import Footprint, Scene

# Depth value of pixels without a return
NO_RETURN = 0.0
_EPS = 1e-9


def look_at_pose(position: np.ndarray, target: np.ndarray, up: np.ndarray = np.array([0.0, 0.0, 1.0])) -> Pose:
    """Camera pose with z along the optical axis, x to the image right and y down the image."""
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < _EPS:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose.from_matrix(_frame(position, np.stack([right, down, forward], axis=1)))


def _frame(position: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    transform = np.eye(4)
    transform[:3, :3] = rotation
    transform[:3, 3] = position
    return transform


@dataclass(frozen=True, eq=False)
class CameraModel:
    pose: Pose
    fov_h: float
    fov_v: float
    width: int
    height: int
    max_range: float
    noise_std: float = 0.005
    dropout: float = 0.02

    def __post_init__(self):
        for fov in (self.fov_h, self.fov_v):
            if not 0 < fov < np.pi:
                raise ValueError(f"Field of view must lie in (0, pi), got {fov}")
        if self.max_range <= 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("Image dims must be positive")

    @staticmethod
    def from_config(config: DictConfig) -> "CameraModel":
        return CameraModel(
            pose=look_at_pose(np.array(config.position, dtype=np.float64), np.array(config.look_at)),
            fov_h=float(config.fov_h),
            fov_v=float(config.fov_v),
            width=int(config.width),
            height=int(config.height),
            max_range=float(config.max_range),
            noise_std=float(config.noise_std),
            dropout=float(config.dropout),
        )

    @property
    def origin(self) -> np.ndarray:
        return self.pose.position

    @property
    def optical_axis(self) -> np.ndarray:
        return self.pose.rotation.apply([0.0, 0.0, 1.0])

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the world frame through pixel centers, shape (height, width, 3)."""
        u = (np.arange(self.width) + 0.5) / self.width * 2 - 1
        v = (np.arange(self.height) + 0.5) / self.height * 2 - 1
        x = np.tan(self.fov_h / 2) * u
        y = np.tan(self.fov_v / 2) * v
        xx, yy = np.meshgrid(x, y)
        local = np.stack([xx, yy, np.ones_like(xx)], axis=-1)
        local /= np.linalg.norm(local, axis=-1, keepdims=True)
        return self.pose.rotation.apply(local.reshape(-1, 3)).reshape(self.height, self.width, 3)


def ray_aabb(origins: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Entry distance of rays into an axis-aligned box (inf on miss), slab method."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    # Rays parallel to a slab: inside the slab is unconstrained, outside misses
    parallel = np.abs(dirs) < _EPS
    inside = (origins >= lo) & (origins <= hi)
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    t_enter = t_near.max(axis=-1)
    t_exit = t_far.min(axis=-1)
    hit = (t_exit >= np.maximum(t_enter, 0.0)) & (t_enter > _EPS)
    return np.where(hit, t_enter, np.inf)


def ray_spheres(origins: np.ndarray, dirs: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """First intersection distance of each ray with any sphere, shape (N,)."""
    best = np.full(len(dirs), np.inf)
    for center, radius in zip(centers, radii):
        oc = origins - center
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - radius ** 2
        disc = b ** 2 - c
        t = -b - np.sqrt(np.maximum(disc, 0.0))
        best = np.where((disc >= 0) & (t > _EPS), np.minimum(best, t), best)
    return best


def _ray_cylinder(origins: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float, z0: float, z1: float):
    ox, oy = origins[:, 0] - center[0], origins[:, 1] - center[1]
    dx, dy = dirs[:, 0], dirs[:, 1]
    a = dx ** 2 + dy ** 2
    b = ox * dx + oy * dy
    c = ox ** 2 + oy ** 2 - radius ** 2
    disc = b ** 2 - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
    z_side = origins[:, 2] + t_side * dirs[:, 2]
    side_ok = (a > _EPS) & (disc >= 0) & (t_side > _EPS) & (z_side >= z0) & (z_side <= z1)
    best = np.where(side_ok, t_side, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_top = (z1 - origins[:, 2]) / dirs[:, 2]
    px, py = ox + t_top * dx, oy + t_top * dy
    top_ok = (dirs[:, 2] < -_EPS) & (t_top > _EPS) & (px ** 2 + py ** 2 <= radius ** 2)
    return np.where(top_ok, np.minimum(best, t_top), best)


def _ray_scene(origins: np.ndarray, dirs: np.ndarray, scene: Scene) -> np.ndarray:
    workspace = scene.workspace
    table = workspace.table_height
    best = np.full(len(dirs), np.inf)

    if table > workspace.origin[2]:
        lo = np.array([workspace.origin[0], workspace.origin[1], workspace.origin[2]])
        hi = np.array([workspace.upper[0], workspace.upper[1], table])
        best = np.minimum(best, ray_aabb(origins, dirs, lo, hi))

    for obstacle in scene.obstacles:
        if obstacle.footprint is Footprint.CYLINDER:
            t = _ray_cylinder(origins, dirs, obstacle.position, obstacle.size[0] / 2, table, table + obstacle.height)
        else:
            c, s = np.cos(obstacle.yaw), np.sin(obstacle.yaw)
            to_local = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
            center = np.array([obstacle.position[0], obstacle.position[1], 0.0])
            local_origins = (origins - center) @ to_local.T
            local_dirs = dirs @ to_local.T
            half = obstacle.size / 2
            lo = np.array([-half[0], -half[1], table])
            hi = np.array([half[0], half[1], table + obstacle.height])
            t = ray_aabb(local_origins, local_dirs, lo, hi)
        best = np.minimum(best, t)
    return best


def _ray_tool(origins: np.ndarray, dirs: np.ndarray, tool: ToolRegion, ee_pose: Pose) -> np.ndarray:
    if not np.any(tool.size > 0):
        return np.full(len(dirs), np.inf)
    to_local = ee_pose.rotation.inv()
    local_origins = to_local.apply(origins - ee_pose.position)
    local_dirs = to_local.apply(dirs)
    return ray_aabb(local_origins, local_dirs, tool.offset - tool.size / 2, tool.offset + tool.size / 2)


def render_depth(
    camera: CameraModel,
    scene: Scene,
    robot_spheres: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    tool: Optional[ToolRegion] = None,
    ee_pose: Optional[Pose] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Range image (meters along each pixel ray) of the first hit; ``NO_RETURN`` where nothing is hit in range.

    Noise and dropout are only applied when ``rng`` is given.
    """
    dirs = camera.ray_directions().reshape(-1, 3)
    origins = np.broadcast_to(camera.origin, dirs.shape)
    depth = _ray_scene(origins, dirs, scene)
    if robot_spheres is not None:
        depth = np.minimum(depth, ray_spheres(origins, dirs, *robot_spheres))
    if tool is not None and ee_pose is not None:
        depth = np.minimum(depth, _ray_tool(origins, dirs, tool, ee_pose))

    valid = depth <= camera.max_range
    if rng is not None:
        depth = depth + rng.normal(0.0, camera.noise_std, size=depth.shape)
        valid &= rng.random(depth.shape) >= camera.dropout
        valid &= (depth > 0) & (depth <= camera.max_range)
    depth = np.where(valid, depth, NO_RETURN)
    return depth.reshape(camera.height, camera.width)


def depth_to_cloud(camera: CameraModel, depth: np.ndarray) -> np.ndarray:
    """World-frame points of all pixels with a return, shape (N, 3)."""
    dirs = camera.ray_directions().reshape(-1, 3)
    ranges = depth.reshape(-1)
    valid = ranges > NO_RETURN
    return camera.origin + dirs[valid] * ranges[valid, None]


def write_pgm(path: str, depth: np.ndarray, max_range: float) -> None:
    """16-bit binary portable graymap; 0 is no return, 65535 is ``max_range``."""
    scaled = np.clip(np.round(depth / max_range * 65535), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{depth.shape[1]} {depth.shape[0]}\n65535\n".encode("ascii"))
        f.write(scaled.tobytes())


def read_pgm(path: str, max_range: float) -> np.ndarray:
    with open(path, "rb") as f:
        magic, size, maxval = (f.readline().strip() for _ in range(3))
        if magic != b"P5" or maxval != b"65535":
            raise ValueError(f"{path} is not a 16-bit binary graymap")
        width, height = (int(v) for v in size.split())
        values = np.frombuffer(f.read(), dtype=">u2").reshape(height, width)
    return values.astype(np.float64) / 65535 * max_range

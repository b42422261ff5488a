from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist


@dataclass(eq=False)
class VoxelGrid:
    """Axis-aligned lattice; cell (i, j, k) is centered at origin + (index + 0.5) * resolution."""

    origin: np.ndarray
    resolution: float
    cells: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.cells = np.asarray(self.cells)
        if self.resolution <= 0:
            raise ValueError(f"Grid resolution must be positive, got {self.resolution}")
        if self.cells.ndim != 3 or min(self.cells.shape) <= 0:
            raise ValueError(f"Grid cells must be a non-empty 3D array, got shape {self.cells.shape}")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.cells.shape)

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.dims) * self.resolution

    def centers(self) -> np.ndarray:
        axes = [self.origin[d] + (np.arange(n) + 0.5) * self.resolution for d, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def center_of(self, index: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(index) + 0.5) * self.resolution

    def index_of(self, points: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(points) - self.origin) / self.resolution).astype(np.int64)

    def in_bounds(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index)
        return np.all((index >= 0) & (index < np.array(self.dims)), axis=-1)

    def with_cells(self, cells: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.origin.copy(), self.resolution, cells)

    def copy(self) -> "VoxelGrid":
        return self.with_cells(self.cells.copy())


def compute_esdf(occupancy: VoxelGrid, max_distance: Optional[float] = None) -> VoxelGrid:
    """Exact unsigned distance (meters) from every cell center to the nearest occupied cell center."""
    occupied = occupancy.cells.astype(bool)
    if max_distance is None:
        max_distance = float(np.linalg.norm(occupancy.extent))
    if not occupied.any():
        return occupancy.with_cells(np.full(occupancy.dims, max_distance))
    distances = ndimage.distance_transform_edt(~occupied, sampling=occupancy.resolution)
    return occupancy.with_cells(np.minimum(distances, max_distance))


def brute_force_esdf(occupancy: VoxelGrid, max_distance: Optional[float] = None) -> VoxelGrid:
    occupied = occupancy.cells.astype(bool)
    if max_distance is None:
        max_distance = float(np.linalg.norm(occupancy.extent))
    if not occupied.any():
        return occupancy.with_cells(np.full(occupancy.dims, max_distance))
    centers = occupancy.centers()
    distances = cdist(centers.reshape(-1, 3), centers[occupied]).min(axis=1)
    return occupancy.with_cells(np.minimum(distances.reshape(occupancy.dims), max_distance))


def _trilinear(grid: VoxelGrid, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dims = np.array(grid.dims)
    u = (points - grid.origin) / grid.resolution - 0.5
    # Points between the outermost centers and the grid faces clamp to the border cells without a flag
    oob = np.any((u < -0.5) | (u > dims - 0.5), axis=-1)
    u = np.clip(u, 0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, dims - 1)
    t = u - i0

    cells = grid.cells
    corners = {}
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ix = i1[:, 0] if dx else i0[:, 0]
                iy = i1[:, 1] if dy else i0[:, 1]
                iz = i1[:, 2] if dz else i0[:, 2]
                corners[dx, dy, dz] = cells[ix, iy, iz]

    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    c00 = corners[0, 0, 0] * (1 - tx) + corners[1, 0, 0] * tx
    c01 = corners[0, 0, 1] * (1 - tx) + corners[1, 0, 1] * tx
    c10 = corners[0, 1, 0] * (1 - tx) + corners[1, 1, 0] * tx
    c11 = corners[0, 1, 1] * (1 - tx) + corners[1, 1, 1] * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    values = c0 * (1 - tz) + c1 * tz

    # Partial derivatives of the trilinear interpolant w.r.t. the fractional coordinates
    d_x = np.zeros_like(values)
    for dy in (0, 1):
        for dz in (0, 1):
            wy = ty if dy else 1 - ty
            wz = tz if dz else 1 - tz
            d_x += (corners[1, dy, dz] - corners[0, dy, dz]) * wy * wz
    d_y = (c10 - c00) * (1 - tz) + (c11 - c01) * tz
    d_z = c1 - c0
    gradients = np.stack([d_x, d_y, d_z], axis=-1) / grid.resolution
    # Axes collapsed to a single cell carry no gradient
    gradients[:, dims <= 1] = 0.0
    return values, gradients, oob


def esdf_sample_with_gradient(esdf: VoxelGrid, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched trilinear ESDF values, raw gradients and out-of-bounds flags for (N, 3) points."""
    return _trilinear(esdf, np.atleast_2d(np.asarray(points, dtype=np.float64)))


def esdf_sample(esdf: VoxelGrid, point: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values, _, oob = esdf_sample_with_gradient(esdf, point)
    if np.ndim(point) == 1:
        return values[0], oob[0]
    return values, oob


def esdf_gradient(esdf: VoxelGrid, point: np.ndarray, eps: float = 1e-9) -> Tuple[np.ndarray, bool]:
    """Unit direction of increasing distance; zero vector and a degenerate flag where the gradient vanishes."""
    _, gradients, _ = esdf_sample_with_gradient(esdf, point)
    gradient = gradients[0]
    norm = np.linalg.norm(gradient)
    if norm < eps:
        return np.zeros(3), True
    return gradient / norm, False

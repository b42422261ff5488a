import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np
from omegaconf import DictConfig
from scipy import ndimage

from tcavoidsrc.world.scene import Workspace
from tcavoidsrc.world.voxel_grid import VoxelGrid

logger = logging.getLogger(__name__)

CONNECTIVITY = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class TrackerSettings:
    gate: float = 0.15
    max_missed: int = 10
    process_noise: float = 1.0
    measurement_noise: float = 1e-4
    # Cells below this height belong to the table and are never clustered
    floor_height: float = -np.inf

    @staticmethod
    def from_config(config: DictConfig) -> "TrackerSettings":
        tracking = config.tracking
        return TrackerSettings(
            tracking.gate,
            tracking.max_missed,
            tracking.process_noise,
            tracking.measurement_noise,
            config.workspace.table_height,
        )


@dataclass(eq=False)
class ObstacleTrack:
    """Axis-aligned box around one cluster with a constant-velocity filter on its centroid."""

    track_id: int
    state: np.ndarray
    covariance: np.ndarray
    extents: np.ndarray
    missed: int = 0

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[3:]


@dataclass(eq=False)
class Cluster:
    centroid: np.ndarray
    extents: np.ndarray
    n_cells: int


@dataclass
class Tracker:
    settings: TrackerSettings = field(default_factory=TrackerSettings)
    tracks: List[ObstacleTrack] = field(default_factory=list)
    next_id: int = 0

    def step(self, observation: Union[VoxelGrid, np.ndarray], dt: float, workspace: Optional[Workspace] = None):
        self.tracks, self.next_id = cluster_and_track(
            observation, self.tracks, dt, self.settings, workspace, self.next_id
        )
        return self.tracks


def cloud_to_occupancy(cloud: np.ndarray, workspace: Workspace) -> VoxelGrid:
    grid = workspace.empty_grid(dtype=bool)
    index = grid.index_of(np.atleast_2d(cloud).reshape(-1, 3))
    index = index[grid.in_bounds(index)]
    grid.cells[tuple(index.T)] = True
    return grid


def extract_clusters(occupancy: VoxelGrid, floor_height: float = -np.inf) -> List[Cluster]:
    """26-connected components of occupied cells above the floor, in label order."""
    centers = occupancy.centers()
    occupied = occupancy.cells.astype(bool) & (centers[..., 2] >= floor_height)
    labels, n = ndimage.label(occupied, structure=CONNECTIVITY)
    clusters = []
    for label in range(1, n + 1):
        points = centers[labels == label]
        centroid = points.mean(axis=0)
        # Box centered on the centroid that still covers every cell of the cluster
        reach = np.maximum(points.max(axis=0) - centroid, centroid - points.min(axis=0))
        clusters.append(Cluster(centroid, 2 * reach + occupancy.resolution, len(points)))
    return clusters


def _transition(dt: float) -> np.ndarray:
    transition = np.eye(6)
    transition[:3, 3:] = dt * np.eye(3)
    return transition


def _process_covariance(dt: float, q: float) -> np.ndarray:
    # Continuous white-noise acceleration
    block = np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]]) * q
    return np.kron(block, np.eye(3))


def predict(track: ObstacleTrack, dt: float, process_noise: float) -> None:
    transition = _transition(dt)
    track.state = transition @ track.state
    track.covariance = transition @ track.covariance @ transition.T + _process_covariance(dt, process_noise)


def correct(track: ObstacleTrack, measurement: np.ndarray, measurement_noise: float) -> None:
    observation = np.hstack([np.eye(3), np.zeros((3, 3))])
    innovation = measurement - observation @ track.state
    s = observation @ track.covariance @ observation.T + measurement_noise * np.eye(3)
    gain = track.covariance @ observation.T @ np.linalg.inv(s)
    track.state = track.state + gain @ innovation
    # Joseph form keeps the covariance symmetric positive semi-definite
    correction = np.eye(6) - gain @ observation
    track.covariance = correction @ track.covariance @ correction.T + gain @ (measurement_noise * np.eye(3)) @ gain.T


def cluster_and_track(
    observation: Union[VoxelGrid, np.ndarray],
    tracks: Sequence[ObstacleTrack],
    dt: float,
    settings: TrackerSettings = TrackerSettings(),
    workspace: Optional[Workspace] = None,
    next_id: int = 0,
):
    """Predicts every track, matches clusters greedily by distance within the gate and updates matched tracks.

    Unmatched clusters open new tracks; unmatched tracks coast and are dropped after ``max_missed`` frames.
    Returns the new track list and the next free track id.
    """
    if isinstance(observation, VoxelGrid):
        occupancy = observation
    else:
        if workspace is None:
            raise ValueError("A workspace is needed to voxelize a point cloud")
        occupancy = cloud_to_occupancy(observation, workspace)
    clusters = extract_clusters(occupancy, settings.floor_height)

    tracks = [replace(track) for track in tracks]
    for track in tracks:
        predict(track, dt, settings.process_noise)

    pairs = sorted(
        (float(np.linalg.norm(track.position - cluster.centroid)), t, c)
        for t, track in enumerate(tracks)
        for c, cluster in enumerate(clusters)
    )
    matched_tracks, matched_clusters = set(), set()
    for distance, t, c in pairs:
        if distance > settings.gate or t in matched_tracks or c in matched_clusters:
            continue
        matched_tracks.add(t)
        matched_clusters.add(c)
        correct(tracks[t], clusters[c].centroid, settings.measurement_noise)
        tracks[t].extents = clusters[c].extents
        tracks[t].missed = 0

    kept = []
    for t, track in enumerate(tracks):
        if t not in matched_tracks:
            track.missed += 1
        if track.missed <= settings.max_missed:
            kept.append(track)
        else:
            logger.debug("Dropping track %d after %d missed frames", track.track_id, track.missed)

    for c, cluster in enumerate(clusters):
        if c in matched_clusters:
            continue
        covariance = np.diag([settings.measurement_noise] * 3 + [1.0] * 3)
        state = np.concatenate([cluster.centroid, np.zeros(3)])
        kept.append(ObstacleTrack(next_id, state, covariance, cluster.extents))
        next_id += 1
    return kept, next_id

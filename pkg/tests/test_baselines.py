import numpy as np
import pytest

from tcavoidsrc.baselines.apf import ApfConfig, apf_forces, apf_step, repulsive_force
from tcavoidsrc.baselines.clearance import (
    ClearanceSource,
    EsdfClearance,
    GroundTruthClearance,
    TrackClearance,
    box_distance,
)
from tcavoidsrc.baselines.mppi import MppiConfig, MppiPlanner, mppi_weights
from tcavoidsrc.baselines.tracking import Tracker, TrackerSettings, cloud_to_occupancy, extract_clusters
from tcavoidsrc.kinematics.solver import ee_pose
from tcavoidsrc.world.scene import Scene
from tcavoidsrc.world.voxel_grid import VoxelGrid


class BlockedEverywhere(ClearanceSource):
    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(points)), -1.0)


def _block_grid(x: int) -> VoxelGrid:
    cells = np.zeros((30, 10, 10), dtype=bool)
    cells[x : x + 2, 4:6, 4:6] = True
    return VoxelGrid(np.zeros(3), 0.05, cells)


def test_box_distance():
    distance, closest = box_distance(np.array([[0.3, 0.0, 0.0], [0.1, 0.0, 0.0]]), np.zeros(3), np.full(3, 0.4))
    np.testing.assert_allclose(distance, [0.1, 0.0])
    np.testing.assert_allclose(closest[0], [0.2, 0.0, 0.0])


def test_clearance_sources(desk_workspace):
    distances, gradients = GroundTruthClearance(Scene(desk_workspace)).distance_with_gradient(
        np.array([[0.1, 0.1, 0.2]])
    )
    assert distances[0] == pytest.approx(0.15)
    np.testing.assert_allclose(gradients[0], [0.0, 0.0, 1.0], atol=1e-6)

    tracks = TrackClearance(floor=0.05)
    assert tracks.distance(np.array([0.1, 0.1, 0.3]))[0] == pytest.approx(0.25)

    occupancy = desk_workspace.empty_grid(0.0)
    occupancy.cells[:, :, 0] = 0.9
    esdf = EsdfClearance.from_occupancy(occupancy)
    assert esdf.distance(np.array([[0.125, 0.125, 0.175]]))[0] == pytest.approx(0.15)


def test_mppi_weights():
    np.testing.assert_allclose(mppi_weights(np.array([1.0, 1.0]), 0.5), [0.5, 0.5])
    np.testing.assert_allclose(mppi_weights(np.array([0.0, 100.0]), 0.5), [1.0, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        mppi_weights(np.zeros(2), 0.0)


def test_repulsive_force():
    cfg = ApfConfig()
    np.testing.assert_array_equal(repulsive_force(0.2, np.array([1.0, 0.0, 0.0]), cfg), np.zeros(3))
    capped = repulsive_force(1e-3, np.array([0.0, 3.0, 0.0]), cfg)
    np.testing.assert_allclose(capped, [0.0, cfg.max_force, 0.0])
    mild = repulsive_force(0.05, np.array([0.0, 0.0, 1.0]), cfg)
    assert mild[2] == pytest.approx(cfg.k_rep * (1 / 0.05 - 1 / 0.1) / 0.05 ** 2)
    with pytest.raises(ValueError):
        ApfConfig(k_rep=0.0)


def test_apf_holds_at_the_target(desk_chain, desk_workspace):
    clearance = GroundTruthClearance(Scene(desk_workspace))
    q = desk_chain.home
    target = ee_pose(desk_chain, q)
    forces = apf_forces(desk_chain, q, target, clearance, ApfConfig())
    np.testing.assert_allclose(forces.joint_update, 0.0, atol=1e-12)
    np.testing.assert_allclose(apf_step(desk_chain, q, target, clearance, ApfConfig(), 0.02), q, atol=1e-12)


def test_apf_moves_toward_the_target(desk_chain, desk_workspace):
    clearance = GroundTruthClearance(Scene(desk_workspace))
    q = desk_chain.home
    target = ee_pose(desk_chain, q + np.array([0.02, 0.02, -0.02]))
    q_next = apf_step(desk_chain, q, target, clearance, ApfConfig(), 0.02)
    before = np.linalg.norm(ee_pose(desk_chain, q).position - target.position)
    after = np.linalg.norm(ee_pose(desk_chain, q_next).position - target.position)
    assert after < before


def test_mppi_holds_when_every_rollout_collides(desk_chain):
    planner = MppiPlanner(desk_chain, MppiConfig(horizon_steps=5, n_samples=16), 0.02, np.random.default_rng(0))
    q = desk_chain.home
    target = ee_pose(desk_chain, q + 0.1)
    q_next = planner.step(q, target, BlockedEverywhere())
    assert planner.last_result.infeasible
    np.testing.assert_array_equal(q_next, q)
    np.testing.assert_array_equal(planner.mean_sequence, 0.0)


def test_mppi_tracks_a_target(desk_chain, desk_workspace):
    cfg = MppiConfig(horizon_steps=10, n_samples=256, temperature=1e-5, w_smooth=0.0)
    planner = MppiPlanner(desk_chain, cfg, 0.02, np.random.default_rng(0))
    clearance = GroundTruthClearance(Scene(desk_workspace))
    q = desk_chain.home
    target = ee_pose(desk_chain, q + np.array([0.1, -0.1, 0.1]))
    start_error = np.linalg.norm(ee_pose(desk_chain, q).position - target.position)
    for _ in range(10):
        q_next = planner.step(q, target, clearance)
        assert np.all(np.abs(q_next - q) <= desk_chain.joint_vel_limits * 0.02 + 1e-12)
        q = q_next
    assert not planner.last_result.infeasible
    assert np.linalg.norm(ee_pose(desk_chain, q).position - target.position) < start_error


def test_clusters_use_full_connectivity():
    cells = np.zeros((6, 6, 6), dtype=bool)
    cells[1, 1, 1] = cells[2, 2, 2] = True
    cells[5, 5, 5] = True
    clusters = extract_clusters(VoxelGrid(np.zeros(3), 0.1, cells))
    assert sorted(c.n_cells for c in clusters) == [1, 2]
    single = next(c for c in clusters if c.n_cells == 1)
    np.testing.assert_allclose(single.centroid, [0.55, 0.55, 0.55])
    np.testing.assert_allclose(single.extents, [0.1, 0.1, 0.1])


def test_clusters_skip_the_floor():
    cells = np.zeros((4, 4, 4), dtype=bool)
    cells[:, :, 0] = True
    assert extract_clusters(VoxelGrid(np.zeros(3), 0.1, cells), floor_height=0.1) == []


def test_tracker_estimates_velocity():
    tracker = Tracker(TrackerSettings())
    for frame in range(15):
        tracks = tracker.step(_block_grid(frame + 2), dt=0.25)
    assert len(tracks) == 1
    assert tracks[0].track_id == 0
    np.testing.assert_allclose(tracks[0].velocity, [0.2, 0.0, 0.0], atol=0.02)
    np.testing.assert_allclose(tracks[0].extents, [0.1, 0.1, 0.1])


def test_tracker_drops_lost_tracks():
    tracker = Tracker(TrackerSettings(max_missed=2))
    tracker.step(_block_grid(5), dt=0.1)
    empty = VoxelGrid(np.zeros(3), 0.05, np.zeros((30, 10, 10), dtype=bool))
    assert len(tracker.step(empty, dt=0.1)) == 1
    assert len(tracker.step(empty, dt=0.1)) == 1
    assert tracker.step(empty, dt=0.1) == []
    tracker.step(_block_grid(5), dt=0.1)
    assert tracker.tracks[0].track_id == 1


def test_cloud_to_occupancy(desk_workspace):
    grid = cloud_to_occupancy(np.array([[0.21, 0.31, 0.11], [5.0, 5.0, 5.0]]), desk_workspace)
    assert grid.cells[4, 6, 2]
    assert grid.cells.sum() == 1
    with pytest.raises(ValueError):
        Tracker().step(np.zeros((1, 3)), dt=0.1)

from dataclasses import replace

import numpy as np
import pytest

from tcavoidsrc.common.errors import ScenarioError
from tcavoidsrc.world.scene import (
    Footprint,
    ObstacleSpec,
    ScenarioRanges,
    Scene,
    configuration_is_free,
    ground_truth_esdf,
    rasterize,
    sample_scenario,
    scene_clearance,
    step_obstacles,
)
from tcavoidsrc.world.voxel_grid import (
    VoxelGrid,
    brute_force_esdf,
    compute_esdf,
    esdf_gradient,
    esdf_sample,
    esdf_sample_with_gradient,
)


def _box(position, size=(0.1, 0.1), height=0.2, velocity=(0.0, 0.0)) -> ObstacleSpec:
    return ObstacleSpec(Footprint.BOX, np.array(size), height, np.array(position), velocity=np.array(velocity))


def test_voxel_grid_indexing():
    grid = VoxelGrid(np.array([1.0, 0.0, 0.0]), 0.5, np.zeros((4, 3, 2)))
    np.testing.assert_allclose(grid.center_of([0, 0, 0]), [1.25, 0.25, 0.25])
    np.testing.assert_array_equal(grid.index_of(np.array([[2.6, 0.1, 0.9]])), [[3, 0, 1]])
    assert grid.in_bounds(np.array([3, 2, 1]))
    assert not grid.in_bounds(np.array([4, 0, 0]))
    assert grid.centers().shape == (4, 3, 2, 3)


def test_voxel_grid_rejects_bad_geometry():
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros(3), 0.0, np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros(3), 0.1, np.zeros((2, 2)))


def test_esdf_matches_brute_force(rng):
    cells = rng.random((7, 5, 6)) < 0.1
    cells[3, 2, 2] = True
    grid = VoxelGrid(np.zeros(3), 0.1, cells)
    np.testing.assert_allclose(compute_esdf(grid).cells, brute_force_esdf(grid).cells, atol=1e-9)
    assert np.all(compute_esdf(grid).cells[cells] == 0.0)


def test_esdf_of_empty_grid_is_the_cap():
    grid = VoxelGrid(np.zeros(3), 0.1, np.zeros((4, 4, 4), dtype=bool))
    np.testing.assert_allclose(compute_esdf(grid).cells, np.linalg.norm(grid.extent))
    np.testing.assert_allclose(compute_esdf(grid, max_distance=0.3).cells, 0.3)


def test_esdf_sampling_at_centers_and_outside():
    cells = np.zeros((6, 4, 4), dtype=bool)
    cells[0] = True
    esdf = compute_esdf(VoxelGrid(np.zeros(3), 1.0, cells))

    value, oob = esdf_sample(esdf, esdf.center_of([3, 1, 2]))
    assert value == pytest.approx(3.0)
    assert not oob

    _, _, oob = esdf_sample_with_gradient(esdf, np.array([[-1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]))
    np.testing.assert_array_equal(oob, [True, False])

    # outer half-cell still lies inside the grid and reads the border value
    values, _, oob = esdf_sample_with_gradient(esdf, np.array([[5.8, 0.2, 3.9], [6.1, 1.0, 1.0]]))
    np.testing.assert_array_equal(oob, [False, True])
    assert values[0] == pytest.approx(esdf.cells[5, 0, 3])

    direction, degenerate = esdf_gradient(esdf, np.array([2.7, 1.5, 2.0]))
    assert not degenerate
    np.testing.assert_allclose(direction, [1.0, 0.0, 0.0], atol=1e-12)


def test_obstacle_distances():
    box = _box((0.2, 0.3))
    assert box.distance(np.array([0.35, 0.3, 0.1]), 0.05)[0] == pytest.approx(0.1)
    assert box.distance(np.array([0.2, 0.3, 0.45]), 0.05)[0] == pytest.approx(0.2)
    assert box.distance(np.array([0.2, 0.3, 0.1]), 0.05)[0] == 0.0
    assert box.contains(np.array([0.2, 0.3, 0.1]), 0.05)[0]

    cylinder = ObstacleSpec(Footprint.CYLINDER, np.array([0.1, 0.1]), 0.2, np.zeros(2))
    assert cylinder.distance(np.array([0.25, 0.0, 0.1]), 0.05)[0] == pytest.approx(0.2)


def test_obstacle_validation():
    with pytest.raises(ValueError):
        _box((0.2, 0.3), height=0.0)
    with pytest.raises(ValueError):
        _box((0.2, 0.3), size=(0.1, -0.1))


def test_rasterize_marks_table_and_obstacles(desk_workspace):
    grid = rasterize(Scene(desk_workspace, (_box((0.2, 0.3)),)))
    assert grid.dims == (8, 12, 8)
    assert grid.cells[:, :, 0].all()
    assert not grid.cells[:, :, 1:].all()
    assert grid.cells[4, 6, 1]
    assert not grid.cells[4, 6, 5]
    assert not grid.cells[0, 0, 3]


def test_ground_truth_esdf_and_clearance(desk_workspace):
    scene = Scene(desk_workspace)
    assert scene_clearance(scene, np.array([0.1, 0.1, 0.25]))[0] == pytest.approx(0.2)
    esdf = ground_truth_esdf(scene)
    # distance from the center of layer k to the center of the table layer
    np.testing.assert_allclose(esdf.cells[2, 2, 3], 0.15)


def test_step_obstacles_moves_and_stops_at_border(desk_workspace):
    scene = Scene(desk_workspace, (_box((0.2, 0.3), velocity=(0.1, 0.0)), _box((0.1, 0.1))))
    moved = step_obstacles(scene, 0.5)
    np.testing.assert_allclose(moved.obstacles[0].position, [0.25, 0.3])
    np.testing.assert_allclose(moved.obstacles[1].position, [0.1, 0.1])

    blocked = step_obstacles(Scene(desk_workspace, (_box((0.3, 0.3), velocity=(0.4, 0.1)),)), 0.5)
    obstacle = blocked.obstacles[0]
    np.testing.assert_allclose(obstacle.position, [0.35, 0.35])
    np.testing.assert_allclose(obstacle.velocity, [0.0, 0.1])


def test_home_configuration_is_free_in_an_empty_scene(desk_chain, desk_workspace):
    assert configuration_is_free(desk_chain, desk_chain.home, ground_truth_esdf(Scene(desk_workspace)))


def test_sample_scenario_is_deterministic(desk_config, desk_chain, desk_workspace):
    ranges = ScenarioRanges.from_config(desk_config.scenario_ranges)
    first = sample_scenario(np.random.default_rng(3), ranges, desk_workspace, desk_chain)
    second = sample_scenario(np.random.default_rng(3), ranges, desk_workspace, desk_chain)

    np.testing.assert_allclose(first.targets[0].position, second.targets[0].position)
    assert len(first.scene.obstacles) == len(second.scene.obstacles)
    assert first.mode is second.mode
    lo, hi = np.array(ranges.target_lo), np.array(ranges.target_hi)
    for target in first.targets:
        assert np.all(target.position >= lo) and np.all(target.position <= hi)


def test_sample_scenario_gives_up_when_obstacles_cannot_clear_the_base(desk_config, desk_chain, desk_workspace):
    ranges = replace(
        ScenarioRanges.from_config(desk_config.scenario_ranges), n_obstacles=(1, 1), base_clearance=2.0, max_tries=10
    )
    with pytest.raises(ScenarioError):
        sample_scenario(np.random.default_rng(0), ranges, desk_workspace, desk_chain)

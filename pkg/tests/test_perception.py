import threading

import numpy as np
import pytest
import torch
from scipy.special import expit

from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.kinematics.chain import Pose
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.perception.camera import NO_RETURN, CameraModel, depth_to_cloud, read_pgm, render_depth, write_pgm
from tcavoidsrc.perception.handoff import LatestSlot
from tcavoidsrc.perception.model import CollidableRegionNet, build_grid_input, build_proprio, initial_prediction
from tcavoidsrc.perception.observation import (
    Label,
    ObservationGrid,
    filter_self,
    fuse_memory,
    make_training_labels,
    voxelize_observation,
)
from tcavoidsrc.world.scene import Footprint, ObstacleSpec, Scene, rasterize


@pytest.fixture
def camera(desk_config) -> CameraModel:
    return CameraModel.from_config(desk_config.camera)


def test_camera_looks_at_its_target(camera):
    direction = np.array([0.2, 0.3, 0.05]) - camera.origin
    np.testing.assert_allclose(camera.optical_axis, direction / np.linalg.norm(direction), atol=1e-12)
    assert camera.ray_directions().shape == (32, 48, 3)


def test_empty_scene_only_shows_the_table(camera, desk_workspace):
    depth = render_depth(camera, Scene(desk_workspace))
    cloud = depth_to_cloud(camera, depth)
    assert len(cloud) > 0
    assert np.all(cloud[:, 2] <= desk_workspace.table_height + 1e-9)


def test_obstacle_is_closer_than_the_table(camera, desk_workspace):
    empty = render_depth(camera, Scene(desk_workspace))
    box = ObstacleSpec(Footprint.BOX, np.array([0.1, 0.1]), 0.3, np.array([0.2, 0.3]))
    with_box = render_depth(camera, Scene(desk_workspace, (box,)))
    row, col = camera.height // 2, camera.width // 2
    assert 0 < with_box[row, col] < empty[row, col]


def test_noisy_render_is_reproducible(camera, desk_workspace):
    scene = Scene(desk_workspace)
    first = render_depth(camera, scene, rng=np.random.default_rng(5))
    second = render_depth(camera, scene, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(first, second)
    assert np.any(first == NO_RETURN)


def test_pgm_round_trip(tmp_path, camera, desk_workspace):
    depth = render_depth(camera, Scene(desk_workspace))
    path = str(tmp_path / "depth.pgm")
    write_pgm(path, depth, camera.max_range)
    np.testing.assert_allclose(read_pgm(path, camera.max_range), depth, atol=camera.max_range / 65535)


def test_voxelize_single_point(camera, desk_workspace):
    observation = voxelize_observation(np.array([[0.21, 0.31, 0.11]]), camera, desk_workspace)
    assert observation.labels[4, 6, 2] == Label.OCCUPIED
    assert observation.labels[6, 6, 3] == Label.FREE
    assert np.count_nonzero(observation.mask(Label.OCCUPIED)) == 1
    assert observation.labels[0, 0, 7] == Label.UNKNOWN


def test_voxelize_empty_cloud_is_unknown(camera, desk_workspace):
    observation = voxelize_observation(np.zeros((0, 3)), camera, desk_workspace)
    assert np.all(observation.labels == Label.UNKNOWN)
    np.testing.assert_allclose(observation.occupancy, 0.5)


def test_fuse_memory_log_odds(desk_workspace):
    observation = ObservationGrid.unknown(desk_workspace)
    observation.labels[0, 0, 0] = Label.OCCUPIED
    observation.labels[1, 0, 0] = Label.FREE
    prior = initial_prediction(desk_workspace)

    fused = fuse_memory(prior, observation)
    assert fused[0, 0, 0] == pytest.approx(expit(0.85))
    assert fused[1, 0, 0] == pytest.approx(expit(-0.4))
    assert fused[2, 0, 0] == pytest.approx(0.5)

    saturated = prior
    for _ in range(20):
        saturated = fuse_memory(saturated, observation)
    assert saturated[0, 0, 0] == pytest.approx(0.99)
    assert saturated[1, 0, 0] == pytest.approx(0.01)


def test_filter_self_clears_robot_voxels(desk_workspace):
    observation = ObservationGrid(desk_workspace.empty_grid(Label.OCCUPIED, dtype=np.uint8))
    filtered = filter_self(observation, np.array([[0.2, 0.3, 0.2]]), np.array([0.03]), margin=0.0)
    assert filtered.labels[4, 6, 4] == Label.UNKNOWN
    assert filtered.labels[0, 0, 7] == Label.OCCUPIED
    # the input observation is left untouched
    assert observation.labels[4, 6, 4] == Label.OCCUPIED

    tool = ToolRegion(np.zeros(3), np.array([0.1, 0.1, 0.1]))
    with_tool = filter_self(observation, np.zeros((0, 3)), np.zeros(0), tool, Pose(np.array([0.1, 0.1, 0.3])), 0.0)
    assert with_tool.labels[2, 2, 6] == Label.UNKNOWN


def test_training_labels_of_empty_scene(desk_workspace):
    labels = make_training_labels(Scene(desk_workspace))
    assert np.all(labels.cells[:, :, 0] == 1.0)
    assert np.all(labels.cells[:, :, 1:] == 0.0)


def test_training_labels_mark_the_near_surface_band(desk_workspace):
    # box faces at x = 0.245, so the free center (0.225, 0.325, 0.175) sits 0.02 m away
    box = ObstacleSpec(Footprint.BOX, np.array([0.2, 0.2]), 0.2, np.array([0.345, 0.3]))
    scene = Scene(desk_workspace, (box,))
    labels = make_training_labels(scene)
    occupancy = rasterize(scene)
    assert not occupancy.cells[4, 6, 3]
    assert labels.cells[4, 6, 3] == 1.0
    assert labels.cells[3, 6, 3] == 0.0
    assert labels.cells[2, 6, 1] == 0.0
    assert np.all(labels.cells[occupancy.cells] == 1.0)


def test_carving_never_frees_a_cell_holding_a_surface_point(camera, desk_workspace):
    # faces off the voxel boundaries so every obstacle point lies strictly inside one cell
    box = ObstacleSpec(Footprint.BOX, np.array([0.13, 0.13]), 0.17, np.array([0.21, 0.31]))
    cloud = depth_to_cloud(camera, render_depth(camera, Scene(desk_workspace, (box,))))
    observation = voxelize_observation(cloud, camera, desk_workspace)

    on_box = cloud[cloud[:, 2] > desk_workspace.table_height + 1e-6]
    index = observation.grid.index_of(on_box)
    index = index[observation.grid.in_bounds(index)]
    assert len(index) > 0
    assert np.all(observation.labels[index[:, 0], index[:, 1], index[:, 2]] == Label.OCCUPIED)


def test_grid_input_shape_mismatch(desk_workspace):
    observation = ObservationGrid.unknown(desk_workspace)
    assert build_grid_input(observation, initial_prediction(desk_workspace)).shape == (3, 8, 12, 8)
    with pytest.raises(ValueError):
        build_grid_input(observation, np.zeros((8, 12, 7)))


def test_proprio_layout():
    tool = ToolRegion(np.array([0.01, 0.02, 0.03]), np.array([0.1, 0.2, 0.3]))
    proprio = build_proprio(np.ones((4, 3)), Pose(np.array([0.1, 0.2, 0.3])), tool, InteractionMode.PROTECTIVE)
    assert proprio.shape == (25,)
    np.testing.assert_allclose(proprio[12:15], [0.1, 0.2, 0.3], atol=1e-7)
    np.testing.assert_allclose(proprio[18:24], [0.1, 0.2, 0.3, 0.01, 0.02, 0.03], atol=1e-7)
    assert proprio[-1] == 1.0


def test_encode_shapes(small_config, desk_workspace):
    torch.manual_seed(0)
    model = CollidableRegionNet.from_config(small_config).eval()
    target = Pose(np.array([0.2, 0.3, 0.2]))
    proprio = build_proprio(np.zeros((4, 3)), target, ToolRegion.empty(), InteractionMode.ENGAGE)
    output = model.encode(ObservationGrid.unknown(desk_workspace), initial_prediction(desk_workspace), proprio)

    assert output.latent.shape == (16,)
    assert output.predicted_occupancy.dims == (8, 12, 8)
    assert np.all((output.predicted_occupancy.cells > 0) & (output.predicted_occupancy.cells < 1))
    values = output.safety_values
    assert values.shape == (2,)
    assert torch.all((values > 0) & (values < 1))

    with pytest.raises(ValueError):
        model(torch.zeros(1, 3, 8, 12, 8), torch.zeros(1, 24))


def test_latest_slot_keeps_only_the_newest_value():
    slot: LatestSlot[int] = LatestSlot()
    assert slot.get() == (None, 0)
    assert slot.put(1) == 1
    assert slot.put(2) == 2
    assert slot.get() == (2, 2)

    writer = threading.Thread(target=lambda: [slot.put(i) for i in range(3, 103)])
    writer.start()
    writer.join()
    assert slot.get() == (102, 102)
    assert slot.version == 102

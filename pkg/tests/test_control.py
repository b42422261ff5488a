import csv
import io

import numpy as np
import pytest
import torch

from tcavoidsrc.common.types import ActiveController, InteractionMode
from tcavoidsrc.control.constraints import (
    BODY_COLLISION,
    EE_SPEED,
    JOINT_SPEED,
    TOOL_VIOLATION,
    ConstraintLimits,
    KinematicTransition,
    constraint_costs,
)
from tcavoidsrc.control.controller import (
    Command,
    ControllerSettings,
    ControllerState,
    HybridController,
    ZeroPolicy,
    build_policy_observation,
    hybrid_step,
    nominal_step,
)
from tcavoidsrc.control.telemetry import TelemetryRecord, TelemetryWriter, telemetry_fields, write_telemetry
from tcavoidsrc.kinematics.chain import Pose
from tcavoidsrc.kinematics.solver import body_spheres_world, ee_pose
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.perception.model import PerceptionOutput
from tcavoidsrc.safety.switching import aggregate
from tcavoidsrc.world.scene import Footprint, ObstacleSpec, Scene, ground_truth_esdf


def _still(chain, q) -> KinematicTransition:
    pose = ee_pose(chain, q)
    centers, radii = body_spheres_world(chain, q)
    return KinematicTransition(q, q, pose, pose, centers, radii)


@pytest.fixture
def controller(desk_chain, desk_config) -> HybridController:
    return HybridController(desk_chain, ZeroPolicy(desk_chain.n_joints), ControllerSettings.from_config(desk_config))


def test_no_costs_at_home_in_an_empty_scene(desk_chain, desk_workspace):
    esdf = ground_truth_esdf(Scene(desk_workspace))
    transition = _still(desk_chain, desk_chain.home)
    costs = constraint_costs(desk_chain, transition, esdf, ToolRegion.empty(), InteractionMode.ENGAGE)
    np.testing.assert_array_equal(costs, np.zeros(4))


def test_obstacle_on_the_flange_is_a_body_collision(desk_chain, desk_workspace):
    position = ee_pose(desk_chain, desk_chain.home).position
    box = ObstacleSpec(Footprint.BOX, np.array([0.1, 0.1]), 0.3, position[:2])
    esdf = ground_truth_esdf(Scene(desk_workspace, (box,)))
    transition = _still(desk_chain, desk_chain.home)
    costs = constraint_costs(desk_chain, transition, esdf, ToolRegion.empty(), InteractionMode.ENGAGE)
    assert costs[BODY_COLLISION] == 1.0


def test_tool_violation_only_counts_when_protective(desk_chain, desk_workspace):
    esdf = ground_truth_esdf(Scene(desk_workspace))
    # tool box hanging down to just above the table
    tool = ToolRegion(np.array([0.0, 0.0, -0.15]), np.array([0.02, 0.02, 0.02]))
    transition = _still(desk_chain, desk_chain.home)
    engage = constraint_costs(desk_chain, transition, esdf, tool, InteractionMode.ENGAGE)
    protective = constraint_costs(desk_chain, transition, esdf, tool, InteractionMode.PROTECTIVE)
    assert engage[TOOL_VIOLATION] == 0.0
    assert protective[TOOL_VIOLATION] == 1.0


def test_speed_constraints(desk_chain, desk_workspace):
    esdf = ground_truth_esdf(Scene(desk_workspace))
    q = desk_chain.home
    pose = ee_pose(desk_chain, q)
    centers, radii = body_spheres_world(desk_chain, q)
    fast = KinematicTransition(
        q, q + 0.03, pose, Pose(pose.position + np.array([0.02, 0.0, 0.0])), centers, radii
    )
    costs = constraint_costs(desk_chain, fast, esdf, ToolRegion.empty(), InteractionMode.ENGAGE, ConstraintLimits())
    assert costs[EE_SPEED] == 1.0
    assert costs[JOINT_SPEED] == 1.0


def test_nominal_step_is_rate_limited_and_reduces_the_error(desk_chain, desk_config):
    settings = ControllerSettings.from_config(desk_config)
    home = desk_chain.home
    near = Command(ee_pose(desk_chain, home + np.array([0.02, -0.01, 0.01])))
    q_next = nominal_step(desk_chain, home, near, settings)
    before = np.linalg.norm(ee_pose(desk_chain, home).position - near.target.position)
    after = np.linalg.norm(ee_pose(desk_chain, q_next).position - near.target.position)
    assert after < before

    far = Command(ee_pose(desk_chain, home + np.array([0.8, -0.8, 0.5])))
    q_far = nominal_step(desk_chain, home, far, settings)
    assert np.all(np.abs(q_far - home) <= 1.5 * settings.dt + 1e-12)


def test_controller_state_history():
    state = ControllerState.initial(np.zeros(2), history=3)
    state.observe(np.ones(2))
    np.testing.assert_array_equal(state.history_array(), [[0, 0], [0, 0], [1, 1]])
    state.commit(np.full(2, 2.0))
    np.testing.assert_array_equal(state.q_des_prev, [2, 2])
    np.testing.assert_array_equal(state.q_des_prev2, [0, 0])


def test_policy_observation_layout():
    cmd = Command(Pose(np.array([0.1, 0.2, 0.3])), InteractionMode.PROTECTIVE)
    observation = build_policy_observation(np.arange(5), np.zeros((4, 3)), cmd)
    assert observation.shape == (5 + 25,)
    np.testing.assert_array_equal(observation[:5], np.arange(5))
    assert observation[-1] == 1.0


def test_high_risk_executes_the_policy(controller, desk_chain):
    q = desk_chain.home
    cmd = Command(ee_pose(desk_chain, q + np.array([0.2, 0.0, 0.0])))
    output = controller.step(q, np.zeros(1), aggregate(0.9, 0.0, cmd.mode), cmd)
    assert output.active is ActiveController.REACTIVE
    assert output.ik_converged is None
    np.testing.assert_allclose(output.q_des, q)


def test_low_risk_solves_ik_toward_the_target(controller, desk_chain):
    q = desk_chain.home
    cmd = Command(ee_pose(desk_chain, q + np.array([0.01, 0.01, -0.01])))
    output = controller.step(q, np.zeros(1), aggregate(0.1, 0.0, cmd.mode), cmd)
    assert output.active is ActiveController.NOMINAL
    assert output.ik_converged
    before = np.linalg.norm(ee_pose(desk_chain, q).position - cmd.target.position)
    after = np.linalg.norm(ee_pose(desk_chain, output.q_des).position - cmd.target.position)
    assert after < before
    np.testing.assert_allclose(controller.state.q_des_prev, output.q_des)


def test_rl_only_never_calls_ik(desk_chain, desk_config):
    controller = HybridController(
        desk_chain, ZeroPolicy(desk_chain.n_joints), ControllerSettings.from_config(desk_config), rl_only=True
    )
    q = desk_chain.home
    cmd = Command(ee_pose(desk_chain, q + np.array([0.01, 0.01, -0.01])))
    output = controller.step(q, np.zeros(1), aggregate(0.1, 0.0, cmd.mode), cmd)
    assert output.active is ActiveController.NOMINAL
    assert output.ik_converged is None
    np.testing.assert_allclose(output.q_des, q)


def test_hybrid_step_reads_the_critic_heads(controller, desk_chain, desk_workspace):
    perception = PerceptionOutput(
        latent=torch.zeros(16),
        predicted_occupancy=desk_workspace.empty_grid(0.5),
        safety_logits=torch.tensor([10.0, -10.0]),
    )
    q = desk_chain.home
    output = hybrid_step(controller, q, perception, Command(ee_pose(desk_chain, q)))
    assert output.active is ActiveController.REACTIVE
    assert output.safety.v_body > 0.99
    assert controller.switches == 1


def test_telemetry_writer():
    stream = io.StringIO()
    writer = TelemetryWriter(stream, n_joints=3)
    record = TelemetryRecord(
        t=0.02,
        q=np.zeros(3),
        q_des=np.ones(3),
        active=ActiveController.REACTIVE,
        v_body=0.9,
        v_tool=0.1,
        costs=np.array([1.0, 0.0, 0.0, 0.0]),
        ee_pose=Pose(np.array([0.1, 0.2, 0.3])),
    )
    writer.write_all([record, record])
    assert writer.rows == 2

    rows = list(csv.DictReader(io.StringIO(stream.getvalue())))
    assert len(rows) == 2
    assert list(rows[0]) == telemetry_fields(3)
    assert rows[0]["active"] == "reactive"
    assert rows[0]["c1"] == "1"
    assert float(rows[0]["ee_y"]) == pytest.approx(0.2)


def test_empty_telemetry_trace(tmp_path):
    path = str(tmp_path / "telemetry" / "empty.csv")
    with pytest.raises(ValueError):
        write_telemetry(path, [])
    write_telemetry(path, [], n_joints=3)
    with open(path) as f:
        assert list(csv.reader(f)) == [telemetry_fields(3)]

import numpy as np
import pytest

from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import (
    body_spheres_world,
    clamp_to_limits,
    ee_pose,
    link_frames,
    link_frames_batch,
    jacobian,
    point_jacobian,
    rate_limit,
    solve_ik,
    sphere_centers_from_frames,
)
from tcavoidsrc.kinematics.tool_region import ToolRegion


def test_planar_forward_kinematics():
    chain = SerialChain.planar([1.0, 1.0])
    np.testing.assert_allclose(ee_pose(chain, [0.0, 0.0]).position, [2.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(ee_pose(chain, [np.pi / 2, 0.0]).position, [0.0, 2.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(ee_pose(chain, [0.0, np.pi / 2]).position, [1.0, 1.0, 0.0], atol=1e-12)


def test_wrong_joint_count_is_rejected(desk_chain):
    with pytest.raises(ValueError):
        ee_pose(desk_chain, np.zeros(desk_chain.n_joints + 1))


def test_pose_requires_unit_quaternion():
    with pytest.raises(ValueError):
        Pose(np.zeros(3), np.array([1.0, 1.0, 0.0, 0.0]))


def test_jacobian_matches_finite_differences(desk_chain):
    q = np.array([0.3, -0.4, 0.9])
    eps = 1e-6
    numeric = np.zeros((3, desk_chain.n_joints))
    for i in range(desk_chain.n_joints):
        step = np.zeros(desk_chain.n_joints)
        step[i] = eps
        plus = ee_pose(desk_chain, q + step).position
        minus = ee_pose(desk_chain, q - step).position
        numeric[:, i] = (plus - minus) / (2 * eps)
    np.testing.assert_allclose(jacobian(desk_chain, q)[:3], numeric, atol=1e-7)


def test_point_jacobian_of_flange_equals_linear_jacobian(desk_chain):
    q = np.array([-0.2, 0.5, 0.1])
    point = ee_pose(desk_chain, q).position
    np.testing.assert_allclose(
        point_jacobian(desk_chain, q, desk_chain.ee_link, point), jacobian(desk_chain, q)[:3], atol=1e-12
    )


def test_solve_ik_reaches_a_reachable_position(desk_chain):
    q_goal = np.array([0.3, 0.8, 0.5])
    target = ee_pose(desk_chain, q_goal)
    result = solve_ik(desk_chain, desk_chain.home, Pose(target.position), tol_pos=1e-6, orientation_weight=0.0)

    assert result.converged
    assert np.linalg.norm(ee_pose(desk_chain, result.q).position - target.position) < 1e-6
    assert np.all(result.q >= desk_chain.joint_limits_lo) and np.all(result.q <= desk_chain.joint_limits_hi)
    assert np.all(np.diff(result.history) <= 1e-12)


def test_solve_ik_rejects_non_positive_tolerance(desk_chain):
    with pytest.raises(ValueError):
        solve_ik(desk_chain, desk_chain.home, Pose(np.zeros(3)), tol_pos=0.0)


def test_clamp_and_rate_limit(desk_chain):
    q = clamp_to_limits(desk_chain, np.array([5.0, -5.0, 0.0]))
    np.testing.assert_allclose(q, [1.6, -2.4, 0.0])

    limited = rate_limit(desk_chain, np.zeros(3), np.array([1.0, -1.0, 0.001]), 0.02)
    np.testing.assert_allclose(limited, [0.03, -0.03, 0.001])


def test_body_spheres_follow_the_chain(desk_chain):
    centers, radii = body_spheres_world(desk_chain, desk_chain.home)
    assert centers.shape == (len(radii), 3)
    np.testing.assert_allclose(centers[0], desk_chain.base_position)
    np.testing.assert_allclose(centers[-1], ee_pose(desk_chain, desk_chain.home).position, atol=1e-12)


def test_batched_frames_match_single_configurations(desk_chain, rng):
    qs = rng.uniform(desk_chain.joint_limits_lo, desk_chain.joint_limits_hi, size=(4, desk_chain.n_joints))
    frames = link_frames_batch(desk_chain, qs)
    centers = sphere_centers_from_frames(desk_chain, frames)
    for i, q in enumerate(qs):
        np.testing.assert_allclose(frames[i], link_frames(desk_chain, q), atol=1e-12)
        np.testing.assert_allclose(centers[i], body_spheres_world(desk_chain, q)[0], atol=1e-12)


def test_tool_region_corners_and_containment():
    tool = ToolRegion(offset=(0.1, 0.0, 0.0), size=(0.2, 0.2, 0.2))
    pose = Pose(np.array([1.0, 0.0, 0.0]))
    corners = tool.corners(pose)

    assert corners.shape == (8, 3)
    np.testing.assert_allclose(sorted(set(np.round(corners[:, 0], 9))), [1.0, 1.2])
    np.testing.assert_allclose(tool.center(pose), [1.1, 0.0, 0.0])
    assert tool.contains(np.array([1.1, 0.05, -0.05]), pose)[0]
    assert not tool.contains(np.array([0.9, 0.0, 0.0]), pose)[0]


def test_tool_region_follows_ee_rotation():
    tool = ToolRegion(offset=(0.1, 0.0, 0.0), size=(0.0, 0.0, 0.0))
    pose = Pose.from_euler(np.zeros(3), np.array([0.0, 0.0, np.pi / 2]))
    np.testing.assert_allclose(tool.center(pose), [0.0, 0.1, 0.0], atol=1e-12)


def test_empty_tool_has_zero_size():
    assert not np.any(ToolRegion.empty().size)
    with pytest.raises(ValueError):
        ToolRegion(np.zeros(3), np.array([0.1, -0.1, 0.1]))

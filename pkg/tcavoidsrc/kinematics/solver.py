from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from tcavoidsrc.kinematics.chain import Pose, SerialChain

MAX_BACKTRACKS = 12


def _check_q(chain: SerialChain, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != chain.n_joints:
        raise ValueError(f"Expected {chain.n_joints} joint values, got {q.shape[-1]}")
    return q


def _joint_rotations(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    transforms = np.zeros(angles.shape + (4, 4))
    rotations = Rotation.from_rotvec(angles.reshape(-1, 1) * axis).as_matrix()
    transforms[..., :3, :3] = rotations.reshape(angles.shape + (3, 3))
    transforms[..., 3, 3] = 1.0
    return transforms


def link_frames_batch(chain: SerialChain, qs: np.ndarray) -> np.ndarray:
    """World transforms of every link frame for a batch of configurations, shape (B, n + 1, 4, 4).

    Frame i is placed after joint i rotated; frame n is the flange, fixed to frame n - 1.
    """
    qs = np.atleast_2d(_check_q(chain, qs))
    batch, n = qs.shape
    frames = np.empty((batch, n + 1, 4, 4))
    current = np.broadcast_to(np.eye(4), (batch, 4, 4))
    for i in range(n):
        current = current @ chain.link_offsets[i] @ _joint_rotations(chain.joint_axes[i], qs[:, i])
        frames[:, i] = current
    frames[:, n] = current @ chain.link_offsets[n]
    return frames


def link_frames(chain: SerialChain, q: np.ndarray) -> np.ndarray:
    return link_frames_batch(chain, _check_q(chain, q)[None])[0]


def forward_kinematics(chain: SerialChain, q: np.ndarray) -> Tuple[List[Pose], Pose]:
    frames = link_frames(chain, q)
    poses = [Pose.from_matrix(frame) for frame in frames]
    return poses, poses[chain.ee_link]


def ee_pose(chain: SerialChain, q: np.ndarray, frames: Optional[np.ndarray] = None) -> Pose:
    frames = link_frames(chain, q) if frames is None else frames
    return Pose.from_matrix(frames[chain.ee_link])


def point_jacobian(
    chain: SerialChain, q: np.ndarray, link: int, point: np.ndarray, frames: Optional[np.ndarray] = None
) -> np.ndarray:
    """Linear-velocity Jacobian (3 x n) of a world point rigidly attached to ``link``."""
    frames = link_frames(chain, q) if frames is None else frames
    jac = np.zeros((3, chain.n_joints))
    for i in range(min(link + 1, chain.n_joints)):
        axis = frames[i, :3, :3] @ chain.joint_axes[i]
        jac[:, i] = np.cross(axis, point - frames[i, :3, 3])
    return jac


def jacobian(chain: SerialChain, q: np.ndarray, frames: Optional[np.ndarray] = None) -> np.ndarray:
    """Geometric EE Jacobian, linear rows on top of angular rows."""
    q = _check_q(chain, q)
    frames = link_frames(chain, q) if frames is None else frames
    jac = np.zeros((6, chain.n_joints))
    p_ee = frames[chain.ee_link, :3, 3]
    for i in range(min(chain.ee_link + 1, chain.n_joints)):
        axis = frames[i, :3, :3] @ chain.joint_axes[i]
        jac[:3, i] = np.cross(axis, p_ee - frames[i, :3, 3])
        jac[3:, i] = axis
    return jac


def pose_error(current: Pose, target: Pose) -> np.ndarray:
    """Twist error: position difference stacked with the rotation vector taking current to target."""
    rot_err = (target.rotation * current.rotation.inv()).as_rotvec()
    return np.concatenate([target.position - current.position, rot_err])


def _weights(orientation_weight: float) -> np.ndarray:
    return np.array([1.0, 1.0, 1.0, orientation_weight, orientation_weight, orientation_weight])


def dls_ik_step(
    chain: SerialChain, q: np.ndarray, target: Pose, damping: float = 0.05, orientation_weight: float = 1.0
) -> np.ndarray:
    if damping <= 0:
        raise ValueError(f"damping must be positive, got {damping}")
    q = _check_q(chain, q)
    frames = link_frames(chain, q)
    weights = _weights(orientation_weight)
    jac = weights[:, None] * jacobian(chain, q, frames)
    err = weights * pose_error(ee_pose(chain, q, frames), target)
    return jac.T @ np.linalg.solve(jac @ jac.T + damping ** 2 * np.eye(6), err)


@dataclass
class IkResult:
    q: np.ndarray
    converged: bool
    pos_residual: float
    rot_residual: float
    iterations: int
    history: List[float] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.pos_residual


def _residuals(chain: SerialChain, q: np.ndarray, target: Pose, weights: np.ndarray) -> Tuple[float, float, float]:
    err = pose_error(ee_pose(chain, q), target)
    return float(np.linalg.norm(err[:3])), float(np.linalg.norm(err[3:])), float(np.linalg.norm(weights * err))


def solve_ik(
    chain: SerialChain,
    q0: np.ndarray,
    target: Pose,
    max_iters: int = 100,
    tol_pos: float = 1e-7,
    tol_rot: float = 1e-6,
    damping: float = 0.05,
    orientation_weight: float = 1.0,
) -> IkResult:
    """Iterated DLS with limit clamping; a halving line search keeps the weighted residual non-increasing."""
    if tol_pos <= 0 or tol_rot <= 0:
        raise ValueError("IK tolerances must be positive")
    weights = _weights(orientation_weight)
    q = _clamp(chain, _check_q(chain, q0).copy())
    pos_res, rot_res, merit = _residuals(chain, q, target, weights)
    history = [merit]

    def done(p: float, r: float) -> bool:
        return p < tol_pos and (orientation_weight == 0.0 or r < tol_rot)

    iteration = 0
    while not done(pos_res, rot_res) and iteration < max_iters:
        iteration += 1
        step = dls_ik_step(chain, q, target, damping, orientation_weight)
        for _ in range(MAX_BACKTRACKS):
            candidate = _clamp(chain, q + step)
            c_pos, c_rot, c_merit = _residuals(chain, candidate, target, weights)
            if c_merit <= merit:
                break
            step = step / 2
        else:
            # No descent along the damped direction: stalled at a limit or a singularity
            break
        q, pos_res, rot_res, merit = candidate, c_pos, c_rot, c_merit
        history.append(merit)

    return IkResult(q, done(pos_res, rot_res), pos_res, rot_res, iteration, history)


def _clamp(chain: SerialChain, q: np.ndarray) -> np.ndarray:
    return np.clip(q, chain.joint_limits_lo, chain.joint_limits_hi)


def clamp_to_limits(chain: SerialChain, q: np.ndarray) -> np.ndarray:
    return _clamp(chain, _check_q(chain, q))


def rate_limit(chain: SerialChain, q_from: np.ndarray, q_to: np.ndarray, dt: float) -> np.ndarray:
    max_step = chain.joint_vel_limits * dt
    return q_from + np.clip(_check_q(chain, q_to) - q_from, -max_step, max_step)


def body_spheres_world(
    chain: SerialChain, q: np.ndarray, frames: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Sphere centers in the world frame (S x 3) and their radii (S,)."""
    frames = link_frames(chain, q) if frames is None else frames
    return sphere_centers_from_frames(chain, frames[None])[0], chain.sphere_radii


def sphere_centers_from_frames(chain: SerialChain, frames: np.ndarray) -> np.ndarray:
    """Sphere centers (B, S, 3) from batched link frames (B, n + 1, 4, 4)."""
    link_frames_ = frames[:, chain.sphere_links]
    return np.einsum("bsij,sj->bsi", link_frames_[..., :3, :3], chain.sphere_centers) + link_frames_[..., :3, 3]

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.baselines.clearance import ClearanceSource
from tcavoidsrc.kinematics.chain import Pose, SerialChain
from tcavoidsrc.kinematics.solver import (
    body_spheres_world,
    clamp_to_limits,
    ee_pose,
    link_frames,
    point_jacobian,
    rate_limit,
)

MIN_DISTANCE = 1e-6


@dataclass(frozen=True)
class ApfConfig:
    k_att: float = 1.0
    k_rep: float = 0.0005
    influence: float = 0.1
    max_force: float = 2.0
    gain: float = 20.0

    def __post_init__(self):
        if self.k_att <= 0 or self.k_rep <= 0:
            raise ValueError(f"APF gains must be positive, got k_att={self.k_att}, k_rep={self.k_rep}")
        if self.influence <= 0:
            raise ValueError(f"Influence distance must be positive, got {self.influence}")

    @staticmethod
    def from_config(config: DictConfig) -> "ApfConfig":
        return ApfConfig(config.k_att, config.k_rep, config.influence, config.max_force, config.gain)


def repulsive_force(distance: float, gradient: np.ndarray, cfg: ApfConfig) -> np.ndarray:
    """``k_rep (1/d - 1/d0) / d^2`` along the clearance gradient inside the influence distance, norm-capped."""
    if distance >= cfg.influence:
        return np.zeros(3)
    d = max(distance, MIN_DISTANCE)
    magnitude = min(cfg.k_rep * (1.0 / d - 1.0 / cfg.influence) / d ** 2, cfg.max_force)
    norm = np.linalg.norm(gradient)
    if norm == 0.0:
        return np.zeros(3)
    return magnitude * gradient / norm


class ApfForces(NamedTuple):
    attractive: np.ndarray
    repulsive: np.ndarray
    joint_update: np.ndarray


def apf_forces(
    chain: SerialChain, q: np.ndarray, target: Pose, clearance: ClearanceSource, cfg: ApfConfig
) -> ApfForces:
    frames = link_frames(chain, q)
    ee = ee_pose(chain, q, frames)
    attractive = cfg.k_att * (target.position - ee.position)
    update = point_jacobian(chain, q, chain.ee_link, ee.position, frames).T @ attractive

    centers, radii = body_spheres_world(chain, q, frames)
    distances, gradients = clearance.distance_with_gradient(centers)
    repulsive = np.zeros_like(centers)
    for i, (center, link) in enumerate(zip(centers, chain.sphere_links)):
        repulsive[i] = repulsive_force(distances[i] - radii[i], gradients[i], cfg)
        if np.any(repulsive[i]):
            update = update + point_jacobian(chain, q, int(link), center, frames).T @ repulsive[i]
    return ApfForces(attractive, repulsive, update)


def apf_step(
    chain: SerialChain, q: np.ndarray, target: Pose, clearance: ClearanceSource, cfg: ApfConfig, dt: float
) -> np.ndarray:
    """Joint update from Jacobian-transposed attractive and per-sphere repulsive forces, clamped and rate-limited."""
    q = np.asarray(q, dtype=np.float64)
    forces = apf_forces(chain, q, target, clearance, cfg)
    return rate_limit(chain, q, clamp_to_limits(chain, q + cfg.gain * dt * forces.joint_update), dt)

from typing import Tuple

import numpy as np

from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.kinematics.chain import SerialChain
from tcavoidsrc.kinematics.solver import body_spheres_world, ee_pose, link_frames
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.safety.switching import SafetyValues, aggregate
from tcavoidsrc.world.scene import Scene, scene_clearance


def surface_clearances(chain: SerialChain, q: np.ndarray, tool: ToolRegion, scene: Scene) -> Tuple[float, float]:
    """Ground-truth gap between the scene and (body spheres, tool bounding sphere); ``inf`` for an empty tool."""
    frames = link_frames(chain, q)
    centers, radii = body_spheres_world(chain, q, frames)
    body = float(np.min(scene_clearance(scene, centers) - radii))
    if not np.any(tool.size > 0):
        return body, np.inf
    pose = ee_pose(chain, q, frames)
    half_diagonal = np.linalg.norm(tool.size) / 2
    return body, float(scene_clearance(scene, tool.center(pose))[0] - half_diagonal)


class ClearanceSafetyProxy:
    """Safety values from ground-truth clearance, ``exp(-max(d, 0) / scale)``; 1.0 at contact."""

    def __init__(self, scale: float = 0.05):
        if scale <= 0:
            raise ValueError(f"Scale must be positive, got {scale}")
        self._scale = scale

    def value(self, clearance: float) -> float:
        if np.isinf(clearance):
            return 0.0
        return float(np.exp(-max(clearance, 0.0) / self._scale))

    def __call__(
        self, chain: SerialChain, q: np.ndarray, tool: ToolRegion, mode: InteractionMode, scene: Scene
    ) -> SafetyValues:
        body, tool_gap = surface_clearances(chain, q, tool, scene)
        return aggregate(self.value(body), self.value(tool_gap), mode)

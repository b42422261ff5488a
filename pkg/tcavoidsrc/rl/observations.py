import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.control.controller import Command
from tcavoidsrc.kinematics.chain import SerialChain
from tcavoidsrc.kinematics.solver import body_spheres_world, ee_pose, link_frames
from tcavoidsrc.perception.camera import CameraModel, depth_to_cloud, render_depth
from tcavoidsrc.perception.model import CollidableRegionNet, PerceptionOutput, build_proprio, proprio_size
from tcavoidsrc.perception.observation import (
    Label,
    ObservationGrid,
    filter_self,
    fuse_memory,
    voxelize_observation,
)
from tcavoidsrc.safety.switching import SafetyValues, aggregate
from tcavoidsrc.world.scene import Scene, Workspace, rasterize

logger = logging.getLogger(__name__)

OBSERVATION_KINDS = ("ours", "pretrained_ae", "mapping", "end_to_end")


@dataclass(eq=False)
class StepContext:
    """Everything an observation builder may look at after a simulator step."""

    scene: Scene
    chain: SerialChain
    q: np.ndarray
    q_history: np.ndarray
    command: Command
    rng: Optional[np.random.Generator] = None


class SensorRig:
    """Depth camera plus voxelization; the robot body and tool appear in the rendered frames."""

    def __init__(self, camera: CameraModel, workspace: Workspace, carve_step: float = 0.5, noisy: bool = True):
        self.camera = camera
        self.workspace = workspace
        self.carve_step = carve_step
        self.noisy = noisy

    @staticmethod
    def from_config(config: DictConfig, noisy: bool = True) -> "SensorRig":
        return SensorRig(
            CameraModel.from_config(config.camera),
            Workspace.from_config(config.workspace),
            config.perception.carve_step,
            noisy,
        )

    def capture(self, context: StepContext) -> Tuple[ObservationGrid, np.ndarray]:
        frames = link_frames(context.chain, context.q)
        spheres = body_spheres_world(context.chain, context.q, frames)
        depth = render_depth(
            self.camera,
            context.scene,
            spheres,
            context.command.tool,
            ee_pose(context.chain, context.q, frames),
            context.rng if self.noisy else None,
        )
        cloud = depth_to_cloud(self.camera, depth)
        return voxelize_observation(cloud, self.camera, self.workspace, self.carve_step), cloud


def _proprio(context: StepContext) -> np.ndarray:
    cmd = context.command
    return build_proprio(context.q_history, cmd.target, cmd.tool, cmd.mode)


class ObservationBuilder(ABC):
    def __init__(self, rig: SensorRig):
        self.rig = rig

    @property
    @abstractmethod
    def size(self) -> int:
        pass

    @property
    def grid_shape(self) -> Optional[Tuple[int, ...]]:
        """Shape of the leading voxel block of the observation for policies with their own encoder."""
        return None

    @abstractmethod
    def reset(self) -> None:
        pass

    @abstractmethod
    def build(self, context: StepContext) -> np.ndarray:
        pass

    def safety(self, context: StepContext) -> Optional[SafetyValues]:
        return None


class LatentObservation(ObservationBuilder):
    """Frozen encoder latent followed by proprioception; the decoded grid is fed back on the next frame."""

    def __init__(self, rig: SensorRig, model: CollidableRegionNet, prior: float = 0.5):
        super().__init__(rig)
        self.model = model.eval()
        self._prior = prior
        self._prev: np.ndarray = np.full(rig.workspace.dims, prior)
        self.last_output: Optional[PerceptionOutput] = None

    @property
    def size(self) -> int:
        return self.model.latent_size + self.model.proprio_size

    def reset(self) -> None:
        self._prev = np.full(self.rig.workspace.dims, self._prior)
        self.last_output = None

    def build(self, context: StepContext) -> np.ndarray:
        observation, _ = self.rig.capture(context)
        proprio = _proprio(context)
        output = self.model.encode(observation, self._prev, proprio)
        self._prev = output.predicted_occupancy.cells
        self.last_output = output
        return np.concatenate([output.latent.cpu().numpy().astype(np.float32), proprio])

    def safety(self, context: StepContext) -> Optional[SafetyValues]:
        if self.last_output is None:
            return None
        v_body, v_tool = (float(v) for v in self.last_output.safety_values.cpu().numpy())
        return aggregate(v_body, v_tool, context.command.mode)


class FusedMemoryObservation(ObservationBuilder):
    """Mapping baseline: self-filtered frames fused into a log-odds occupancy memory.

    ``over_filtered`` counts obstacle voxels the self filter erased while they were observed occupied.
    """

    def __init__(self, rig: SensorRig, perception: DictConfig, n_joints: int):
        super().__init__(rig)
        self._config = perception
        self._n_joints = n_joints
        self._memory = np.full(rig.workspace.dims, 0.5)
        self.over_filtered = 0
        self.last_observation: Optional[ObservationGrid] = None
        self.last_prior: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(np.prod(self.rig.workspace.dims)) + proprio_size(self._n_joints, self._config.history)

    @property
    def grid_shape(self) -> Optional[Tuple[int, ...]]:
        return (1,) + tuple(self.rig.workspace.dims)

    @property
    def memory(self) -> np.ndarray:
        return self._memory

    def reset(self) -> None:
        self._memory = np.full(self.rig.workspace.dims, 0.5)

    def build(self, context: StepContext) -> np.ndarray:
        observation, _ = self.rig.capture(context)
        self.last_observation, self.last_prior = observation, self._memory
        frames = link_frames(context.chain, context.q)
        centers, radii = body_spheres_world(context.chain, context.q, frames)
        filtered = filter_self(
            observation,
            centers,
            radii,
            context.command.tool,
            ee_pose(context.chain, context.q, frames),
            self._config.self_filter_margin,
        )
        erased = observation.mask(Label.OCCUPIED) & ~filtered.mask(Label.OCCUPIED) & rasterize(context.scene).cells
        if erased.any():
            self.over_filtered += int(erased.sum())
            logger.debug("Self filter erased %d obstacle voxels", int(erased.sum()))
        self._memory = fuse_memory(
            self._memory,
            filtered,
            self._config.l_occ,
            self._config.l_free,
            self._config.p_min,
            self._config.p_max,
        )
        return np.concatenate([self._memory.reshape(-1).astype(np.float32), _proprio(context)])


class RawGridObservation(ObservationBuilder):
    """End-to-end input: occupied and free masks of the current frame followed by proprioception."""

    def __init__(self, rig: SensorRig, perception: DictConfig, n_joints: int):
        super().__init__(rig)
        self._n_joints = n_joints
        self._history = perception.history

    @property
    def size(self) -> int:
        return 2 * int(np.prod(self.rig.workspace.dims)) + proprio_size(self._n_joints, self._history)

    @property
    def grid_shape(self) -> Optional[Tuple[int, ...]]:
        return (2,) + tuple(self.rig.workspace.dims)

    def reset(self) -> None:
        pass

    def build(self, context: StepContext) -> np.ndarray:
        observation, _ = self.rig.capture(context)
        grid = np.stack([observation.mask(Label.OCCUPIED), observation.mask(Label.FREE)]).astype(np.float32)
        return np.concatenate([grid.reshape(-1), _proprio(context)])


def observation_layout(config: DictConfig, kind: Optional[str] = None) -> Tuple[int, Optional[Tuple[int, ...]]]:
    """Observation size and leading grid shape for an observation kind, derived from the config alone."""
    kind = config.rl.observation if kind is None else kind
    dims = tuple(Workspace.from_config(config.workspace).dims)
    proprio = proprio_size(len(config.chain.joint_axes), config.perception.history)
    if kind in ("ours", "pretrained_ae"):
        return config.perception.latent_size + proprio, None
    if kind == "mapping":
        return int(np.prod(dims)) + proprio, (1,) + dims
    if kind == "end_to_end":
        return 2 * int(np.prod(dims)) + proprio, (2,) + dims
    raise ConfigError(f"Unknown observation kind {kind!r}, expected one of {OBSERVATION_KINDS}")


def build_observation(
    config: DictConfig, kind: Optional[str] = None, model: Optional[CollidableRegionNet] = None, noisy: bool = True
) -> ObservationBuilder:
    kind = config.rl.observation if kind is None else kind
    rig = SensorRig.from_config(config, noisy)
    n_joints = len(config.chain.joint_axes)
    if kind in ("ours", "pretrained_ae"):
        if model is None:
            raise ConfigError(f"Observation kind {kind!r} needs a pretrained perception model")
        return LatentObservation(rig, model)
    if kind == "mapping":
        return FusedMemoryObservation(rig, config.perception, n_joints)
    if kind == "end_to_end":
        return RawGridObservation(rig, config.perception, n_joints)
    raise ConfigError(f"Unknown observation kind {kind!r}, expected one of {OBSERVATION_KINDS}")

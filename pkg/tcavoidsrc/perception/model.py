from typing import NamedTuple

import numpy as np
import torch
from omegaconf import DictConfig
from torch import nn

from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.kinematics.chain import Pose
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.netcore.layers import Mlp, VoxelDecoder, VoxelEncoder
from tcavoidsrc.netcore.stateful import CheckpointStateful
from tcavoidsrc.perception.observation import Label, ObservationGrid
from tcavoidsrc.world.scene import Workspace
from tcavoidsrc.world.voxel_grid import VoxelGrid

# Occupied mask, free mask and previous prediction
GRID_CHANNELS = 3
N_SAFETY_HEADS = 2


def proprio_size(n_joints: int, history: int) -> int:
    return history * n_joints + 6 + 6 + 1


class PerceptionOutput(NamedTuple):
    latent: torch.Tensor
    predicted_occupancy: VoxelGrid
    safety_logits: torch.Tensor

    @property
    def safety_values(self) -> torch.Tensor:
        """(body, tool) safety values in [0, 1]."""
        return torch.sigmoid(self.safety_logits)


def build_grid_input(observation: ObservationGrid, prev_prediction: np.ndarray) -> np.ndarray:
    if observation.labels.shape != prev_prediction.shape:
        raise ValueError(f"Grid shape {observation.labels.shape} does not match prediction {prev_prediction.shape}")
    return np.stack(
        [
            observation.mask(Label.OCCUPIED).astype(np.float32),
            observation.mask(Label.FREE).astype(np.float32),
            prev_prediction.astype(np.float32),
        ]
    )


def build_proprio(q_history: np.ndarray, target: Pose, tool: ToolRegion, mode: InteractionMode) -> np.ndarray:
    """Joint history (oldest first), target position and Euler angles, tool size and offset, mode flag."""
    return np.concatenate(
        [
            np.asarray(q_history, dtype=np.float64).reshape(-1),
            target.position,
            target.euler(),
            tool.as_vector(),
            [mode.flag],
        ]
    ).astype(np.float32)


class CollidableRegionNet(nn.Module, CheckpointStateful):
    """3D conv encoder over the observation and previous prediction, fused with proprioception into a latent.

    The latent feeds a transposed-conv decoder that predicts the collidable region (robot and tool excluded)
    and two safety critic heads (body, tool).
    """

    checkpoint_filename = "perception.tcav"

    def __init__(
        self,
        grid_dims,
        n_joints: int,
        history: int = 4,
        channels=(8, 16, 32),
        latent_size: int = 128,
        mlp_hidden: int = 256,
    ):
        super().__init__()
        self.grid_dims = tuple(int(d) for d in grid_dims)
        self.n_joints = n_joints
        self.history = history
        self.latent_size = latent_size
        self.proprio_size = proprio_size(n_joints, history)

        self.encoder = VoxelEncoder(GRID_CHANNELS, channels, self.grid_dims)
        fused_in = self.encoder.out_features + self.proprio_size
        self.fuse = Mlp([fused_in, mlp_hidden, latent_size], out_activation=nn.Tanh)
        self.expand = nn.Sequential(nn.Linear(latent_size, self.encoder.out_features), nn.ReLU())
        self.decoder = VoxelDecoder(1, channels, self.grid_dims)
        self.safety_head = Mlp([latent_size, mlp_hidden // 2, N_SAFETY_HEADS])

    @classmethod
    def from_config(cls, config: DictConfig) -> "CollidableRegionNet":
        workspace = Workspace.from_config(config.workspace)
        return cls(
            grid_dims=workspace.dims,
            n_joints=len(config.chain.joint_axes),
            history=config.perception.history,
            channels=tuple(config.perception.channels),
            latent_size=config.perception.latent_size,
            mlp_hidden=config.perception.mlp_hidden,
        )

    def forward(self, grid: torch.Tensor, proprio: torch.Tensor):
        """Batched pass: returns (latent, occupancy logits (B, X, Y, Z), safety logits (B, 2))."""
        if tuple(grid.shape[1:]) != (GRID_CHANNELS,) + self.grid_dims:
            raise ValueError(f"Expected grid input (B, {GRID_CHANNELS}, {self.grid_dims}), got {tuple(grid.shape)}")
        if proprio.shape[-1] != self.proprio_size:
            raise ValueError(f"Expected proprio of size {self.proprio_size}, got {proprio.shape[-1]}")
        latent = self.fuse(torch.cat([self.encoder(grid), proprio], dim=-1))
        occupancy_logits = self.decoder(self.expand(latent)).squeeze(1)
        return latent, occupancy_logits, self.safety_head(latent)

    def encode(
        self, observation: ObservationGrid, prev_prediction: np.ndarray, proprio: np.ndarray
    ) -> PerceptionOutput:
        dtype = next(self.parameters()).dtype
        grid = torch.as_tensor(build_grid_input(observation, prev_prediction), dtype=dtype).unsqueeze(0)
        proprio_tensor = torch.as_tensor(np.asarray(proprio), dtype=dtype).reshape(1, -1)
        with torch.no_grad():
            latent, logits, safety_logits = self(grid, proprio_tensor)
        probabilities = torch.sigmoid(logits[0]).cpu().numpy().astype(np.float64)
        return PerceptionOutput(
            latent=latent[0],
            predicted_occupancy=observation.grid.with_cells(probabilities),
            safety_logits=safety_logits[0],
        )


def initial_prediction(workspace: Workspace, prior: float = 0.5) -> np.ndarray:
    return np.full(workspace.dims, prior)

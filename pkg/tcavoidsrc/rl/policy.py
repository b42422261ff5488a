from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from omegaconf import DictConfig
from torch import nn

from tcavoidsrc.control.constraints import N_CONSTRAINTS
from tcavoidsrc.control.controller import Policy
from tcavoidsrc.netcore.layers import (
    GaussianPolicyHead,
    Mlp,
    VoxelEncoder,
    gaussian_entropy,
    gaussian_logprob,
    gaussian_sample,
)
from tcavoidsrc.netcore.stateful import CheckpointStateful
from tcavoidsrc.rl.observations import observation_layout


class ActorStep(NamedTuple):
    actions: torch.Tensor
    logprobs: torch.Tensor
    values: torch.Tensor
    cost_values: torch.Tensor


class Evaluation(NamedTuple):
    logprobs: torch.Tensor
    entropy: torch.Tensor
    values: torch.Tensor
    cost_values: torch.Tensor


class ActorCritic(nn.Module, CheckpointStateful):
    """Gaussian actor with a reward critic and one critic per constraint.

    When ``grid_shape`` is set the leading ``prod(grid_shape)`` observation entries are a voxel block that goes
    through a trainable encoder shared by the actor and critics.
    """

    checkpoint_filename = "policy.tcav"

    def __init__(
        self,
        observation_size: int,
        n_actions: int,
        hidden: Sequence[int] = (256, 256),
        n_costs: int = N_CONSTRAINTS,
        grid_shape: Optional[Tuple[int, ...]] = None,
        channels: Sequence[int] = (8, 16, 32),
        init_log_std: float = 0.0,
    ):
        super().__init__()
        self.observation_size = observation_size
        self.n_actions = n_actions
        self.n_costs = n_costs
        self.grid_shape = None if grid_shape is None else tuple(grid_shape)

        if self.grid_shape is None:
            self.encoder = None
            self._grid_size = 0
            features = observation_size
        else:
            self._grid_size = int(np.prod(self.grid_shape))
            self.encoder = VoxelEncoder(self.grid_shape[0], channels, self.grid_shape[1:])
            features = self.encoder.out_features + observation_size - self._grid_size

        hidden = list(hidden)
        self.actor = Mlp([features] + hidden, out_activation=nn.Tanh)
        self.head = GaussianPolicyHead(hidden[-1], n_actions, init_log_std)
        self.critic = Mlp([features] + hidden + [1])
        self.cost_critics = nn.ModuleList([Mlp([features] + hidden + [1]) for _ in range(n_costs)])

    @classmethod
    def from_config(cls, config: DictConfig, kind: Optional[str] = None) -> "ActorCritic":
        size, grid_shape = observation_layout(config, kind)
        return cls(
            observation_size=size,
            n_actions=len(config.chain.joint_axes),
            hidden=tuple(config.rl.hidden),
            n_costs=len(config.rl.cost_limits),
            grid_shape=grid_shape,
            channels=tuple(config.perception.channels),
            init_log_std=config.rl.init_log_std,
        )

    def features(self, observations: torch.Tensor) -> torch.Tensor:
        if self.encoder is None:
            return observations
        grid = observations[:, : self._grid_size].reshape(-1, *self.grid_shape)
        return torch.cat([self.encoder(grid), observations[:, self._grid_size :]], dim=-1)

    def _heads(self, features: torch.Tensor):
        mean, log_std = self.head(self.actor(features))
        values = self.critic(features).squeeze(-1)
        cost_values = torch.cat([critic(features) for critic in self.cost_critics], dim=-1)
        return mean, log_std, values, cost_values

    def forward(self, observations: torch.Tensor):
        return self._heads(self.features(observations))

    def values(self, observations: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features = self.features(observations)
        return self.critic(features).squeeze(-1), torch.cat([c(features) for c in self.cost_critics], dim=-1)

    def evaluate(self, observations: torch.Tensor, actions: torch.Tensor) -> Evaluation:
        mean, log_std, values, cost_values = self(observations)
        return Evaluation(gaussian_logprob(mean, log_std, actions), gaussian_entropy(log_std), values, cost_values)

    @torch.no_grad()
    def act(
        self,
        observations: torch.Tensor,
        generators: Optional[Sequence[torch.Generator]] = None,
        deterministic: bool = False,
    ) -> ActorStep:
        """Samples one action per row; row ``i`` draws its noise from ``generators[i]``."""
        mean, log_std, values, cost_values = self(observations)
        if deterministic:
            actions = mean
        else:
            generators = generators or [None] * mean.shape[0]
            actions = torch.stack([gaussian_sample(m, s, g) for m, s, g in zip(mean, log_std, generators)])
        return ActorStep(actions, gaussian_logprob(mean, log_std, actions), values, cost_values)


class TorchPolicy(Policy):
    """Deterministic wrapper exposing a trained actor to the controllers."""

    def __init__(self, model: ActorCritic):
        self._model = model.eval()

    @property
    def model(self) -> ActorCritic:
        return self._model

    @property
    def n_actions(self) -> int:
        return self._model.n_actions

    def act(self, observation: np.ndarray, deterministic: bool = True) -> np.ndarray:
        dtype = next(self._model.parameters()).dtype
        observations = torch.as_tensor(np.asarray(observation), dtype=dtype).reshape(1, -1)
        return self._model.act(observations, deterministic=deterministic).actions[0].cpu().numpy().astype(np.float64)

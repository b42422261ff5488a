import math
from typing import List, Optional, Sequence, Tuple, Type

import numpy as np
import torch
from torch import nn
from torch.distributions import Normal


class Mlp(nn.Sequential):
    def __init__(
        self,
        sizes: Sequence[int],
        activation: Type[nn.Module] = nn.ReLU,
        out_activation: Optional[Type[nn.Module]] = None,
    ):
        layers: List[nn.Module] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append(nn.Linear(n_in, n_out))
            if i < len(sizes) - 2:
                layers.append(activation())
        if out_activation is not None:
            layers.append(out_activation())
        super().__init__(*layers)


def conv_output_dims(dims: Sequence[int], n_layers: int) -> List[Tuple[int, ...]]:
    """Spatial dims after each stride-2, kernel-3, padding-1 convolution, input dims first."""
    sizes = [tuple(int(d) for d in dims)]
    for _ in range(n_layers):
        sizes.append(tuple((d - 1) // 2 + 1 for d in sizes[-1]))
    return sizes


class VoxelEncoder(nn.Module):
    def __init__(self, in_channels: int, channels: Sequence[int], dims: Sequence[int]):
        super().__init__()
        self.sizes = conv_output_dims(dims, len(channels))
        layers: List[nn.Module] = []
        for c_in, c_out in zip([in_channels] + list(channels[:-1]), channels):
            layers += [nn.Conv3d(c_in, c_out, kernel_size=3, stride=2, padding=1), nn.ReLU()]
        self.net = nn.Sequential(*layers)
        self.out_features = int(channels[-1] * np.prod(self.sizes[-1]))

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        return self.net(grid).flatten(start_dim=1)


class VoxelDecoder(nn.Module):
    """Mirror of :class:`VoxelEncoder`; output padding restores the exact encoder input dims."""

    def __init__(self, out_channels: int, channels: Sequence[int], dims: Sequence[int]):
        super().__init__()
        self.sizes = conv_output_dims(dims, len(channels))
        self._top_channels = channels[-1]
        reversed_channels = list(reversed(channels)) + [out_channels]
        layers: List[nn.Module] = []
        for i, (c_in, c_out) in enumerate(zip(reversed_channels[:-1], reversed_channels[1:])):
            source, target = self.sizes[-1 - i], self.sizes[-2 - i]
            padding = tuple(t - (2 * s - 1) for s, t in zip(source, target))
            layers.append(nn.ConvTranspose3d(c_in, c_out, kernel_size=3, stride=2, padding=1, output_padding=padding))
            if i < len(channels) - 1:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features.view(features.size(0), self._top_channels, *self.sizes[-1]))


def gaussian_logprob(mean: torch.Tensor, log_std: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
    return Normal(mean, log_std.exp()).log_prob(action).sum(dim=-1)


def gaussian_entropy(log_std: torch.Tensor) -> torch.Tensor:
    return (0.5 + 0.5 * math.log(2 * math.pi) + log_std).sum(dim=-1)


def gaussian_sample(
    mean: torch.Tensor, log_std: torch.Tensor, generator: Optional[torch.Generator] = None
) -> torch.Tensor:
    noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
    return mean + noise * log_std.exp()


class GaussianPolicyHead(nn.Module):
    """Linear mean with a state-independent log standard deviation."""

    def __init__(self, in_features: int, n_actions: int, init_log_std: float = 0.0):
        super().__init__()
        self.mean = nn.Linear(in_features, n_actions)
        self.log_std = nn.Parameter(torch.full((n_actions,), float(init_log_std)))

    def forward(self, features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        mean = self.mean(features)
        return mean, self.log_std.expand_as(mean)

    def distribution(self, features: torch.Tensor) -> Normal:
        mean, log_std = self(features)
        return Normal(mean, log_std.exp())

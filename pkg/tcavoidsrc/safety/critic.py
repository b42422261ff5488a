import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from tcavoidsrc.netcore.layers import Mlp

logger = logging.getLogger(__name__)


def _check_unit(name: str, value) -> None:
    value = np.asarray(value)
    if np.any(value < 0) or np.any(value > 1):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def bellman_target(cost, v_next, gamma: float):
    """One-step target of the discounted violation probability: ``c + (1 - c) * gamma * v_next``."""
    if not 0 <= gamma < 1:
        raise ValueError(f"Discount must lie in [0, 1), got {gamma}")
    _check_unit("Cost", cost)
    _check_unit("Next value", v_next)
    return cost + (1 - cost) * gamma * v_next


def safety_targets(
    costs: torch.Tensor, next_logits: torch.Tensor, terminal: torch.Tensor, gamma: float
) -> torch.Tensor:
    """Batched Bellman targets from critic logits at the next state; terminal transitions bootstrap nothing."""
    next_values = torch.sigmoid(next_logits) * (1 - terminal.to(next_logits.dtype)).unsqueeze(-1)
    return costs + (1 - costs) * gamma * next_values


def safety_critic_loss(
    logits: torch.Tensor, costs: torch.Tensor, next_logits: torch.Tensor, terminal: torch.Tensor, gamma: float
) -> torch.Tensor:
    """Binary cross-entropy of critic logits against Bellman targets; no gradient flows through ``next_logits``."""
    targets = safety_targets(costs, next_logits.detach(), terminal, gamma)
    return F.binary_cross_entropy_with_logits(logits, targets)


@dataclass
class ValueIterationResult:
    values: np.ndarray
    residuals: List[float]

    @property
    def sweeps(self) -> int:
        return len(self.residuals)


def tabular_value_iteration(
    transitions: np.ndarray, costs: np.ndarray, gamma: float, tol: float = 1e-10, max_sweeps: int = 100_000
) -> ValueIterationResult:
    """Fixed point of the safety Bellman operator on a finite MDP with row-stochastic ``transitions``."""
    transitions = np.asarray(transitions, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    n = len(costs)
    if transitions.shape != (n, n):
        raise ValueError(f"Transition matrix must be {n}x{n}, got {transitions.shape}")
    if np.any(transitions < 0) or not np.allclose(transitions.sum(axis=1), 1.0):
        raise ValueError("Transition rows must be probability distributions")
    if not 0 <= gamma < 1:
        raise ValueError(f"Discount must lie in [0, 1), got {gamma}")
    _check_unit("Cost", costs)

    values = np.zeros(n)
    residuals = []
    for _ in range(max_sweeps):
        updated = costs + (1 - costs) * gamma * (transitions @ values)
        residual = float(np.abs(updated - values).max())
        residuals.append(residual)
        values = updated
        if residual < tol:
            break
    else:
        logger.warning("Value iteration stopped after %d sweeps, residual %g", max_sweeps, residuals[-1])
    return ValueIterationResult(values, residuals)


def monte_carlo_safety_value(
    step: Callable[[int, np.random.Generator], int],
    is_violation: Callable[[int], bool],
    start: int,
    gamma: float,
    episodes: int,
    horizon: int,
    rng: np.random.Generator,
) -> float:
    """Mean of ``gamma ** t`` at the first violation (0 when none happens within ``horizon``)."""
    total = 0.0
    for _ in range(episodes):
        state = start
        for t in range(horizon):
            if is_violation(state):
                total += gamma ** t
                break
            state = step(state, rng)
    return total / episodes


@dataclass
class SafetyDataset:
    """Transitions (s, c, s', terminal) collected under the nominal controller; one cost column per head."""

    features: np.ndarray
    costs: np.ndarray
    next_features: np.ndarray
    terminal: np.ndarray

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=np.float32)
        self.costs = costs[:, None] if costs.ndim == 1 else costs
        self.terminal = np.asarray(self.terminal, dtype=bool)
        if not np.all(np.isin(self.costs, (0.0, 1.0))):
            raise ValueError("Safety costs must be indicators")

    def __len__(self) -> int:
        return len(self.features)

    @staticmethod
    def concatenate(parts: Sequence["SafetyDataset"]) -> "SafetyDataset":
        return SafetyDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.costs for p in parts]),
            np.concatenate([p.next_features for p in parts]),
            np.concatenate([p.terminal for p in parts]),
        )


class SafetyCritic(nn.Module):
    """Stand-alone critic over feature vectors; one logit per constrained region."""

    def __init__(self, in_features: int, hidden: Sequence[int] = (128, 128), n_heads: int = 2):
        super().__init__()
        self.in_features = in_features
        self.net = Mlp([in_features, *hidden, n_heads])

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features)

    def values(self, features: np.ndarray) -> np.ndarray:
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            return torch.sigmoid(self(torch.as_tensor(features, dtype=dtype))).cpu().numpy()


def fit_safety_critic(
    critic: nn.Module,
    dataset: SafetyDataset,
    gamma: float,
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 256,
    generator: Optional[torch.Generator] = None,
) -> List[float]:
    """Fitted value iteration: targets are recomputed from the critic at the start of every epoch.

    Returns the mean binary cross-entropy of each epoch.
    """
    if len(dataset) == 0:
        raise ValueError("Cannot fit a safety critic on an empty dataset")
    dtype = next(critic.parameters()).dtype
    features = torch.as_tensor(dataset.features, dtype=dtype)
    next_features = torch.as_tensor(dataset.next_features, dtype=dtype)
    costs = torch.as_tensor(dataset.costs, dtype=dtype)
    terminal = torch.as_tensor(dataset.terminal)
    optimizer = torch.optim.Adam(critic.parameters(), lr=lr)

    losses = []
    for epoch in tqdm(range(epochs), desc="Fitting safety critic", leave=False):
        with torch.no_grad():
            next_logits = critic(next_features)
        order = torch.randperm(len(dataset), generator=generator)
        epoch_loss = 0.0
        for start in range(0, len(dataset), batch_size):
            index = order[start : start + batch_size]
            loss = safety_critic_loss(critic(features[index]), costs[index], next_logits[index], terminal[index], gamma)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(index)
        losses.append(epoch_loss / len(dataset))
        logger.debug("Safety critic epoch %d, loss %.5f", epoch, losses[-1])
    return losses


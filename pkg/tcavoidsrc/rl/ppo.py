import copy
import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import gymnasium
import numpy as np
import torch
from omegaconf import DictConfig, OmegaConf
from pytorch_lightning.loggers import Logger
from torch import nn
from tqdm import tqdm

from tcavoidsrc.common.errors import ContractError, TrainingError
from tcavoidsrc.common.types import TrialOutcome
from tcavoidsrc.common.utils import get_linear_schedule_with_warmup, training_logger
from tcavoidsrc.rl.policy import ActorCritic

logger = logging.getLogger(__name__)

RATIO_TOLERANCE = 1e-3


def gae(
    rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation along axis 0.

    ``values`` carries one more row than ``rewards``: the bootstrap value after the last step.
    ``dones[t]`` cuts the recursion after step ``t``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1:
        raise ValueError(f"Expected {rewards.shape[0] + 1} values, got {values.shape[0]}")
    if dones.ndim < rewards.ndim:
        dones = dones.reshape(dones.shape + (1,) * (rewards.ndim - dones.ndim))

    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in reversed(range(rewards.shape[0])):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * not_done - values[t]
        running = delta + gamma * lam * not_done * running
        advantages[t] = running
    return advantages, advantages + values[:-1]


@dataclass(frozen=True)
class CmdpConfig:
    gamma: float = 0.99
    lam: float = 0.95
    cost_limits: Tuple[float, ...] = (0.01, 0.01, 0.05, 0.05)
    kappa: Tuple[float, ...] = (20.0, 20.0, 20.0, 20.0)
    clip: float = 0.2
    epochs: int = 10
    minibatch_size: int = 512
    rollout_steps: int = 256
    n_envs: int = 16
    lr: float = 3e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if any(eps < 0 for eps in self.cost_limits):
            raise ValueError(f"Cost limits must be non-negative, got {self.cost_limits}")
        if len(self.kappa) != len(self.cost_limits):
            raise ValueError(f"Got {len(self.kappa)} penalty coefficients for {len(self.cost_limits)} cost limits")

    @property
    def n_costs(self) -> int:
        return len(self.cost_limits)

    @staticmethod
    def from_config(config: DictConfig) -> "CmdpConfig":
        return CmdpConfig(
            gamma=config.gamma,
            lam=config.lam,
            cost_limits=tuple(config.cost_limits),
            kappa=tuple(config.kappa),
            clip=config.clip,
            epochs=config.epochs,
            minibatch_size=config.minibatch_size,
            rollout_steps=config.rollout_steps,
            n_envs=config.n_envs,
            lr=config.lr,
            entropy_coef=config.entropy_coef,
            value_coef=config.value_coef,
            max_grad_norm=config.max_grad_norm,
        )


@dataclass(eq=False)
class RolloutBatch:
    """Flattened transitions of all environments, env-major."""

    observations: torch.Tensor
    actions: torch.Tensor
    logprobs: torch.Tensor
    rewards: torch.Tensor
    costs: torch.Tensor
    dones: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor
    cost_advantages: torch.Tensor
    cost_returns: torch.Tensor

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def cost_estimates(self) -> torch.Tensor:
        """Batch estimate of each discounted cost return, clamped to be non-negative."""
        return self.cost_returns.mean(dim=0).clamp(min=0.0)


@dataclass
class EpisodeStats:
    returns: List[float] = field(default_factory=list)
    discounted_costs: List[np.ndarray] = field(default_factory=list)
    successes: List[bool] = field(default_factory=list)
    outcomes: List[Optional[TrialOutcome]] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.returns)

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes)) if self.successes else 0.0

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns)) if self.returns else 0.0

    def mean_discounted_costs(self, n_costs: int) -> np.ndarray:
        if not self.discounted_costs:
            return np.zeros(n_costs)
        return np.mean(self.discounted_costs, axis=0)


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    cost_value_loss: float = 0.0
    penalty: float = 0.0
    entropy: float = 0.0
    cost_estimates: Tuple[float, ...] = ()
    minibatches: int = 0
    aborted: bool = False


def _normalize(x: torch.Tensor) -> torch.Tensor:
    x = x - x.mean()
    return x / (x.pow(2).mean().sqrt() + 1e-8)


def p3o_update(
    model: ActorCritic,
    optimizer: torch.optim.Optimizer,
    batch: RolloutBatch,
    cfg: CmdpConfig,
    generator: Optional[torch.Generator] = None,
) -> UpdateStats:
    """Penalized PPO epochs over one batch.

    The loss is the clipped reward surrogate plus ``kappa_i * relu(cost surrogate_i + J_C_i - eps_i)`` per
    constraint, with the pessimistic clipped surrogate on centered cost advantages, plus critic regressions.
    A non-finite loss restores the parameters from before the update and reports the batch as aborted.
    """
    model_state = copy.deepcopy(model.state_dict())
    optimizer_state = copy.deepcopy(optimizer.state_dict())
    cost_estimates = batch.cost_estimates.to(batch.advantages.dtype)
    limits = torch.tensor(cfg.cost_limits, dtype=batch.advantages.dtype)
    kappa = torch.tensor(cfg.kappa, dtype=batch.advantages.dtype)
    advantages = _normalize(batch.advantages)
    cost_advantages = batch.cost_advantages - batch.cost_advantages.mean(dim=0)

    stats = UpdateStats(cost_estimates=tuple(float(c) for c in cost_estimates))
    n = len(batch)
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, cfg.minibatch_size):
            index = order[start : start + cfg.minibatch_size]
            evaluation = model.evaluate(batch.observations[index], batch.actions[index])
            ratio = torch.exp(evaluation.logprobs - batch.logprobs[index])
            if epoch == 0 and start == 0:
                deviation = float((ratio - 1.0).abs().max())
                if deviation > RATIO_TOLERANCE:
                    raise ContractError(f"Importance ratio deviates from 1 by {deviation:.2e} before any update")

            clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip)
            adv = advantages[index]
            policy_loss = -torch.min(ratio * adv, clipped * adv).mean()

            cost_adv = cost_advantages[index]
            cost_surrogate = torch.max(ratio.unsqueeze(-1) * cost_adv, clipped.unsqueeze(-1) * cost_adv).mean(dim=0)
            penalty = (kappa * torch.relu(cost_surrogate + cost_estimates - limits)).sum()

            value_loss = (evaluation.values - batch.returns[index]).pow(2).mean()
            cost_value_loss = (evaluation.cost_values - batch.cost_returns[index]).pow(2).mean(dim=0).sum()
            entropy = evaluation.entropy.mean()
            loss = (
                policy_loss
                + penalty
                + cfg.value_coef * (value_loss + cost_value_loss)
                - cfg.entropy_coef * entropy
            )

            if not torch.isfinite(loss):
                model.load_state_dict(model_state)
                optimizer.load_state_dict(optimizer_state)
                logger.warning(
                    "Non-finite loss, update aborted (batch %d, reward mean %.3f, costs mean %s)",
                    n,
                    float(batch.rewards.mean()),
                    batch.costs.mean(dim=0).tolist(),
                )
                stats.aborted = True
                return stats

            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), cfg.max_grad_norm)
            optimizer.step()

            stats.policy_loss += float(policy_loss)
            stats.value_loss += float(value_loss)
            stats.cost_value_loss += float(cost_value_loss)
            stats.penalty += float(penalty)
            stats.entropy += float(entropy)
            stats.minibatches += 1

    if stats.minibatches:
        for name in ("policy_loss", "value_loss", "cost_value_loss", "penalty", "entropy"):
            setattr(stats, name, getattr(stats, name) / stats.minibatches)
    return stats


class RolloutCollector:
    """Steps a fixed set of environments with the current policy.

    Environment ``i`` is reset with ``seeds[i]`` once and draws its action noise from its own generator, so its
    trajectory does not depend on how many environments run next to it. Episodes restart automatically.
    """

    def __init__(self, envs: Sequence[gymnasium.Env], seeds: Sequence[int], gamma: float, lam: float):
        if len(envs) != len(seeds):
            raise ValueError(f"Got {len(seeds)} seeds for {len(envs)} environments")
        self.envs = list(envs)
        self.gamma = gamma
        self.lam = lam
        self._generators = [torch.Generator().manual_seed(int(seed)) for seed in seeds]
        self._observations = [env.reset(seed=int(seed))[0] for env, seed in zip(self.envs, seeds)]
        self._episode_return = np.zeros(len(self.envs))
        self._episode_costs: List[Optional[np.ndarray]] = [None] * len(self.envs)
        self._episode_step = np.zeros(len(self.envs), dtype=int)

    def _finish_episode(self, i: int, info: Dict, stats: EpisodeStats) -> None:
        stats.returns.append(float(self._episode_return[i]))
        stats.discounted_costs.append(self._episode_costs[i].copy())
        stats.successes.append(bool(info.get("success", False)))
        stats.outcomes.append(info.get("outcome"))
        self._episode_return[i] = 0.0
        self._episode_costs[i] = None
        self._episode_step[i] = 0

    def collect(self, model: ActorCritic, horizon: int) -> Tuple[RolloutBatch, EpisodeStats]:
        dtype = next(model.parameters()).dtype
        n_envs = len(self.envs)
        stats = EpisodeStats()
        observations, actions, logprobs, rewards, costs, dones, values, cost_values = ([] for _ in range(8))

        model.eval()
        for _ in range(horizon):
            obs = torch.as_tensor(np.stack(self._observations), dtype=dtype)
            step = model.act(obs, self._generators)
            rewards_t, costs_t, dones_t = np.zeros(n_envs), [], np.zeros(n_envs)
            for i, env in enumerate(self.envs):
                next_obs, reward, terminated, truncated, info = env.step(step.actions[i].cpu().numpy())
                cost = np.asarray(info["costs"], dtype=np.float64)
                discount = self.gamma ** self._episode_step[i]
                self._episode_return[i] += reward
                previous = self._episode_costs[i]
                self._episode_costs[i] = discount * cost if previous is None else previous + discount * cost
                self._episode_step[i] += 1

                if truncated and not terminated:
                    with torch.no_grad():
                        v, vc = model.values(torch.as_tensor(next_obs, dtype=dtype).reshape(1, -1))
                    reward = reward + self.gamma * float(v[0])
                    cost = cost + self.gamma * vc[0].cpu().numpy().astype(np.float64)
                rewards_t[i], dones_t[i] = reward, float(terminated or truncated)
                costs_t.append(cost)
                if terminated or truncated:
                    self._finish_episode(i, info, stats)
                    next_obs, _ = env.reset()
                self._observations[i] = next_obs

            observations.append(obs)
            actions.append(step.actions)
            logprobs.append(step.logprobs)
            values.append(step.values.cpu().numpy())
            cost_values.append(step.cost_values.cpu().numpy())
            rewards.append(rewards_t)
            costs.append(np.stack(costs_t))
            dones.append(dones_t)

        with torch.no_grad():
            last_v, last_vc = model.values(torch.as_tensor(np.stack(self._observations), dtype=dtype))
        values.append(last_v.cpu().numpy())
        cost_values.append(last_vc.cpu().numpy())

        rewards, costs, dones = np.stack(rewards), np.stack(costs), np.stack(dones)
        advantages, returns = gae(rewards, np.stack(values), dones, self.gamma, self.lam)
        cost_advantages, cost_returns = gae(costs, np.stack(cost_values), dones, self.gamma, self.lam)

        def flat(x) -> torch.Tensor:
            # (T, n_envs, ...) -> (n_envs * T, ...), env-major
            x = torch.as_tensor(x)
            return x.transpose(0, 1).reshape(n_envs * horizon, *x.shape[2:]).to(dtype)

        batch = RolloutBatch(
            observations=flat(torch.stack(observations)),
            actions=flat(torch.stack(actions)),
            logprobs=flat(torch.stack(logprobs)),
            rewards=flat(rewards),
            costs=flat(costs),
            dones=flat(dones),
            advantages=flat(advantages),
            returns=flat(returns),
            cost_advantages=flat(cost_advantages),
            cost_returns=flat(cost_returns),
        )
        return batch, stats


def collect_rollouts(
    model: ActorCritic, envs: Sequence[gymnasium.Env], horizon: int, seeds: Sequence[int], gamma: float, lam: float
) -> Tuple[RolloutBatch, EpisodeStats]:
    return RolloutCollector(envs, seeds, gamma, lam).collect(model, horizon)


@dataclass
class EvaluationResult:
    success_rate: float
    mean_return: float
    discounted_costs: np.ndarray
    outcomes: List[Optional[TrialOutcome]]


def evaluate_policy(
    model: ActorCritic, env: gymnasium.Env, seeds: Sequence[int], gamma: float, max_steps: int = 10000
) -> EvaluationResult:
    """Runs one deterministic episode per seed."""
    dtype = next(model.parameters()).dtype
    model.eval()
    stats = EpisodeStats()
    for seed in seeds:
        observation, info = env.reset(seed=int(seed))
        episode_return, discounted, discount = 0.0, None, 1.0
        for _ in range(max_steps):
            step = model.act(torch.as_tensor(observation, dtype=dtype).reshape(1, -1), deterministic=True)
            observation, reward, terminated, truncated, info = env.step(step.actions[0].cpu().numpy())
            cost = discount * np.asarray(info["costs"], dtype=np.float64)
            discounted = cost if discounted is None else discounted + cost
            episode_return += reward
            discount *= gamma
            if terminated or truncated:
                break
        stats.returns.append(episode_return)
        stats.discounted_costs.append(discounted)
        stats.successes.append(bool(info.get("success", False)))
        stats.outcomes.append(info.get("outcome"))
    return EvaluationResult(
        stats.success_rate, stats.mean_return, np.mean(stats.discounted_costs, axis=0), stats.outcomes
    )


PROGRESS_FILENAME = "progress.csv"


class P3OTrainer:
    """Alternates rollout collection and penalized PPO updates, writing a progress CSV and checkpoints."""

    def __init__(
        self,
        model: ActorCritic,
        envs: Sequence[gymnasium.Env],
        cfg: CmdpConfig,
        seed: int,
        save_path: Optional[str] = None,
        warmup_updates: int = 0,
        checkpoint_every: int = 0,
        config: Optional[DictConfig] = None,
    ):
        self.model = model
        self.cfg = cfg
        self.save_path = save_path
        self.checkpoint_every = checkpoint_every
        self._config = config
        self._warmup_updates = warmup_updates
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        self.generator = torch.Generator().manual_seed(seed)
        seeds = [seed * 1000 + i for i in range(len(envs))]
        self.collector = RolloutCollector(envs, seeds, cfg.gamma, cfg.lam)
        self.history: List[Dict[str, float]] = []
        self._aborted_in_a_row = 0
        self.metrics_logger: Optional[Logger] = None
        if config is not None and save_path is not None:
            self.metrics_logger = training_logger(config, save_path, "policy")

    @staticmethod
    def from_config(
        model: ActorCritic, envs: Sequence[gymnasium.Env], config: DictConfig, save_path: Optional[str] = None
    ) -> "P3OTrainer":
        return P3OTrainer(
            model,
            envs,
            CmdpConfig.from_config(config.rl),
            seed=config.training.seed,
            save_path=save_path,
            warmup_updates=config.rl.warmup_updates,
            checkpoint_every=config.rl.checkpoint_every,
            config=config,
        )

    def _progress_fields(self) -> List[str]:
        return ["update", "mean_reward", *[f"J_C{i + 1}" for i in range(self.cfg.n_costs)], "success_rate"]

    def _save(self, directory: str) -> None:
        self.model.save_pretrained(directory)
        if self._config is not None:
            OmegaConf.save(self._config, os.path.join(directory, "config.yaml"))

    def train(self, updates: int) -> List[Dict[str, float]]:
        scheduler = get_linear_schedule_with_warmup(self.optimizer, self._warmup_updates, updates)
        progress = None
        if self.save_path is not None:
            os.makedirs(self.save_path, exist_ok=True)
            progress_file = open(os.path.join(self.save_path, PROGRESS_FILENAME), "w", newline="")
            progress = csv.DictWriter(progress_file, fieldnames=self._progress_fields())
            progress.writeheader()

        try:
            for update in tqdm(range(1, updates + 1), desc="P3O updates"):
                batch, episodes = self.collector.collect(self.model, self.cfg.rollout_steps)
                self.model.train()
                stats = p3o_update(self.model, self.optimizer, batch, self.cfg, self.generator)
                scheduler.step()
                if stats.aborted:
                    self._aborted_in_a_row += 1
                    if self._aborted_in_a_row >= 3:
                        raise TrainingError(f"Three consecutive aborted updates, last at update {update}")
                    continue
                self._aborted_in_a_row = 0

                row = {"update": update, "mean_reward": float(batch.rewards.mean())}
                row.update({f"J_C{i + 1}": c for i, c in enumerate(stats.cost_estimates)})
                row["success_rate"] = episodes.success_rate
                self.history.append(row)
                if progress is not None:
                    progress.writerow(row)
                    progress_file.flush()
                if self.metrics_logger is not None:
                    self.metrics_logger.log_metrics({k: v for k, v in row.items() if k != "update"}, step=update)
                if self.save_path is not None and self.checkpoint_every and update % self.checkpoint_every == 0:
                    self._save(os.path.join(self.save_path, f"checkpoint-{update}"))
        finally:
            if progress is not None:
                progress_file.close()
            if self.metrics_logger is not None:
                self.metrics_logger.finalize("success")

        if self.save_path is not None:
            self._save(self.save_path)
        return self.history

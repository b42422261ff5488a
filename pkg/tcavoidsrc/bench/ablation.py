import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from omegaconf import DictConfig

from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.common.types import TrialOutcome
from tcavoidsrc.perception.model import CollidableRegionNet
from tcavoidsrc.rl.env import ReachEnv
from tcavoidsrc.rl.observations import OBSERVATION_KINDS, FusedMemoryObservation, build_observation
from tcavoidsrc.rl.policy import ActorCritic
from tcavoidsrc.rl.ppo import P3OTrainer, evaluate_policy
from tcavoidsrc.rl.pretrain import collect_nominal_dataset, pretrain_encoder

logger = logging.getLogger(__name__)

# Label source of the pretraining run behind each encoder-based variant
ENCODER_LABELS = {"ours": "collidable", "pretrained_ae": "input"}


@dataclass(frozen=True)
class AblationRow:
    variant: str
    episodes: int
    success_rate: float
    collision_rate: float
    tool_violation_rate: float
    mean_return: float
    over_filtered: int

    def as_row(self) -> Dict[str, object]:
        return dict(self.__dict__)


def _rate(outcomes: Sequence[Optional[TrialOutcome]], outcome: TrialOutcome) -> float:
    return 100.0 * sum(o is outcome for o in outcomes) / max(len(outcomes), 1)


def pretrain_variant_encoder(
    config: DictConfig, variant: str, save_path: Optional[str] = None
) -> Optional[CollidableRegionNet]:
    """Encoder for the latent variants, ``None`` for the variants that consume grids directly."""
    if variant not in ENCODER_LABELS:
        return None
    samples = collect_nominal_dataset(config, seed=config.training.seed, label_source=ENCODER_LABELS[variant])
    return pretrain_encoder(config, samples, save_path)


def run_variant(
    config: DictConfig,
    variant: str,
    updates: int,
    eval_seeds: Sequence[int],
    model: Optional[CollidableRegionNet] = None,
    save_path: Optional[str] = None,
) -> AblationRow:
    if variant not in OBSERVATION_KINDS:
        raise ConfigError(f"Unknown ablation variant {variant!r}, expected one of {OBSERVATION_KINDS}")
    perception_path = None if save_path is None else os.path.join(save_path, "perception")
    policy_path = None if save_path is None else os.path.join(save_path, "policy")
    if model is None:
        model = pretrain_variant_encoder(config, variant, perception_path)

    envs = [ReachEnv(config, build_observation(config, variant, model)) for _ in range(config.rl.n_envs)]
    policy = ActorCritic.from_config(config, variant)
    P3OTrainer.from_config(policy, envs, config, policy_path).train(updates)

    builder = build_observation(config, variant, model, noisy=True)
    result = evaluate_policy(policy, ReachEnv(config, builder), eval_seeds, config.rl.gamma, config.rl.episode_steps)
    row = AblationRow(
        variant=variant,
        episodes=len(eval_seeds),
        success_rate=_rate(result.outcomes, TrialOutcome.SUCCESS),
        collision_rate=_rate(result.outcomes, TrialOutcome.COLLISION),
        tool_violation_rate=_rate(result.outcomes, TrialOutcome.TOOL_VIOLATION),
        mean_return=float(result.mean_return),
        over_filtered=builder.over_filtered if isinstance(builder, FusedMemoryObservation) else 0,
    )
    logger.info(
        "%s: success %.1f%%, collision %.1f%%, tool violation %.1f%%",
        variant,
        row.success_rate,
        row.collision_rate,
        row.tool_violation_rate,
    )
    return row


def run_ablation(
    config: DictConfig,
    variants: Optional[Sequence[str]] = None,
    updates: Optional[int] = None,
    episodes: Optional[int] = None,
    models: Optional[Dict[str, CollidableRegionNet]] = None,
    save_path: Optional[str] = None,
) -> List[AblationRow]:
    """Trains one policy per scene representation with the same update budget and evaluates all of them on
    the same seed set."""
    variants = OBSERVATION_KINDS if variants is None else variants
    for variant in variants:
        if variant not in OBSERVATION_KINDS:
            raise ConfigError(f"Unknown ablation variant {variant!r}, expected one of {OBSERVATION_KINDS}")
    bench = config.bench
    updates = bench.ablation_updates if updates is None else updates
    episodes = bench.eval_episodes if episodes is None else episodes
    eval_seeds = [int(bench.eval_seed + i) for i in range(episodes)]
    models = models or {}

    rows = []
    for variant in variants:
        variant_path = None if save_path is None else os.path.join(save_path, variant)
        rows.append(run_variant(config, variant, updates, eval_seeds, models.get(variant), variant_path))
    return rows

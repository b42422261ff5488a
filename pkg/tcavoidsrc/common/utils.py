import argparse
import difflib
import functools
import logging
import os
from typing import Optional

from omegaconf import DictConfig, OmegaConf
from pytorch_lightning.loggers import CSVLogger, Logger, WandbLogger
from torch.optim import Optimizer
from torch.optim.lr_scheduler import LambdaLR

from tcavoidsrc.common.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIGS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
DEFAULT_CONFIG_PATH = os.path.join(CONFIGS_DIR, "config_desk.yaml")
SUPPORTED_CONFIG_VERSION = 1


def load_config(path: str) -> DictConfig:
    # YAML is a superset of JSON, so versioned JSON configs go through the same loader
    config = OmegaConf.load(path)
    version = config.get("version", None)
    if version != SUPPORTED_CONFIG_VERSION:
        raise ValueError(f"Unsupported config version {version} in {path}, expected {SUPPORTED_CONFIG_VERSION}")
    return config


def builtin_config(name: str = "desk") -> DictConfig:
    return load_config(os.path.join(CONFIGS_DIR, f"config_{name}.yaml"))


def setup_logging(level: int = logging.INFO) -> None:
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def build_arg_parser(default_config_path: str = DEFAULT_CONFIG_PATH) -> argparse.ArgumentParser:
    args = argparse.ArgumentParser()
    args.add_argument("--config", default=default_config_path, type=str, help="Path to YAML/JSON config")
    args.add_argument("--seed", default=None, type=int, help="Overrides training.seed")
    args.add_argument("--out", default=None, type=str, help="Overrides save_path")
    return args


def apply_overrides(config: DictConfig, seed: Optional[int], out: Optional[str]) -> DictConfig:
    if seed is not None:
        config.training.seed = seed
    if out is not None:
        config.save_path = out
    return config


def log_config_diff(stored: DictConfig, current: DictConfig) -> bool:
    if stored == current:
        return False
    lines = [
        f"    {text}"
        for text in difflib.unified_diff(OmegaConf.to_yaml(stored).split("\n"), OmegaConf.to_yaml(current).split("\n"))
        if text[:3] not in ("+++", "---", "@@ ")
    ]
    logger.warning("Loaded config doesn't match current config! Diff:\n%s", "\n".join(lines))
    return True


def _linear_with_warmup(current_step: int, num_warmup_steps: int, num_training_steps: int):
    """Learning-rate factor: ramps from 0 to 1 over the warmup updates, then decays linearly to 0 at the last one."""
    if current_step < num_warmup_steps:
        return float(current_step) / float(max(1, num_warmup_steps))
    return max(0.0, float(num_training_steps - current_step) / float(max(1, num_training_steps - num_warmup_steps)))


def get_linear_schedule_with_warmup(
    optimizer: Optimizer, num_warmup_steps: int, num_training_steps: int, last_epoch: int = -1
):
    """Warmup-then-linear-decay schedule shared by encoder pretraining (per batch) and P3O (per update)."""
    return LambdaLR(
        optimizer,
        functools.partial(
            _linear_with_warmup, num_warmup_steps=num_warmup_steps, num_training_steps=num_training_steps
        ),
        last_epoch,
    )


def training_logger(config: DictConfig, save_path: str, name: str) -> Logger:
    """Lightning metrics logger selected by ``training.logger``; wandb runs offline under ``save_path``."""
    if config.training.logger == "wandb":
        return WandbLogger(project="tcavoid", name=name, save_dir=save_path, offline=True)
    if config.training.logger == "csv":
        return CSVLogger(save_path, name=name)
    raise ConfigError(f"Unknown training logger {config.training.logger!r}, expected csv or wandb")

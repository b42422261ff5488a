import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pytorch_lightning as pl
import torch
import torch.nn.functional as F
from omegaconf import DictConfig, OmegaConf
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.common.utils import get_linear_schedule_with_warmup, training_logger
from tcavoidsrc.control.constraints import BODY_COLLISION, TOOL_VIOLATION
from tcavoidsrc.control.controller import ControllerSettings, nominal_step
from tcavoidsrc.perception.model import CollidableRegionNet, build_grid_input, build_proprio
from tcavoidsrc.perception.observation import Label, make_training_labels
from tcavoidsrc.rl.env import ReachEnv
from tcavoidsrc.rl.metrics import VoxelIoU
from tcavoidsrc.rl.observations import FusedMemoryObservation, SensorRig
from tcavoidsrc.safety.critic import safety_critic_loss

logger = logging.getLogger(__name__)

LABEL_SOURCES = ("collidable", "input")


@dataclass(eq=False)
class PerceptionSamples:
    """Frames of nominal-controller rollouts.

    ``next_index[i]`` is the frame after ``i`` in the same episode; ``terminal`` frames have no successor.
    ``costs`` holds the (body, tool) violation indicators of the transition leaving each frame.
    """

    grids: np.ndarray
    proprio: np.ndarray
    labels: np.ndarray
    costs: np.ndarray
    next_index: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return len(self.grids)


def _frame(env: ReachEnv, builder: FusedMemoryObservation, label_source: str):
    grid = build_grid_input(builder.last_observation, builder.last_prior)
    command = env.command
    proprio = build_proprio(env.q_history, command.target, command.tool, command.mode)
    if label_source == "input":
        label = builder.last_observation.mask(Label.OCCUPIED).astype(np.float32)
    else:
        label = make_training_labels(env.scene).cells
    return grid, proprio, label


def collect_nominal_dataset(
    config: DictConfig, seed: int, episodes: Optional[int] = None, label_source: Optional[str] = None
) -> PerceptionSamples:
    """Drives the nominal IK controller through random scenarios and records encoder training frames.

    The previous-prediction channel of every frame is the fused occupancy memory before that frame.
    """
    episodes = config.pretraining.episodes if episodes is None else episodes
    label_source = config.pretraining.label_source if label_source is None else label_source
    if label_source not in LABEL_SOURCES:
        raise ConfigError(f"Unknown label source {label_source!r}, expected one of {LABEL_SOURCES}")

    builder = FusedMemoryObservation(
        SensorRig.from_config(config), config.perception, len(config.chain.joint_axes)
    )
    env = ReachEnv(config, builder)
    settings = ControllerSettings.from_config(config)

    frames: List = []
    costs: List[np.ndarray] = []
    next_index: List[int] = []
    terminal: List[bool] = []
    for episode in tqdm(range(episodes), desc="Nominal rollouts"):
        env.reset(seed=seed + episode)
        for step in range(config.pretraining.episode_steps):
            frames.append(_frame(env, builder, label_source))
            _, _, terminated, truncated, info = env.advance(nominal_step(env.chain, env.q, env.command, settings))
            costs.append(info["costs"][[BODY_COLLISION, TOOL_VIOLATION]].astype(np.float32))
            next_index.append(len(frames))
            terminal.append(terminated)
            if terminated or truncated:
                break
        if not terminal[-1]:
            # Close the episode with the state after the last step so every successor exists
            frames.append(_frame(env, builder, label_source))
            costs.append(np.zeros(2, dtype=np.float32))
            next_index.append(len(frames) - 1)
            terminal.append(True)
        else:
            next_index[-1] = len(frames) - 1

    grids, proprio, labels = (np.stack(x) for x in zip(*frames))
    logger.info("Collected %d frames from %d episodes", len(grids), episodes)
    return PerceptionSamples(
        grids=grids.astype(np.float32),
        proprio=proprio.astype(np.float32),
        labels=labels.astype(np.float32),
        costs=np.stack(costs),
        next_index=np.asarray(next_index, dtype=np.int64),
        terminal=np.asarray(terminal, dtype=bool),
    )


class PerceptionDataset(Dataset):
    def __init__(self, samples: PerceptionSamples, indices: np.ndarray):
        self._samples = samples
        self._indices = indices

    def __len__(self) -> int:
        return len(self._indices)

    def __getitem__(self, item: int) -> Dict[str, torch.Tensor]:
        samples, i = self._samples, self._indices[item]
        j = samples.next_index[i]
        return {
            "grid": torch.from_numpy(samples.grids[i]),
            "proprio": torch.from_numpy(samples.proprio[i]),
            "label": torch.from_numpy(samples.labels[i]),
            "costs": torch.from_numpy(samples.costs[i]),
            "next_grid": torch.from_numpy(samples.grids[j]),
            "next_proprio": torch.from_numpy(samples.proprio[j]),
            "terminal": torch.tensor(samples.terminal[i]),
        }


class PerceptionDataModule(pl.LightningDataModule):
    def __init__(self, config: DictConfig, samples: PerceptionSamples):
        super().__init__()
        self._config = config
        self._samples = samples
        self._train: Optional[PerceptionDataset] = None
        self._val: Optional[PerceptionDataset] = None

    def setup(self, stage: Optional[str] = None) -> None:
        n = len(self._samples)
        order = np.random.default_rng(self._config.training.seed).permutation(n)
        n_val = int(round(n * self._config.pretraining.val_fraction))
        # An empty validation split scores the training frames
        self._val = PerceptionDataset(self._samples, order[:n_val] if n_val else order)
        self._train = PerceptionDataset(self._samples, order[n_val:])

    def _loader(self, dataset: PerceptionDataset, shuffle: bool) -> DataLoader:
        batch_size = self._config.pretraining.batch_size
        return DataLoader(
            dataset,
            batch_size,
            shuffle=shuffle,
            num_workers=self._config.training.num_workers,
            drop_last=shuffle and len(dataset) > batch_size,
        )

    def train_dataloader(self) -> DataLoader:
        return self._loader(self._train, shuffle=True)

    def val_dataloader(self) -> DataLoader:
        return self._loader(self._val, shuffle=False)


class CollidableRegionModule(pl.LightningModule):
    """Decoder BCE against the labels plus safety-head BCE against Bellman targets bootstrapped from the next frame."""

    def __init__(self, config: DictConfig, model: CollidableRegionNet) -> None:
        super().__init__()
        self._config = config
        self._model = model
        self._val_iou = VoxelIoU()

    @property
    def model(self) -> CollidableRegionNet:
        return self._model

    def _losses(self, batch: Dict[str, torch.Tensor]):
        _, logits, safety_logits = self._model(batch["grid"], batch["proprio"])
        decoder_loss = F.binary_cross_entropy_with_logits(logits, batch["label"])
        with torch.no_grad():
            _, _, next_logits = self._model(batch["next_grid"], batch["next_proprio"])
        safety_loss = safety_critic_loss(
            safety_logits, batch["costs"], next_logits, batch["terminal"], self._config.safety.gamma
        )
        return logits, decoder_loss, safety_loss

    def training_step(self, batch, batch_idx) -> torch.Tensor:
        _, decoder_loss, safety_loss = self._losses(batch)
        loss = decoder_loss + safety_loss
        self.log("train/decoder_loss", decoder_loss.detach(), on_step=True, logger=True)
        self.log("train/safety_loss", safety_loss.detach(), on_step=True, logger=True)
        self.log("train_loss", loss.detach(), on_step=True, prog_bar=True, logger=True)
        return loss

    def validation_step(self, batch, batch_idx) -> None:
        logits, decoder_loss, safety_loss = self._losses(batch)
        self._val_iou.update(torch.sigmoid(logits), batch["label"])
        self.log("val/decoder_loss", decoder_loss, on_step=False, on_epoch=True)
        self.log("val/safety_loss", safety_loss, on_step=False, on_epoch=True)

    def on_validation_epoch_end(self) -> None:
        self.log_dict({f"val/{k}": v for k, v in self._val_iou.compute().items()}, on_step=False, on_epoch=True)
        self._val_iou.reset()

    def configure_optimizers(self):
        optimizer = torch.optim.Adam(self.parameters(), lr=self._config.pretraining.lr)
        num_batches_epoch = len(self.trainer.datamodule.train_dataloader())
        total_steps = num_batches_epoch * self._config.pretraining.epochs
        scheduler = get_linear_schedule_with_warmup(
            optimizer, num_training_steps=total_steps, num_warmup_steps=self._config.pretraining.warmup_steps
        )
        return {"optimizer": optimizer, "lr_scheduler": {"scheduler": scheduler, "interval": "step", "frequency": 1}}


def pretrain_encoder(
    config: DictConfig,
    samples: Optional[PerceptionSamples] = None,
    save_path: Optional[str] = None,
    epochs: Optional[int] = None,
) -> CollidableRegionNet:
    """Fits the encoder-decoder and its safety heads on nominal rollouts; the model is saved when a path is given."""
    pl.seed_everything(config.training.seed)
    if samples is None:
        samples = collect_nominal_dataset(config, seed=config.training.seed)

    model = CollidableRegionNet.from_config(config)
    module = CollidableRegionModule(config, model)
    datamodule = PerceptionDataModule(config, samples)
    log_dir = save_path or config.save_path

    trainer = pl.Trainer(
        max_epochs=config.pretraining.epochs if epochs is None else epochs,
        accelerator="cpu",
        deterministic=True,
        logger=training_logger(config, log_dir, "perception"),
        enable_checkpointing=False,
        enable_model_summary=False,
        log_every_n_steps=1,
    )
    trainer.fit(module, datamodule=datamodule)
    model.eval()

    if save_path is not None:
        model.save_pretrained(save_path)
        OmegaConf.save(config, os.path.join(save_path, "config.yaml"))
    return model

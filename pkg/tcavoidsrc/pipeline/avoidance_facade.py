import logging
import os
from typing import List, Optional

from omegaconf import DictConfig, OmegaConf

from tcavoidsrc.common.errors import ConfigError
from tcavoidsrc.common.utils import log_config_diff
from tcavoidsrc.control.controller import ControllerSettings, HybridController
from tcavoidsrc.kinematics.chain import SerialChain
from tcavoidsrc.perception.camera import CameraModel
from tcavoidsrc.perception.model import CollidableRegionNet
from tcavoidsrc.rl.env import ReachEnv
from tcavoidsrc.rl.observations import ObservationBuilder, build_observation
from tcavoidsrc.rl.policy import ActorCritic, TorchPolicy
from tcavoidsrc.rl.ppo import P3OTrainer
from tcavoidsrc.rl.pretrain import pretrain_encoder
from tcavoidsrc.world.scene import Workspace

logger = logging.getLogger(__name__)

# Observation kinds that go through the pretrained encoder
LATENT_KINDS = ("ours", "pretrained_ae")


class AvoidanceFacade:
    """Owns the config and the trained artifacts stored under ``config.save_path``.

    Layout of a trained directory: ``config.yaml``, ``perception/`` with the encoder checkpoint and ``policy/``
    with the actor-critic checkpoint and the training progress.
    """

    _config_filename = "config.yaml"
    _perception_dir = "perception"
    _policy_dir = "policy"

    def __init__(self, config: DictConfig, diff_warning: bool = True):
        self._config = config
        self.chain = SerialChain.from_config(config.chain)
        self.workspace = Workspace.from_config(config.workspace)
        self.camera = CameraModel.from_config(config.camera)

        path = config.save_path
        self._perception: Optional[CollidableRegionNet] = None
        self._policy: Optional[ActorCritic] = None
        if CollidableRegionNet.pretrained_exists(self.perception_path):
            self._perception = CollidableRegionNet.from_pretrained(self.perception_path, config)
        if ActorCritic.pretrained_exists(self.policy_path):
            self._policy = ActorCritic.from_pretrained(self.policy_path, config)

        config_path = os.path.join(path, AvoidanceFacade._config_filename)
        if diff_warning and os.path.exists(config_path):
            log_config_diff(OmegaConf.load(config_path), config)

    @property
    def config(self) -> DictConfig:
        return self._config

    @property
    def perception_path(self) -> str:
        return os.path.join(self._config.save_path, AvoidanceFacade._perception_dir)

    @property
    def policy_path(self) -> str:
        return os.path.join(self._config.save_path, AvoidanceFacade._policy_dir)

    @property
    def needs_perception(self) -> bool:
        return self._config.rl.observation in LATENT_KINDS

    @property
    def perception(self) -> Optional[CollidableRegionNet]:
        return self._perception

    @property
    def policy(self) -> Optional[ActorCritic]:
        return self._policy

    @property
    def is_trained(self) -> bool:
        return self._policy is not None and (self._perception is not None or not self.needs_perception)

    @staticmethod
    def pretrained_exists(path: str) -> bool:
        return os.path.exists(os.path.join(path, AvoidanceFacade._config_filename)) and ActorCritic.pretrained_exists(
            os.path.join(path, AvoidanceFacade._policy_dir)
        )

    def _save_config(self) -> None:
        os.makedirs(self._config.save_path, exist_ok=True)
        OmegaConf.save(self._config, os.path.join(self._config.save_path, AvoidanceFacade._config_filename))

    def train_perception(self, epochs: Optional[int] = None) -> CollidableRegionNet:
        self._perception = pretrain_encoder(self._config, save_path=self.perception_path, epochs=epochs)
        self._save_config()
        return self._perception

    def make_observation(self, noisy: bool = True) -> ObservationBuilder:
        if self.needs_perception and self._perception is None:
            raise ConfigError(f"Observation kind {self._config.rl.observation!r} needs a trained perception model")
        return build_observation(self._config, model=self._perception, noisy=noisy)

    def make_envs(self, n_envs: Optional[int] = None) -> List[ReachEnv]:
        n_envs = self._config.rl.n_envs if n_envs is None else n_envs
        return [ReachEnv(self._config, self.make_observation()) for _ in range(n_envs)]

    def train_policy(self, updates: Optional[int] = None) -> ActorCritic:
        updates = self._config.rl.updates if updates is None else updates
        policy = ActorCritic.from_config(self._config)
        trainer = P3OTrainer.from_config(policy, self.make_envs(), self._config, self.policy_path)
        trainer.train(updates)
        self._policy = policy.eval()
        self._save_config()
        return self._policy

    def make_hybrid_controller(self, rl_only: bool = False) -> HybridController:
        if self._policy is None:
            raise ConfigError(f"No trained policy under {self.policy_path}")
        return HybridController(
            self.chain, TorchPolicy(self._policy), ControllerSettings.from_config(self._config), rl_only=rl_only
        )

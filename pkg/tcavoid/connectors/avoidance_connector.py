import dataclasses
import logging
import os
from typing import Optional, Tuple

import numpy as np
from omegaconf import OmegaConf

from tcavoid.connectors.connector_base import Connector
from tcavoid.connectors.settings import ControlSettings
from tcavoidsrc.common.errors import ConfigError, ContractError
from tcavoidsrc.control.controller import Command, ControllerSettings, HybridController, HybridOutput, hybrid_step
from tcavoidsrc.perception.camera import depth_to_cloud
from tcavoidsrc.perception.handoff import LatestSlot
from tcavoidsrc.perception.model import PerceptionOutput, build_proprio, initial_prediction
from tcavoidsrc.perception.observation import voxelize_observation
from tcavoidsrc.pipeline.avoidance_facade import LATENT_KINDS, AvoidanceFacade
from tcavoidsrc.rl.policy import TorchPolicy

logger = logging.getLogger(__name__)


class AvoidanceConnector(Connector):
    """Runtime entry point: maps (joint state, latest depth frame, command) to the next joint target.

    Depth frames may be submitted from a camera thread; each control step encodes the newest frame and feeds
    the decoded prediction back as the previous-prediction channel of the next frame.
    """

    def __init__(self, path: str):
        config_path = AvoidanceConnector._get_config_path(path)
        config = OmegaConf.load(config_path)
        config.save_path = path

        self._facade = AvoidanceFacade(config, diff_warning=False)
        if not self._facade.is_trained:
            raise ConfigError(f"No trained model under {path}")
        if config.rl.observation not in LATENT_KINDS:
            raise ConfigError(f"The connector needs an encoder-based policy, got {config.rl.observation!r}")
        self._config = config
        self._slot: LatestSlot[np.ndarray] = LatestSlot()
        self._controller: Optional[HybridController] = None
        self._controller_key: Optional[Tuple] = None
        self._prev = initial_prediction(self._facade.workspace)
        self._output: Optional[PerceptionOutput] = None
        self._seen_version = 0
        self.last_output: Optional[HybridOutput] = None

    @property
    def facade(self) -> AvoidanceFacade:
        return self._facade

    def submit_depth(self, depth: np.ndarray) -> int:
        camera = self._facade.camera
        if depth.shape != (camera.height, camera.width):
            raise ValueError(f"Expected a depth image of shape {(camera.height, camera.width)}, got {depth.shape}")
        return self._slot.put(np.array(depth, dtype=np.float64))

    def reset(self, q0: np.ndarray) -> None:
        self._prev = initial_prediction(self._facade.workspace)
        self._output = None
        self._seen_version = self._slot.version
        if self._controller is not None:
            self._controller.reset(q0)

    def _controller_for(self, settings: ControlSettings, q: np.ndarray) -> HybridController:
        key = (settings.rl_only, settings.threshold, settings.hysteresis)
        if self._controller is None or key != self._controller_key:
            base = ControllerSettings.from_config(self._config)
            overrides = {"threshold": settings.threshold, "hysteresis": settings.hysteresis}
            base = dataclasses.replace(base, **{k: v for k, v in overrides.items() if v is not None})
            self._controller = HybridController(
                self._facade.chain, TorchPolicy(self._facade.policy), base, rl_only=settings.rl_only
            )
            self._controller.reset(q)
            self._controller_key = key
        return self._controller

    def _perceive(self, history: np.ndarray, command: Command) -> PerceptionOutput:
        facade = self._facade
        depth, version = self._slot.get()
        if depth is None:
            raise ContractError("No depth frame submitted yet")
        if version == self._seen_version and self._output is not None:
            return self._output
        observation = voxelize_observation(
            depth_to_cloud(facade.camera, depth),
            facade.camera,
            facade.workspace,
            self._config.perception.carve_step,
        )
        proprio = build_proprio(history, command.target, command.tool, command.mode)
        self._output = facade.perception.encode(observation, self._prev, proprio)
        self._prev = self._output.predicted_occupancy.cells
        self._seen_version = version
        return self._output

    def get_joint_target(
        self, q: np.ndarray, command: Command, settings: ControlSettings = ControlSettings()
    ) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        controller = self._controller_for(settings, q)
        history = np.concatenate([controller.state.history_array()[1:], q[None]])
        if not settings.reuse_stale_perception:
            self._output = None
        output = self._perceive(history, command)
        self.last_output = hybrid_step(controller, q, output, command)
        return self.last_output.q_des

    def cancel(self):
        self._slot.put(None)
        self._output = None

    @staticmethod
    def _get_config_path(path: str) -> str:
        assert os.path.exists(path) and not os.path.isfile(path), f"{path} is not a directory"
        return os.path.join(path, "config.yaml")

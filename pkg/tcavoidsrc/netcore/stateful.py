import os
from abc import ABC, abstractmethod

from omegaconf import DictConfig

from tcavoidsrc.netcore.checkpoint import load_checkpoint, save_checkpoint


class Stateful(ABC):
    @abstractmethod
    def save_pretrained(self, path: str) -> None:
        pass

    @classmethod
    @abstractmethod
    def from_pretrained(cls, path: str, config: DictConfig) -> "Stateful":
        pass

    @classmethod
    @abstractmethod
    def pretrained_exists(cls, path: str) -> bool:
        pass


class CheckpointStateful(Stateful):
    """Stateful torch module persisted as one checkpoint file; the module is rebuilt from the config on load."""

    checkpoint_filename: str = "model.tcav"

    @classmethod
    @abstractmethod
    def from_config(cls, config: DictConfig) -> "CheckpointStateful":
        pass

    def save_pretrained(self, path: str) -> None:
        os.makedirs(path, exist_ok=True)
        save_checkpoint(os.path.join(path, self.checkpoint_filename), self.state_dict())

    @classmethod
    def from_pretrained(cls, path: str, config: DictConfig) -> "CheckpointStateful":
        module = cls.from_config(config)
        module.load_state_dict(load_checkpoint(os.path.join(path, cls.checkpoint_filename)))
        module.eval()
        return module

    @classmethod
    def pretrained_exists(cls, path: str) -> bool:
        return os.path.exists(os.path.join(path, cls.checkpoint_filename))

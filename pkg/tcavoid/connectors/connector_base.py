from abc import ABC, abstractmethod

import numpy as np

from tcavoid.connectors.settings import ControlSettings
from tcavoidsrc.control.controller import Command


class Connector(ABC):
    @abstractmethod
    def submit_depth(self, depth: np.ndarray) -> int:
        pass

    @abstractmethod
    def get_joint_target(self, q: np.ndarray, command: Command, settings: ControlSettings) -> np.ndarray:
        pass

    @abstractmethod
    def cancel(self):
        pass

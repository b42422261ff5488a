import logging
from typing import NamedTuple

from tcavoidsrc.common.types import ActiveController, InteractionMode

logger = logging.getLogger(__name__)


class SafetyValues(NamedTuple):
    v_body: float
    v_tool: float
    v_max: float


def aggregate(v_body: float, v_tool: float, mode: InteractionMode) -> SafetyValues:
    """Worst-case safety value; the tool region only counts in protective mode."""
    for value in (v_body, v_tool):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"Safety values must lie in [0, 1], got {value}")
    v_max = max(v_body, v_tool) if mode is InteractionMode.PROTECTIVE else v_body
    return SafetyValues(float(v_body), float(v_tool), float(v_max))


def switch_decision(
    v_max: float, state: ActiveController, threshold: float = 0.8, hysteresis: float = 0.1
) -> ActiveController:
    if state is ActiveController.NOMINAL and v_max > threshold:
        return ActiveController.REACTIVE
    if state is ActiveController.REACTIVE and v_max < threshold - hysteresis:
        return ActiveController.NOMINAL
    return state


class SafetySwitch:
    def __init__(self, threshold: float = 0.8, hysteresis: float = 0.1):
        if not 0 <= hysteresis <= threshold:
            raise ValueError(f"Hysteresis must lie in [0, threshold], got {hysteresis}")
        self._threshold = threshold
        self._hysteresis = hysteresis
        self._state = ActiveController.NOMINAL
        self._switches = 0

    @property
    def state(self) -> ActiveController:
        return self._state

    @property
    def switches(self) -> int:
        return self._switches

    def update(self, v_max: float) -> ActiveController:
        state = switch_decision(v_max, self._state, self._threshold, self._hysteresis)
        if state is not self._state:
            self._switches += 1
            logger.debug("Switching %s -> %s at v_max=%.3f", self._state.value, state.value, v_max)
        self._state = state
        return state

    def reset(self) -> None:
        self._state = ActiveController.NOMINAL
        self._switches = 0

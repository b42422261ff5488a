import enum


class InteractionMode(enum.Enum):
    # Engage: the tool may touch the environment. Protective: the tool box is treated as robot body.
    ENGAGE = "engage"
    PROTECTIVE = "protective"

    @property
    def flag(self) -> float:
        return 1.0 if self is InteractionMode.PROTECTIVE else 0.0


class ActiveController(enum.Enum):
    NOMINAL = "nominal"
    REACTIVE = "reactive"


class TrialOutcome(enum.Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    TOOL_VIOLATION = "tool_violation"

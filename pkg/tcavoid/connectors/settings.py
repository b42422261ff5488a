from dataclasses import dataclass
from typing import Optional


@dataclass
class ControlSettings:
    rl_only: bool = False
    # Override the switch parameters stored with the trained model
    threshold: Optional[float] = None
    hysteresis: Optional[float] = None
    # Reuse the last perception output when no new depth frame arrived since the previous step
    reuse_stale_perception: bool = True

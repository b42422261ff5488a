from typing import Any, Dict, Optional

import gymnasium
import numpy as np

from tcavoidsrc.common.errors import ContractError
from tcavoidsrc.common.types import TrialOutcome


class ForbiddenStripEnv(gymnasium.Env):
    """Point mass that must reach a goal lying beyond a thin forbidden strip.

    The straight line from start to goal crosses the strip, so a reward-only policy pays cost every episode while
    a constrained one has to walk around either end. Cost is 1 on every step that ends inside the strip.
    """

    metadata = {"render_modes": []}

    def __init__(
        self,
        start=(0.0, 0.0),
        goal=(0.0, 1.0),
        strip_x=(-0.25, 0.25),
        strip_y=(0.45, 0.55),
        max_step: float = 0.05,
        goal_tolerance: float = 0.05,
        goal_bonus: float = 10.0,
        max_steps: int = 100,
    ):
        super().__init__()
        self.start = np.asarray(start, dtype=np.float64)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.strip_x = strip_x
        self.strip_y = strip_y
        self.max_step = max_step
        self.goal_tolerance = goal_tolerance
        self.goal_bonus = goal_bonus
        self.max_steps = max_steps
        self.low = np.array([-1.0, -0.5])
        self.high = np.array([1.0, 1.5])

        self.action_space = gymnasium.spaces.Box(-max_step, max_step, shape=(2,), dtype=np.float32)
        self.observation_space = gymnasium.spaces.Box(-np.inf, np.inf, shape=(4,), dtype=np.float32)
        self._done = True

    def in_strip(self, position: np.ndarray) -> bool:
        x, y = position
        return self.strip_x[0] <= x <= self.strip_x[1] and self.strip_y[0] <= y <= self.strip_y[1]

    def _observation(self) -> np.ndarray:
        return np.concatenate([self._position, self.goal - self._position]).astype(np.float32)

    def reset(self, *, seed: Optional[int] = None, options: Optional[Dict[str, Any]] = None):
        super().reset(seed=seed)
        self._position = self.start + self.np_random.uniform(-0.02, 0.02, size=2)
        self._steps = 0
        self._done = False
        return self._observation(), {"costs": np.zeros(1), "success": False}

    def step(self, action):
        if self._done:
            raise ContractError("step() called on a finished episode, call reset() first")
        action = np.clip(np.asarray(action, dtype=np.float64), -self.max_step, self.max_step)
        before = np.linalg.norm(self.goal - self._position)
        self._position = np.clip(self._position + action, self.low, self.high)
        after = np.linalg.norm(self.goal - self._position)
        self._steps += 1

        cost = float(self.in_strip(self._position))
        success = bool(after < self.goal_tolerance)
        reward = 10.0 * (before - after) + (self.goal_bonus if success else 0.0)
        truncated = not success and self._steps >= self.max_steps
        self._done = success or truncated

        info = {"costs": np.array([cost]), "success": success}
        if self._done:
            info["outcome"] = TrialOutcome.SUCCESS if success else TrialOutcome.TIMEOUT
        return self._observation(), reward, success, truncated, info

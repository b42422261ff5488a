"""Scripted 1-DOF world with a known violation region, used to check fitted critics against exact values."""
import numpy as np

from tcavoidsrc.safety.critic import SafetyDataset


class LineWorld:
    """Position on a line of cells driven forward by a noisy nominal controller; cells past ``wall`` violate."""

    def __init__(self, n_cells: int = 100, wall: int = 80, p_forward: float = 0.6, p_stay: float = 0.3):
        if not 0 < wall < n_cells:
            raise ValueError(f"Wall must lie inside the line, got {wall}")
        if p_forward + p_stay > 1:
            raise ValueError("Transition probabilities exceed one")
        self.n_cells = n_cells
        self.wall = wall
        self.p_forward = p_forward
        self.p_stay = p_stay
        self.p_back = 1.0 - p_forward - p_stay

    def is_violation(self, cell: int) -> bool:
        return cell >= self.wall

    def costs(self) -> np.ndarray:
        return (np.arange(self.n_cells) >= self.wall).astype(np.float64)

    def transition_matrix(self) -> np.ndarray:
        transitions = np.zeros((self.n_cells, self.n_cells))
        for cell in range(self.n_cells):
            if self.is_violation(cell):
                transitions[cell, cell] = 1.0
                continue
            transitions[cell, min(cell + 1, self.n_cells - 1)] += self.p_forward
            transitions[cell, cell] += self.p_stay
            transitions[cell, max(cell - 1, 0)] += self.p_back
        return transitions

    def step(self, cell: int, rng: np.random.Generator) -> int:
        if self.is_violation(cell):
            return cell
        u = rng.random()
        if u < self.p_forward:
            return min(cell + 1, self.n_cells - 1)
        if u < self.p_forward + self.p_stay:
            return cell
        return max(cell - 1, 0)

    def features(self, cells: np.ndarray) -> np.ndarray:
        return np.eye(self.n_cells, dtype=np.float32)[np.asarray(cells)]

    def collect(self, episodes: int, horizon: int, rng: np.random.Generator) -> SafetyDataset:
        """Rollouts from uniformly random safe cells; a violation ends the episode."""
        states, costs, next_states, terminal = [], [], [], []
        for _ in range(episodes):
            cell = int(rng.integers(0, self.wall))
            for _ in range(horizon):
                following = self.step(cell, rng)
                violation = self.is_violation(cell)
                states.append(cell)
                costs.append(float(violation))
                next_states.append(following)
                terminal.append(violation)
                if violation:
                    break
                cell = following
        return SafetyDataset(
            self.features(states), np.array(costs), self.features(next_states), np.array(terminal)
        )

    def dataset_with_all_cells(self, samples_per_cell: int, rng: np.random.Generator) -> SafetyDataset:
        """One-step transitions from every cell, so every state is covered."""
        cells = np.repeat(np.arange(self.n_cells), samples_per_cell)
        following = np.array([self.step(int(c), rng) for c in cells])
        costs = self.costs()[cells]
        return SafetyDataset(self.features(cells), costs, self.features(following), costs > 0)


import numpy as np
import pytest
import torch

from tcavoidsrc.common.types import ActiveController, InteractionMode
from tcavoidsrc.kinematics.tool_region import ToolRegion
from tcavoidsrc.safety.critic import (
    SafetyCritic,
    SafetyDataset,
    bellman_target,
    fit_safety_critic,
    monte_carlo_safety_value,
    safety_critic_loss,
    safety_targets,
    tabular_value_iteration,
)
from tcavoidsrc.safety.line_world import LineWorld
from tcavoidsrc.safety.proxy import ClearanceSafetyProxy, surface_clearances
from tcavoidsrc.safety.switching import SafetySwitch, aggregate
from tcavoidsrc.world.scene import Scene


def test_bellman_target():
    assert bellman_target(1.0, 0.5, 0.9) == pytest.approx(1.0)
    assert bellman_target(0.0, 0.5, 0.9) == pytest.approx(0.45)
    assert bellman_target(0.0, 0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        bellman_target(0.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        bellman_target(0.0, 1.5, 0.9)


def test_batched_targets_ignore_terminal_successors():
    costs = torch.tensor([[0.0], [1.0], [0.0]])
    next_logits = torch.zeros(3, 1)
    terminal = torch.tensor([False, False, True])
    targets = safety_targets(costs, next_logits, terminal, 0.9)
    torch.testing.assert_close(targets, torch.tensor([[0.45], [1.0], [0.0]]))


def test_critic_loss_regresses_onto_detached_targets():
    logits = torch.zeros(3, 1, requires_grad=True)
    next_logits = torch.zeros(3, 1, requires_grad=True)
    costs = torch.tensor([[0.0], [1.0], [0.0]])
    loss = safety_critic_loss(logits, costs, next_logits, torch.tensor([False, False, True]), 0.9)
    assert loss.item() == pytest.approx(np.log(2))
    loss.backward()
    torch.testing.assert_close(logits.grad, torch.tensor([[0.05], [-0.5], [0.5]]) / 3)
    assert next_logits.grad is None


def test_aggregate_counts_the_tool_only_when_protective():
    assert aggregate(0.2, 0.9, InteractionMode.ENGAGE).v_max == pytest.approx(0.2)
    assert aggregate(0.2, 0.9, InteractionMode.PROTECTIVE).v_max == pytest.approx(0.9)
    with pytest.raises(ValueError):
        aggregate(1.2, 0.0, InteractionMode.ENGAGE)


def test_switch_hysteresis():
    switch = SafetySwitch(threshold=0.8, hysteresis=0.1)
    states = [switch.update(v) for v in (0.85, 0.75, 0.69)]
    assert states == [ActiveController.REACTIVE, ActiveController.REACTIVE, ActiveController.NOMINAL]
    assert switch.switches == 2
    assert switch.update(0.8) is ActiveController.NOMINAL

    switch.reset()
    assert switch.state is ActiveController.NOMINAL and switch.switches == 0
    with pytest.raises(ValueError):
        SafetySwitch(threshold=0.5, hysteresis=0.6)


def test_value_iteration_on_the_line_world():
    world = LineWorld(n_cells=20, wall=15)
    result = tabular_value_iteration(world.transition_matrix(), world.costs(), 0.9)
    values = result.values

    np.testing.assert_allclose(values[world.wall :], 1.0)
    assert np.all(np.diff(values[: world.wall + 1]) >= 0)
    assert 0 < values[0] < values[world.wall - 1] < 1
    assert result.residuals[-1] < 1e-10


def test_value_iteration_validates_its_inputs():
    with pytest.raises(ValueError):
        tabular_value_iteration(np.full((2, 2), 0.4), np.zeros(2), 0.9)
    with pytest.raises(ValueError):
        tabular_value_iteration(np.eye(2), np.zeros(2), 1.0)


def test_monte_carlo_agrees_with_value_iteration():
    world = LineWorld(n_cells=20, wall=15)
    exact = tabular_value_iteration(world.transition_matrix(), world.costs(), 0.9).values
    estimate = monte_carlo_safety_value(
        world.step, world.is_violation, 12, 0.9, episodes=4000, horizon=200, rng=np.random.default_rng(0)
    )
    assert estimate == pytest.approx(exact[12], abs=0.05)


def test_line_world_datasets():
    world = LineWorld(n_cells=10, wall=6)
    dataset = world.dataset_with_all_cells(3, np.random.default_rng(0))
    assert len(dataset) == 30
    np.testing.assert_array_equal(dataset.terminal, dataset.costs[:, 0] > 0)

    rollouts = world.collect(5, 50, np.random.default_rng(1))
    assert rollouts.features.shape[1] == 10
    with pytest.raises(ValueError):
        SafetyDataset(np.zeros((2, 1)), np.array([0.0, 0.5]), np.zeros((2, 1)), np.zeros(2))


@pytest.mark.slow
def test_fitted_critic_approaches_exact_values():
    torch.manual_seed(0)
    world = LineWorld(n_cells=20, wall=15)
    exact = tabular_value_iteration(world.transition_matrix(), world.costs(), 0.9).values
    dataset = world.dataset_with_all_cells(200, np.random.default_rng(0))
    critic = SafetyCritic(world.n_cells, hidden=(64,), n_heads=1)

    losses = fit_safety_critic(
        critic, dataset, 0.9, epochs=200, lr=5e-3, batch_size=256, generator=torch.Generator().manual_seed(0)
    )
    fitted = critic.values(world.features(np.arange(world.n_cells)))[:, 0]
    assert np.mean(np.abs(fitted - exact)) < 0.1
    assert losses[-1] < losses[0]


def test_fit_rejects_empty_dataset():
    empty = SafetyDataset(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        fit_safety_critic(SafetyCritic(3), empty, 0.9, epochs=1)


def test_clearance_proxy(desk_chain, desk_workspace):
    proxy = ClearanceSafetyProxy(scale=0.05)
    assert proxy.value(0.0) == 1.0
    assert proxy.value(-0.1) == 1.0
    assert proxy.value(0.05) == pytest.approx(np.exp(-1.0))
    assert proxy.value(np.inf) == 0.0

    scene = Scene(desk_workspace)
    body, tool_gap = surface_clearances(desk_chain, desk_chain.home, ToolRegion.empty(), scene)
    assert body == pytest.approx(0.12)
    assert tool_gap == np.inf

    values = proxy(desk_chain, desk_chain.home, ToolRegion.empty(), InteractionMode.PROTECTIVE, scene)
    assert values.v_tool == 0.0
    assert values.v_max == pytest.approx(np.exp(-0.12 / 0.05))

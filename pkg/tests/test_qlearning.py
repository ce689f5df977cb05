import math

import numpy as np
import pytest

from alarm_thresholds.benchmark import single_device_threshold
from alarm_thresholds.feasibility import check_feasibility
from alarm_thresholds.metrics import EventPoint, expected_power
from alarm_thresholds.network import Area, DomainError, generate_deployment
from alarm_thresholds.qlearning import QConfig, QTable, action_levels, solve_qlearning
from alarm_thresholds.simulator import IDLE, MISS, SUCCESS, RewardConfig, RlState, rl_environment_step
from alarm_thresholds.utils import make_rng

from conftest import SQUARE_W

SMALL = Area(length=5.0, height=5.0)
SMALL_W = 2 * 5 * 5 / math.pi


def _expected_reward(dep, model, delta, samples=40):
    """Mean one-step reward over a regular grid of epicentres."""

    offsets = (np.arange(samples) + 0.5) / samples
    total = 0.0
    for fx in offsets:
        for fy in offsets:
            point = EventPoint(fx * dep.area.length, fy * dep.area.height)
            _, rewards, _ = rl_environment_step(RlState.initial(delta), delta, dep, model, make_rng(0), epicenter=point)
            total += float(rewards[0])
    return total / samples**2


def test_action_levels_span_silent_to_cap(model, square):
    levels = action_levels(model, square, 20)
    assert levels[0] == 1.0
    assert levels[-1] == pytest.approx(math.exp(-math.sqrt(200.0)))
    assert np.all(np.diff(levels) < 0)
    uncapped = action_levels(model, square, 3, range_factor=None)
    assert uncapped[-1] == pytest.approx(math.exp(-square.diagonal))


def test_action_levels_reject_empty_grid(model, square):
    with pytest.raises(DomainError):
        action_levels(model, square, 0)
    with pytest.raises(DomainError):
        QConfig(levels=0)


def test_bandit_update_keeps_last_reward():
    table = QTable(devices=1, levels=3, learning_rate=1.0, discount=0.0)
    state = QTable.state_index(0, IDLE)
    rewards = {0: [0.3, -1.0, 2.5], 1: [4.0], 2: [-0.7, 0.1]}
    for action, sequence in rewards.items():
        for reward in sequence:
            table.update(0, state, action, reward, state)
    np.testing.assert_allclose(table.values[0, state], [2.5, 4.0, 0.1])
    assert table.greedy(0, state) == 1


def test_update_follows_bellman_rule():
    table = QTable(devices=1, levels=2, learning_rate=0.5, discount=0.9)
    here, there = QTable.state_index(0, IDLE), QTable.state_index(1, SUCCESS)
    table.values[0, there] = [1.0, 3.0]
    assert table.update(0, here, 1, 2.0, there) == pytest.approx(0.5 * (2.0 + 0.9 * 3.0))


def test_state_index_is_unique():
    indices = {QTable.state_index(level, outcome) for level in range(4) for outcome in (IDLE, SUCCESS, MISS)}
    assert len(indices) == 12


def test_single_device_learns_covering_level(model, budget, make_deployment, make_cals):
    dep = make_deployment([(2.5, 2.5)], area=SMALL)
    levels = action_levels(model, SMALL, 2)
    expected = [_expected_reward(dep, model, [level]) for level in levels]
    best = int(np.argmax(expected))
    assert best == 1
    result = solve_qlearning(dep, make_cals([SMALL_W]), model, budget, QConfig(levels=2), seed=5)
    assert result.extra["policy"] == [best]
    assert result.extra["start"] == [0]
    # the covering level is projected up to the single-device budget boundary
    assert result.extra["projection"] in {"policy_scaled", "start_scaled"}
    assert result.feasible
    assert result.delta[0] > levels[best]
    assert result.delta[0] == pytest.approx(single_device_threshold(SMALL_W, model, budget), rel=1e-6)
    assert result.error == pytest.approx(budget.E, abs=1e-8)


def test_training_is_reproducible(model, budget, square, make_cals):
    dep = generate_deployment(square, 4, seed=8)
    cals = make_cals([SQUARE_W] * 4)
    cfg = QConfig(levels=5, episodes=20, init="random")
    first = solve_qlearning(dep, cals, model, budget, cfg, seed=2)
    assert first == solve_qlearning(dep, cals, model, budget, cfg, seed=2)
    assert first.method == "qlearn"
    assert all(0 < d <= 1 for d in first.delta)


def test_ones_init_starts_silent(model, budget, square, make_cals):
    dep = generate_deployment(square, 3, seed=1)
    result = solve_qlearning(dep, make_cals([SQUARE_W] * 3), model, budget, QConfig(levels=4, episodes=5, init="ones"))
    assert result.extra["start"] == [0, 0, 0]


def test_epsilon_decays_linearly():
    cfg = QConfig(episodes=11, epsilon_start=1.0, epsilon_end=0.0)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(5) == pytest.approx(0.5)
    assert cfg.epsilon(10) == pytest.approx(0.0)


@pytest.mark.parametrize(
    "kwargs",
    [{"episodes": 0}, {"learning_rate": 0.0}, {"discount": 1.5}, {"epsilon_end": -0.1}, {"init": "greedy"}],
)
def test_qconfig_validation(kwargs):
    with pytest.raises(DomainError):
        QConfig(**kwargs)


def test_calibration_count_must_match(model, budget, square, make_cals):
    dep = generate_deployment(square, 3, seed=1)
    with pytest.raises(DomainError):
        solve_qlearning(dep, make_cals([SQUARE_W] * 2), model, budget)


def test_result_is_never_costlier_than_the_raw_policy(model, budget, square, make_cals):
    dep = generate_deployment(square, 6, seed=12)
    cals = make_cals([SQUARE_W] * 6)
    result = solve_qlearning(dep, cals, model, budget, QConfig(levels=6, episodes=10), seed=4)
    assert result.extra["projection"] in {"policy_scaled", "start_scaled", "policy"}
    raw = action_levels(model, square, 6)[result.extra["policy"]]
    if check_feasibility(cals, model, raw, budget).feasible:
        assert result.feasible
        assert result.objective <= expected_power(cals, model, raw) + 1e-12
    if result.feasible and result.extra["projection"] != "policy":
        assert result.error == pytest.approx(budget.E, abs=1e-8)


def test_energy_cost_charges_each_transmitter(model, make_deployment):
    dep = make_deployment([(24.0, 25.0), (26.0, 25.0)])
    state = RlState.initial([1.0, 1.0])
    point = EventPoint(25.0, 25.0)
    action = [math.exp(-3.0), 1.0]
    _, plain, _ = rl_environment_step(state, action, dep, model, make_rng(0), RewardConfig(), epicenter=point)
    _, charged, _ = rl_environment_step(
        state, action, dep, model, make_rng(0), RewardConfig(energy_weight=0.5), epicenter=point
    )
    np.testing.assert_allclose(plain - charged, [0.5, 0.0])

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .feasibility import OptimizerResult, check_feasibility, finalize_result, iteration_cap, scale_to_budget
from .heuristics import ClusterGraph
from .metrics import ErrorBudget, EventPoint, expected_power
from .network import (
    DEFAULT_RANGE_FACTOR,
    Area,
    CalibratedCdf,
    Deployment,
    DomainError,
    SensingModel,
    voronoi_partition,
)
from .simulator import COLLISION, IDLE, MISS, SUCCESS, RewardConfig, RlState, rl_environment_step
from .utils import make_rng

OUTCOME_CLASSES = (IDLE, SUCCESS, COLLISION, MISS)
INIT_MODES = ("voronoi", "random", "ones")
UTILITY_NEIGHBORS = 4


@dataclass(frozen=True)
class QConfig:
    levels: int = 20
    episodes: int = 200
    steps: Optional[int] = None
    learning_rate: float = 0.5
    discount: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    init: str = "voronoi"

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise DomainError("action grid is empty")
        if self.episodes < 1:
            raise DomainError("episodes must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise DomainError("steps must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise DomainError("learning_rate must lie in (0, 1]")
        if not 0 <= self.discount <= 1:
            raise DomainError("discount must lie in [0, 1]")
        for name in ("epsilon_start", "epsilon_end"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise DomainError(f"{name} must lie in [0, 1], got {value}")
        if self.init not in INIT_MODES:
            raise DomainError(f"init must be one of {INIT_MODES}, got {self.init!r}")

    def epsilon(self, episode: int) -> float:
        if self.episodes == 1:
            return self.epsilon_start
        fraction = episode / (self.episodes - 1)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * fraction


def action_levels(
    model: SensingModel, area: Area, levels: int, range_factor: Optional[float] = DEFAULT_RANGE_FACTOR
) -> np.ndarray:
    """Thresholds exp(-s) for s evenly spaced on [0, s_max]; index 0 is the silent level."""

    if levels < 1:
        raise DomainError("action grid is empty")
    s_max = model.eta * area.diagonal
    if range_factor is not None:
        s_max = min(s_max, math.sqrt(range_factor))
    return np.exp(-np.linspace(0.0, s_max, levels))


class QTable:
    def __init__(self, devices: int, levels: int, learning_rate: float, discount: float) -> None:
        if levels < 1:
            raise DomainError("action grid is empty")
        self.levels = levels
        self.learning_rate = learning_rate
        self.discount = discount
        self.values = np.zeros((devices, levels * len(OUTCOME_CLASSES), levels))

    @staticmethod
    def state_index(level: int, outcome: str) -> int:
        return int(level) * len(OUTCOME_CLASSES) + OUTCOME_CLASSES.index(outcome)

    def greedy(self, device: int, state: int) -> int:
        # argmax keeps the lowest index on ties
        return int(np.argmax(self.values[device, state]))

    def choose(self, rng: np.random.Generator, device: int, state: int, epsilon: float) -> int:
        if rng.random() < epsilon:
            return int(rng.integers(self.levels))
        return self.greedy(device, state)

    def update(self, device: int, state: int, action: int, reward: float, next_state: int) -> float:
        target = reward + self.discount * float(np.max(self.values[device, next_state]))
        old = self.values[device, state, action]
        self.values[device, state, action] = (1.0 - self.learning_rate) * old + self.learning_rate * target
        return float(self.values[device, state, action])


def _initial_levels(
    dep: Deployment, model: SensingModel, thresholds: np.ndarray, mode: str, rng: np.random.Generator
) -> np.ndarray:
    if mode == "ones":
        return np.zeros(dep.n, dtype=int)
    if mode == "random":
        return rng.integers(thresholds.size, size=dep.n)
    grid = -np.log(thresholds)
    radii = np.array([cell.omega_min for cell in voronoi_partition(dep)])
    wanted = model.eta * radii
    return np.argmin(np.abs(wanted[:, None] - grid[None, :]), axis=1)


def _random_epicenter(dep: Deployment, rng: np.random.Generator) -> EventPoint:
    x, y = rng.uniform(low=(0.0, 0.0), high=(dep.area.length, dep.area.height))
    return EventPoint(float(x), float(y))


def _episode(
    table: QTable,
    dep: Deployment,
    model: SensingModel,
    thresholds: np.ndarray,
    start: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    reward_cfg: RewardConfig,
    neighbors: Sequence[Sequence[int]],
    epsilon: Optional[float],
) -> Tuple[np.ndarray, float]:
    """Run one episode; epsilon None follows the greedy policy without learning."""

    levels = start.copy()
    outcome = IDLE
    env_state = RlState.initial(thresholds[levels])
    total = 0.0
    for _ in range(steps):
        states = [QTable.state_index(level, outcome) for level in levels]
        if epsilon is None:
            actions = np.array([table.greedy(j, states[j]) for j in range(dep.n)], dtype=int)
        else:
            actions = np.array([table.choose(rng, j, states[j], epsilon) for j in range(dep.n)], dtype=int)
        env_state, rewards, result = rl_environment_step(
            env_state,
            thresholds[actions],
            dep,
            model,
            rng,
            reward_cfg,
            neighbors=neighbors,
            epicenter=_random_epicenter(dep, rng),
        )
        outcome = result.classification
        if epsilon is not None:
            for j in range(dep.n):
                next_state = QTable.state_index(actions[j], outcome)
                table.update(j, states[j], int(actions[j]), float(rewards[j]), next_state)
        total += float(rewards.sum())
        levels = actions
    return levels, total


def _project(
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    thresholds: np.ndarray,
    policy: np.ndarray,
    start: np.ndarray,
) -> Tuple[str, np.ndarray, int]:
    """Pick the cheapest feasible point among the learned policy and its budget projections.

    The learned and start level patterns are scaled along their ray to the
    budget boundary. With nothing feasible the least-error candidate wins.
    """

    raw = thresholds[policy]
    candidates = []
    evaluations = 0
    for label, levels in (("policy_scaled", policy), ("start_scaled", start)):
        scaled = scale_to_budget(cals, model, budget, -np.log(thresholds[levels]))
        evaluations += scaled.evaluations
        candidates.append((label, np.exp(-scaled.log_thresholds), scaled.feasible, scaled.error))
    status = check_feasibility(cals, model, raw, budget)
    candidates.append(("policy", raw, status.feasible, status.error))

    feasible = [(label, delta) for label, delta, ok, _ in candidates if ok]
    if feasible:
        # ties keep the earlier candidate
        label, delta = min(feasible, key=lambda item: expected_power(cals, model, item[1]))
    else:
        label, delta, _, _ = min(candidates, key=lambda item: item[3])
    return label, delta, evaluations


def solve_qlearning(
    dep: Deployment,
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    qcfg: QConfig = QConfig(),
    seed: int = 0,
    reward_cfg: RewardConfig = RewardConfig(),
    range_factor: Optional[float] = DEFAULT_RANGE_FACTOR,
) -> OptimizerResult:
    """Train one tabular Q-function per device and return the greedy thresholds.

    The greedy pattern is scaled onto the error-budget boundary before it is
    reported; ``extra["projection"]`` names the candidate that was kept.

    Training steps are event-conditioned: every step draws an epicentre, since
    idle slots reward every action equally.
    """

    if len(cals) != dep.n:
        raise DomainError(f"expected {dep.n} calibrations, got {len(cals)}")
    thresholds = action_levels(model, dep.area, qcfg.levels, range_factor)
    rng = make_rng(seed)
    table = QTable(dep.n, qcfg.levels, qcfg.learning_rate, qcfg.discount)
    neighbors = ClusterGraph.build(dep, UTILITY_NEIGHBORS).neighbors
    steps = iteration_cap(qcfg.steps, dep.n)
    start = _initial_levels(dep, model, thresholds, qcfg.init, rng)

    total_reward = 0.0
    for episode in range(qcfg.episodes):
        _, reward = _episode(
            table, dep, model, thresholds, start, steps, rng, reward_cfg, neighbors, qcfg.epsilon(episode)
        )
        total_reward += reward

    # greedy rollout from the start state extracts the learned policy
    policy, _ = _episode(table, dep, model, thresholds, start, steps, rng, reward_cfg, neighbors, None)
    projection, delta, scale_evaluations = _project(cals, model, budget, thresholds, policy, start)
    return finalize_result(
        "qlearn",
        delta,
        cals,
        model,
        budget,
        iterations=qcfg.episodes,
        evaluations=qcfg.episodes * steps + scale_evaluations,
        seed=seed,
        extra={
            "policy": policy.tolist(),
            "start": start.tolist(),
            "init": qcfg.init,
            "projection": projection,
            "mean_reward": total_reward / (qcfg.episodes * steps * dep.n),
        },
    )

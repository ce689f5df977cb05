import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np

from .metrics import EventPoint, check_thresholds, conditional_activation_profile
from .network import Deployment, DomainError, SensingModel
from .utils import make_rng

SCHEMA_VERSION = 1
CHUNK_TTIS = 16384
MIN_EPICENTERS = 1000

IDLE = "idle"
SUCCESS = "success"
COLLISION = "collision"
MISS = "miss"


@dataclass(frozen=True)
class SimConfig:
    tti_count: int
    seed: int
    fixed_epicenter: Optional[EventPoint] = None

    def __post_init__(self) -> None:
        if not isinstance(self.tti_count, int) or self.tti_count < 1:
            raise DomainError(f"tti_count must be >= 1, got {self.tti_count!r}")


@dataclass(frozen=True)
class TtiOutcome:
    event_occurred: bool
    epicenter: Optional[EventPoint]
    transmitters: FrozenSet[int]
    classification: str


def classify(event_occurred: bool, transmitter_count: int) -> str:
    if not event_occurred:
        return IDLE
    if transmitter_count == 0:
        return MISS
    if transmitter_count == 1:
        return SUCCESS
    return COLLISION


@dataclass
class SimReport:
    tti_count: int
    seed: int
    events: int
    success: int
    collision: int
    miss: int
    idle: int
    active_fraction: Tuple[float, ...]
    p_e: float
    p_e_se: float
    p_miss: float
    p_miss_se: float
    p_col: float
    p_col_se: float
    power: float
    power_se: float
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["active_fraction"] = list(self.active_fraction)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimReport":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DomainError(f"unsupported SimReport schema_version {version!r}")
        payload = dict(data)
        payload["active_fraction"] = tuple(float(v) for v in payload["active_fraction"])
        return cls(**payload)


def _binomial(count: int, total: int) -> Tuple[float, float]:
    rate = count / total
    return rate, math.sqrt(rate * (1.0 - rate) / total)


def _transmit_mask(positions: np.ndarray, epicenters: np.ndarray, eta: float, thresholds: np.ndarray) -> np.ndarray:
    distances = np.hypot(
        epicenters[:, 0, None] - positions[None, :, 0],
        epicenters[:, 1, None] - positions[None, :, 1],
    )
    return np.exp(-eta * distances) >= thresholds[None, :]


def run_slots(dep: Deployment, model: SensingModel, delta: Sequence[float], cfg: SimConfig) -> SimReport:
    thresholds = check_thresholds(delta, dep.n)
    if cfg.fixed_epicenter is not None and not dep.area.contains(cfg.fixed_epicenter.x, cfg.fixed_epicenter.y):
        raise DomainError("fixed epicenter lies outside the area")
    rng = make_rng(cfg.seed)
    positions = dep.positions()
    n = dep.n

    active = np.zeros(n, dtype=np.int64)
    events = success = collision = miss = 0
    load_sum = 0.0
    load_sq_sum = 0.0
    for start in range(0, cfg.tti_count, CHUNK_TTIS):
        size = min(CHUNK_TTIS, cfg.tti_count - start)
        occurred = rng.random(size) < model.alpha
        count = int(np.count_nonzero(occurred))
        if count == 0:
            continue
        if cfg.fixed_epicenter is None:
            epicenters = rng.uniform(low=(0.0, 0.0), high=(dep.area.length, dep.area.height), size=(count, 2))
        else:
            epicenters = np.tile((cfg.fixed_epicenter.x, cfg.fixed_epicenter.y), (count, 1))
        mask = _transmit_mask(positions, epicenters, model.eta, thresholds)
        per_event = mask.sum(axis=1)
        active += mask.sum(axis=0)
        events += count
        success += int(np.count_nonzero(per_event == 1))
        collision += int(np.count_nonzero(per_event >= 2))
        miss += int(np.count_nonzero(per_event == 0))
        load = per_event / n
        load_sum += float(load.sum())
        load_sq_sum += float(np.sum(load**2))

    total = cfg.tti_count
    p_e, p_e_se = _binomial(miss + collision, total)
    p_miss, p_miss_se = _binomial(miss, total)
    p_col, p_col_se = _binomial(collision, total)
    power = load_sum / total
    variance = max(0.0, load_sq_sum / total - power**2)
    return SimReport(
        tti_count=total,
        seed=cfg.seed,
        events=events,
        success=success,
        collision=collision,
        miss=miss,
        idle=total - events,
        active_fraction=tuple(float(v) for v in active / total),
        p_e=p_e,
        p_e_se=p_e_se,
        p_miss=p_miss,
        p_miss_se=p_miss_se,
        p_col=p_col,
        p_col_se=p_col_se,
        power=power,
        power_se=math.sqrt(variance / total),
    )


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    samples: int


def estimate_error_mc(
    dep: Deployment, model: SensingModel, delta: Sequence[float], epicenters: int, seed: int
) -> McEstimate:
    if epicenters < MIN_EPICENTERS:
        raise DomainError(f"need at least {MIN_EPICENTERS} epicenters, got {epicenters}")
    thresholds = check_thresholds(delta, dep.n)
    rng = make_rng(seed)
    positions = dep.positions()
    successes = 0
    for start in range(0, epicenters, CHUNK_TTIS):
        size = min(CHUNK_TTIS, epicenters - start)
        points = rng.uniform(low=(0.0, 0.0), high=(dep.area.length, dep.area.height), size=(size, 2))
        mask = _transmit_mask(positions, points, model.eta, thresholds)
        successes += int(np.count_nonzero(mask.sum(axis=1) == 1))
    rate = successes / epicenters
    return McEstimate(
        value=model.alpha * (1.0 - rate),
        std_error=model.alpha * math.sqrt(rate * (1.0 - rate) / epicenters),
        samples=epicenters,
    )


@dataclass(frozen=True)
class RewardConfig:
    mu1: float = 1.0
    mu2: float = 1.0
    silent_rho: float = -1.0
    energy_weight: float = 0.0


@dataclass(frozen=True)
class RlState:
    thresholds: Tuple[float, ...]
    sensed: Tuple[float, ...]
    outcome: str = IDLE

    @classmethod
    def initial(cls, thresholds: Sequence[float]) -> "RlState":
        values = tuple(float(v) for v in thresholds)
        return cls(thresholds=values, sensed=tuple(0.0 for _ in values), outcome=IDLE)


def _utility(
    dep: Deployment,
    model: SensingModel,
    thresholds: np.ndarray,
    distances: np.ndarray,
    transmitting: np.ndarray,
    neighbors: Optional[Sequence[Sequence[int]]],
) -> float:
    utility = 0.0
    for h in np.flatnonzero(transmitting):
        utility += 1.0
        if distances[h] <= 0:
            continue
        candidates = neighbors[h] if neighbors is not None else range(dep.n)
        device_h = dep.devices[h]
        for j in candidates:
            device_j = dep.devices[j]
            if j == h or (device_j.x == device_h.x and device_j.y == device_h.y):
                continue
            utility += float(
                conditional_activation_profile(dep, model, float(thresholds[j]), device_h, device_j, [distances[h]])[0]
            )
    return utility


def rl_environment_step(
    state: RlState,
    action: Sequence[float],
    dep: Deployment,
    model: SensingModel,
    rng: np.random.Generator,
    reward_cfg: RewardConfig = RewardConfig(),
    neighbors: Optional[Sequence[Sequence[int]]] = None,
    epicenter: Optional[EventPoint] = None,
) -> Tuple[RlState, np.ndarray, TtiOutcome]:
    """Simulate one TTI under the given thresholds and score every device.

    Passing ``epicenter`` forces an event at that point; otherwise an event
    occurs with probability alpha at a uniform position. ``neighbors`` limits
    the utility term to each transmitter's cluster neighbours (all devices
    when omitted).
    """

    thresholds = check_thresholds(action, dep.n)
    if len(state.thresholds) != dep.n:
        raise DomainError("state does not match the deployment size")
    if epicenter is None and rng.random() < model.alpha:
        x, y = rng.uniform(low=(0.0, 0.0), high=(dep.area.length, dep.area.height))
        epicenter = EventPoint(float(x), float(y))
    elif epicenter is not None and not dep.area.contains(epicenter.x, epicenter.y):
        raise DomainError("epicenter lies outside the area")

    if epicenter is None:
        outcome = TtiOutcome(False, None, frozenset(), IDLE)
        next_state = RlState(thresholds=tuple(thresholds), sensed=tuple(0.0 for _ in thresholds), outcome=IDLE)
        return next_state, np.zeros(dep.n), outcome

    positions = dep.positions()
    distances = np.hypot(positions[:, 0] - epicenter.x, positions[:, 1] - epicenter.y)
    sensed = np.exp(-model.eta * distances)
    transmitting = sensed >= thresholds
    label = classify(True, int(np.count_nonzero(transmitting)))

    rho = np.zeros(dep.n)
    if label == COLLISION:
        rho = np.where(transmitting, 1.0, reward_cfg.silent_rho)
    sigma = 1.0 if label == MISS else 0.0
    utility = _utility(dep, model, thresholds, distances, transmitting, neighbors)
    rewards = (
        utility
        - reward_cfg.mu1 * sensed * rho
        - reward_cfg.mu2 * sensed * sigma
        - reward_cfg.energy_weight * transmitting.astype(float)
    )
    outcome = TtiOutcome(True, epicenter, frozenset(int(j) for j in np.flatnonzero(transmitting)), label)
    next_state = RlState(thresholds=tuple(thresholds), sensed=tuple(float(v) for v in sensed), outcome=label)
    return next_state, rewards, outcome

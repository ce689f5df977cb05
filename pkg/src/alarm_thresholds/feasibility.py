import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .metrics import ErrorBudget, check_thresholds, expected_p_e, expected_power
from .network import CalibratedCdf, DomainError, SensingModel

FEASIBILITY_SLACK = 1e-9
SCALE_GRID = 512
SCALE_TOLERANCE = 1e-12
# log-threshold that saturates an uncapped device: 2 s^2 / (eta^2 w) >= 40
UNCAPPED_SATURATION = 20.0


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    margin: float
    error: float


@dataclass
class OptimizerResult:
    method: str
    delta: Tuple[float, ...]
    feasible: bool
    objective: float
    error: float
    iterations: int
    evaluations: int
    seed: int
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["delta"] = list(self.delta)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptimizerResult":
        payload = dict(data)
        payload["delta"] = tuple(float(v) for v in payload["delta"])
        payload.setdefault("extra", {})
        return cls(**payload)


@dataclass(frozen=True)
class ScaleResult:
    log_thresholds: np.ndarray
    feasible: bool
    error: float
    evaluations: int

    @property
    def delta(self) -> np.ndarray:
        return np.exp(-self.log_thresholds)


def check_feasibility(
    cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float], budget: ErrorBudget
) -> Feasibility:
    error = expected_p_e(cals, model, delta)
    margin = budget.E - error
    return Feasibility(feasible=error <= budget.E + FEASIBILITY_SLACK, margin=margin, error=error)


def iteration_cap(value: Optional[int], n: int) -> int:
    if value is not None:
        return int(value)
    return max(1, math.ceil(math.sqrt(n)))


def log_threshold_bounds(cals: Sequence[CalibratedCdf], model: SensingModel) -> np.ndarray:
    """Largest useful -ln(delta) per device; coverage no longer changes beyond it."""

    bounds = []
    for cal in cals:
        if math.isfinite(cal.z_max):
            bounds.append(model.eta * math.sqrt(cal.z_max))
        else:
            bounds.append(model.eta * math.sqrt(UNCAPPED_SATURATION * cal.w))
    return np.array(bounds, dtype=float)


def thresholds_from_logs(log_thresholds: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, np.exp(-np.maximum(log_thresholds, 0.0)))


def scale_to_budget(
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    direction: Sequence[float],
    grid: int = SCALE_GRID,
    tolerance: float = SCALE_TOLERANCE,
) -> ScaleResult:
    """Find the smallest multiple t of ``direction`` (in -ln delta space) meeting the budget.

    The ray is scanned upward from t = 0 and the first feasible grid point is
    refined by bisection, which yields the largest feasible thresholds along
    the ray. With no feasible grid point the least-error point is returned
    flagged infeasible.
    """

    shape = np.asarray(direction, dtype=float).reshape(-1)
    if shape.size != len(cals):
        raise DomainError(f"expected {len(cals)} direction entries, got {shape.size}")
    if np.any(shape < 0) or np.any(np.isnan(shape)):
        raise DomainError("direction must be non-negative")
    peak = float(np.max(shape)) if shape.size else 0.0
    shape = np.ones_like(shape) if peak <= 0 else shape / peak
    upper = log_threshold_bounds(cals, model)
    t_max = float(np.max(upper))
    evaluations = 0

    def logs_at(t: float) -> np.ndarray:
        return np.minimum(t * shape, upper)

    def error_at(t: float) -> float:
        nonlocal evaluations
        evaluations += 1
        return expected_p_e(cals, model, thresholds_from_logs(logs_at(t)))

    limit = budget.E + FEASIBILITY_SLACK
    ts = np.linspace(0.0, t_max, grid)
    best_t, best_error = 0.0, math.inf
    previous = 0.0
    for t in ts:
        error = error_at(float(t))
        if error < best_error:
            best_t, best_error = float(t), error
        if error <= limit:
            lo, hi, hi_error = previous, float(t), error
            while hi - lo > tolerance:
                mid = 0.5 * (lo + hi)
                mid_error = error_at(mid)
                if mid_error <= limit:
                    hi, hi_error = mid, mid_error
                else:
                    lo = mid
            return ScaleResult(log_thresholds=logs_at(hi), feasible=True, error=hi_error, evaluations=evaluations)
        previous = float(t)
    return ScaleResult(log_thresholds=logs_at(best_t), feasible=False, error=best_error, evaluations=evaluations)


def finalize_result(
    method: str,
    delta: Sequence[float],
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    iterations: int,
    evaluations: int,
    seed: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> OptimizerResult:
    values = check_thresholds(delta, len(cals))
    status = check_feasibility(cals, model, values, budget)
    return OptimizerResult(
        method=method,
        delta=tuple(float(v) for v in values),
        feasible=status.feasible,
        objective=expected_power(cals, model, values),
        error=status.error,
        iterations=int(iterations),
        evaluations=int(evaluations),
        seed=int(seed),
        extra=dict(extra or {}),
    )

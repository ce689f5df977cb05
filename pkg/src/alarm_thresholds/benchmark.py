import math
from typing import Sequence

import numpy as np

from .feasibility import SCALE_TOLERANCE, OptimizerResult, finalize_result, scale_to_budget
from .metrics import ErrorBudget
from .network import CalibratedCdf, DomainError, SensingModel

DEFAULT_SUCCESS_TARGET = 0.9


def solve_equal_delta(
    cals: Sequence[CalibratedCdf], model: SensingModel, budget: ErrorBudget, tolerance: float = SCALE_TOLERANCE
) -> OptimizerResult:
    if len(cals) < 1:
        raise DomainError("equal-threshold benchmark needs at least one device")
    search = scale_to_budget(cals, model, budget, np.ones(len(cals)), tolerance=tolerance)
    return finalize_result(
        "equal",
        search.delta,
        cals,
        model,
        budget,
        iterations=search.evaluations,
        evaluations=search.evaluations,
        extra={"log_threshold": float(search.log_thresholds[0])},
    )


def single_device_threshold(w: float, model: SensingModel, budget: ErrorBudget) -> float:
    """Closed-form budget boundary for one device: alpha * exp(-2 ln^2(delta) / (eta^2 w)) = E."""

    return math.exp(-model.eta * math.sqrt(w * math.log(model.alpha / budget.E) / 2.0))


def equal_delta_asymptotic(w: float, n: int, success_target: float = DEFAULT_SUCCESS_TARGET) -> float:
    if n < 2:
        raise DomainError("asymptotic equal threshold needs n >= 2")
    if not 0 < success_target < 1:
        raise DomainError("success_target must lie in (0, 1)")
    if w <= 0:
        raise DomainError("w must be positive")
    exponent = w * (math.log(n) - math.log(success_target)) / (2.0 * (n - 1))
    return math.exp(-math.sqrt(exponent))

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .feasibility import (
    FEASIBILITY_SLACK,
    OptimizerResult,
    finalize_result,
    iteration_cap,
    log_threshold_bounds,
    scale_to_budget,
    thresholds_from_logs,
)
from .metrics import (
    ErrorBudget,
    check_thresholds,
    expected_p_e,
    expected_power,
    grad_expected_p_e,
    grad_expected_power,
)
from .network import CalibratedCdf, DomainError, SensingModel

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
BACKTRACK = 0.5
MIN_STEP = 1e-16


@dataclass(frozen=True)
class ScaConfig:
    delta0: Optional[Tuple[float, ...]] = None
    max_iters: Optional[int] = None
    trust_radius: float = 1.0
    tolerance: float = 1e-6
    inner_iters: int = 200
    max_backtracks: int = 8

    def __post_init__(self) -> None:
        if self.max_iters is not None and self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.trust_radius <= 0 or self.tolerance <= 0:
            raise DomainError("trust_radius and tolerance must be positive")
        if self.inner_iters < 1 or self.max_backtracks < 1:
            raise DomainError("inner_iters and max_backtracks must be >= 1")

    def learning_rate(self, k: int) -> float:
        return 1.0 / math.sqrt(k + 1)


@dataclass(frozen=True)
class BcdConfig:
    delta0: Optional[Tuple[float, ...]] = None
    max_iters: Optional[int] = None
    tolerance: float = 1e-6
    order: Optional[Tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.max_iters is not None and self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")


class _LogProblem:
    """Objective and constraint in log-threshold coordinates s = -ln(delta)."""

    def __init__(self, cals: Sequence[CalibratedCdf], model: SensingModel, budget: ErrorBudget) -> None:
        self.cals = cals
        self.model = model
        self.budget = budget
        self.upper = log_threshold_bounds(cals, model)
        self.limit = budget.E + FEASIBILITY_SLACK
        self.evaluations = 0

    def power(self, s: np.ndarray) -> float:
        self.evaluations += 1
        return expected_power(self.cals, self.model, thresholds_from_logs(s))

    def error(self, s: np.ndarray) -> float:
        self.evaluations += 1
        return expected_p_e(self.cals, self.model, thresholds_from_logs(s))

    def feasible(self, s: np.ndarray) -> bool:
        return self.error(s) <= self.limit

    def power_grad(self, s: np.ndarray) -> np.ndarray:
        delta = thresholds_from_logs(s)
        return -delta * grad_expected_power(self.cals, self.model, delta)

    def error_grad(self, s: np.ndarray) -> np.ndarray:
        delta = thresholds_from_logs(s)
        return -delta * grad_expected_p_e(self.cals, self.model, delta)


def _initial_logs(problem: _LogProblem, delta0: Optional[Sequence[float]]) -> Tuple[Optional[np.ndarray], str]:
    """Pick the starting point: ``delta0`` when feasible, else the cheapest feasible ray point.

    An infeasible ``delta0`` still contributes its pattern: it is scaled along
    its own ray in -ln(delta) space onto the budget boundary and competes with
    the equal-threshold point.
    """

    n = len(problem.cals)
    candidates: List[Tuple[np.ndarray, str]] = []
    if delta0 is not None:
        start = np.minimum(-np.log(check_thresholds(delta0, n)), problem.upper)
        if problem.feasible(start):
            return start, "delta0"
        if np.any(start > 0):
            scaled = scale_to_budget(problem.cals, problem.model, problem.budget, start)
            problem.evaluations += scaled.evaluations
            if scaled.feasible:
                candidates.append((scaled.log_thresholds.copy(), "delta0_scaled"))
    equal = scale_to_budget(problem.cals, problem.model, problem.budget, np.ones(n))
    problem.evaluations += equal.evaluations
    if equal.feasible:
        candidates.append((equal.log_thresholds.copy(), "equal"))
    if candidates:
        # ties keep the delta0 pattern
        return min(candidates, key=lambda item: problem.power(item[0]))
    if problem.feasible(problem.upper):
        return problem.upper.copy(), "cap"
    return None, "none"


def golden_section(
    fn: Callable[[float], float], lower: float, upper: float, tolerance: float
) -> Tuple[float, float]:
    ak, bk = lower, upper
    uk = ak + GOLDEN * (bk - ak)
    lk = ak + (1 - GOLDEN) * (bk - ak)
    v_uk = fn(uk)
    v_lk = fn(lk)
    while True:
        if v_uk < v_lk:
            if (bk - lk) < tolerance:
                return uk, v_uk
            ak = lk
            lk, v_lk = uk, v_uk
            uk = ak + GOLDEN * (bk - ak)
            v_uk = fn(uk)
        else:
            if (uk - ak) < tolerance:
                return lk, v_lk
            bk = uk
            uk, v_uk = lk, v_lk
            lk = ak + (1 - GOLDEN) * (bk - ak)
            v_lk = fn(lk)


def project_box_halfspace(
    y: np.ndarray, lower: np.ndarray, upper: np.ndarray, normal: np.ndarray, bound: float, iterations: int = 100
) -> np.ndarray:
    """Euclidean projection of y onto {lower <= x <= upper, normal . x <= bound}.

    When the halfspace misses the box the box point minimising normal . x is returned.
    """

    point = np.clip(y, lower, upper)
    if normal @ point <= bound:
        return point
    extreme = np.where(normal > 0, lower, upper)
    if normal @ extreme > bound:
        return extreme
    lo, hi = 0.0, 1.0
    while normal @ np.clip(y - hi * normal, lower, upper) > bound:
        hi *= 2.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if normal @ np.clip(y - mid * normal, lower, upper) > bound:
            lo = mid
        else:
            hi = mid
    return np.clip(y - hi * normal, lower, upper)


def projected_gradient(
    value: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    stepsize: float,
    iterations: int,
    tolerance: float,
) -> np.ndarray:
    x = project(np.asarray(x0, dtype=float))
    for _ in range(iterations):
        grad = gradient(x)
        fx = value(x)
        while True:
            x_new = project(x - stepsize * grad)
            diff = x_new - x
            # sufficient decrease against the quadratic upper model
            if value(x_new) <= fx + grad @ diff + (0.5 / stepsize) * (diff @ diff) + 1e-15:
                break
            stepsize *= BACKTRACK
            if stepsize < MIN_STEP:
                return x
        x = x_new
        if np.linalg.norm(diff) < tolerance:
            break
    return x


def _restore(problem: _LogProblem, candidate: np.ndarray, tolerance: float) -> Optional[np.ndarray]:
    """Pull a slightly infeasible point back along the error descent direction."""

    if problem.feasible(candidate):
        return candidate
    direction = -problem.error_grad(candidate)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return None
    direction /= norm
    lower = np.zeros_like(problem.upper)

    def moved(mu: float) -> np.ndarray:
        return np.clip(candidate + mu * direction, lower, problem.upper)

    hi = tolerance
    reach = float(np.max(problem.upper))
    while not problem.feasible(moved(hi)):
        hi *= 2.0
        if hi > reach:
            return None
    lo = 0.0
    while hi - lo > tolerance * 1e-3:
        mid = 0.5 * (lo + hi)
        if problem.feasible(moved(mid)):
            hi = mid
        else:
            lo = mid
    return moved(hi)


def _infeasible_start(method: str, problem: _LogProblem, seed: int) -> OptimizerResult:
    return finalize_result(
        method,
        thresholds_from_logs(problem.upper),
        problem.cals,
        problem.model,
        problem.budget,
        iterations=0,
        evaluations=problem.evaluations,
        seed=seed,
        extra={"history": [], "start": "none"},
    )


def solve_sca(
    cals: Sequence[CalibratedCdf], model: SensingModel, budget: ErrorBudget, cfg: ScaConfig = ScaConfig(), seed: int = 0
) -> OptimizerResult:
    problem = _LogProblem(cals, model, budget)
    s, source = _initial_logs(problem, cfg.delta0)
    if s is None:
        return _infeasible_start("sca", problem, seed)

    lower = np.zeros_like(problem.upper)
    objective = problem.power(s)
    history: List[float] = [objective]
    shrink = 1.0
    iterations = 0
    for k in range(iteration_cap(cfg.max_iters, len(cals))):
        iterations = k + 1
        grad_f = problem.power_grad(s)
        norm = float(np.linalg.norm(grad_f))
        if norm == 0.0:
            break
        grad_g = problem.error_grad(s)
        bound = budget.E - problem.error(s) + grad_g @ s
        # trust region measured relative to the current log thresholds
        radius = shrink * cfg.trust_radius * max(1.0, float(np.linalg.norm(s)))
        weight = norm / radius
        anchor = s.copy()

        def surrogate(x: np.ndarray) -> float:
            step = x - anchor
            return float(grad_f @ step + 0.5 * weight * (step @ step))

        def surrogate_grad(x: np.ndarray) -> np.ndarray:
            return grad_f + weight * (x - anchor)

        target = projected_gradient(
            surrogate,
            surrogate_grad,
            lambda x: project_box_halfspace(x, lower, problem.upper, grad_g, bound),
            anchor,
            stepsize=1.0 / weight,
            iterations=cfg.inner_iters,
            tolerance=cfg.tolerance,
        )

        rate = cfg.learning_rate(k)
        accepted = None
        for _ in range(cfg.max_backtracks):
            candidate = _restore(problem, anchor + rate * (target - anchor), cfg.tolerance)
            if candidate is not None:
                candidate_objective = problem.power(candidate)
                if candidate_objective <= objective:
                    accepted = (candidate, candidate_objective)
                    break
            rate *= 0.5

        if accepted is None:
            shrink *= 0.5
            if shrink * cfg.trust_radius < cfg.tolerance:
                break
            continue
        candidate, candidate_objective = accepted
        step_norm = float(np.linalg.norm(candidate - anchor))
        s, objective = candidate, candidate_objective
        history.append(objective)
        if step_norm < cfg.tolerance:
            break

    return finalize_result(
        "sca",
        thresholds_from_logs(s),
        cals,
        model,
        budget,
        iterations=iterations,
        evaluations=problem.evaluations,
        seed=seed,
        extra={"history": history, "start": source},
    )


def _smallest_feasible(problem: _LogProblem, s: np.ndarray, j: int, tolerance: float) -> float:
    lo, hi = 0.0, float(s[j])
    trial = s.copy()
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        trial[j] = mid
        if problem.feasible(trial):
            hi = mid
        else:
            lo = mid
    return hi


def _coordinate_update(problem: _LogProblem, s: np.ndarray, j: int, tolerance: float) -> np.ndarray:
    trial = s.copy()

    def with_value(t: float) -> np.ndarray:
        trial[j] = t
        return trial

    if not problem.feasible(s):
        best, _ = golden_section(lambda t: problem.error(with_value(t)), 0.0, float(problem.upper[j]), tolerance)
        candidate = s.copy()
        candidate[j] = best
        return candidate

    if problem.feasible(with_value(0.0)):
        candidate = s.copy()
        candidate[j] = 0.0
        return candidate

    boundary = _smallest_feasible(problem, s, j, tolerance)
    choices = [boundary]
    if float(s[j]) - boundary > tolerance:
        interior, _ = golden_section(lambda t: problem.power(with_value(t)), boundary, float(s[j]), tolerance)
        choices.append(interior)
    best = None
    for t in choices:
        trial = s.copy()
        trial[j] = t
        if not problem.feasible(trial):
            continue
        value = problem.power(trial)
        if best is None or value < best[1]:
            best = (trial, value)
    return best[0] if best is not None else s.copy()


def solve_bcd(
    cals: Sequence[CalibratedCdf], model: SensingModel, budget: ErrorBudget, cfg: BcdConfig = BcdConfig(), seed: int = 0
) -> OptimizerResult:
    n = len(cals)
    problem = _LogProblem(cals, model, budget)
    s, source = _initial_logs(problem, cfg.delta0)
    if s is None:
        return _infeasible_start("bcd", problem, seed)

    order = list(cfg.order) if cfg.order is not None else list(range(n))
    if sorted(order) != list(range(n)):
        raise DomainError("coordinate order must be a permutation of device indices")

    objective = problem.power(s)
    history: List[float] = [objective]
    iterations = 0
    for outer in range(iteration_cap(cfg.max_iters, n)):
        iterations = outer + 1
        largest_change = 0.0
        for j in order:
            was_feasible = problem.feasible(s)
            candidate = _coordinate_update(problem, s, j, cfg.tolerance)
            if was_feasible:
                if not problem.feasible(candidate):
                    continue
                candidate_objective = problem.power(candidate)
                if candidate_objective > objective:
                    continue
            else:
                if problem.error(candidate) > problem.error(s):
                    continue
                candidate_objective = problem.power(candidate)
            largest_change = max(largest_change, abs(float(candidate[j] - s[j])))
            s, objective = candidate, candidate_objective
            history.append(objective)
        if largest_change < cfg.tolerance:
            break

    return finalize_result(
        "bcd",
        thresholds_from_logs(s),
        cals,
        model,
        budget,
        iterations=iterations,
        evaluations=problem.evaluations,
        seed=seed,
        extra={"history": history, "start": source},
    )

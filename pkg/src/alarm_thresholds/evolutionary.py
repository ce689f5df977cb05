from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .feasibility import FEASIBILITY_SLACK, OptimizerResult, finalize_result, iteration_cap, log_threshold_bounds
from .metrics import ErrorBudget, check_thresholds, expected_p_e, expected_power
from .network import CalibratedCdf, DomainError, SensingModel
from .utils import make_rng

PENALTY_PER_DEVICE = 10.0
SEED_JITTER = 0.05
MIN_MUTATION_SCALE = 1e-3


@dataclass(frozen=True)
class EvoConfig:
    population: int = 40
    generations: Optional[int] = None
    mutation_rate: float = 0.2
    mutation_scale: float = 0.5
    crossover_rate: float = 0.9
    elitism: int = 2
    tournament: int = 3
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5

    def __post_init__(self) -> None:
        if self.population < 2:
            raise DomainError("population must be >= 2")
        if self.generations is not None and self.generations < 1:
            raise DomainError("generations must be >= 1")
        for name in ("mutation_rate", "crossover_rate"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise DomainError(f"{name} must lie in [0, 1], got {value}")
        if self.mutation_scale <= 0:
            raise DomainError("mutation_scale must be positive")
        if not 0 <= self.elitism < self.population:
            raise DomainError("elitism must lie in [0, population)")
        if self.tournament < 1:
            raise DomainError("tournament must be >= 1")
        if min(self.inertia, self.cognitive, self.social) < 0:
            raise DomainError("PSO weights must be non-negative")


class _Fitness:
    """Penalised expected power over genes u in [0, 1]^N, delta = exp(-u * s_max)."""

    def __init__(self, cals: Sequence[CalibratedCdf], model: SensingModel, budget: ErrorBudget) -> None:
        self.cals = cals
        self.model = model
        self.budget = budget
        self.scale = log_threshold_bounds(cals, model)
        self.penalty = PENALTY_PER_DEVICE * len(cals)
        self.evaluations = 0
        self.best_feasible: Optional[Tuple[float, np.ndarray]] = None

    def delta(self, genes: np.ndarray) -> np.ndarray:
        return np.exp(-np.clip(genes, 0.0, 1.0) * self.scale)

    def genes(self, delta: Sequence[float]) -> np.ndarray:
        values = check_thresholds(delta, len(self.cals))
        return np.clip(-np.log(values) / self.scale, 0.0, 1.0)

    def __call__(self, genes: np.ndarray) -> float:
        self.evaluations += 1
        delta = self.delta(genes)
        power = expected_power(self.cals, self.model, delta)
        error = expected_p_e(self.cals, self.model, delta)
        if error <= self.budget.E + FEASIBILITY_SLACK:
            if self.best_feasible is None or power < self.best_feasible[0]:
                self.best_feasible = (power, np.array(genes, dtype=float))
        return power + self.penalty * max(0.0, error - self.budget.E)

    def population(self, genes: np.ndarray) -> np.ndarray:
        return np.array([self(row) for row in genes])


def _tournament(rng: np.random.Generator, fitness: np.ndarray, size: int) -> int:
    contenders = rng.choice(fitness.size, size=min(size, fitness.size), replace=False)
    # lowest index wins ties
    return int(min(contenders, key=lambda i: (fitness[i], i)))


def _finish(
    method: str,
    objective: _Fitness,
    fallback: np.ndarray,
    iterations: int,
    seed: int,
    history: List[float],
) -> OptimizerResult:
    genes = objective.best_feasible[1] if objective.best_feasible is not None else fallback
    return finalize_result(
        method,
        objective.delta(genes),
        objective.cals,
        objective.model,
        objective.budget,
        iterations=iterations,
        evaluations=objective.evaluations,
        seed=seed,
        extra={"history": history, "penalty": objective.penalty},
    )


def solve_ga(
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    cfg: EvoConfig = EvoConfig(),
    seed: int = 0,
) -> OptimizerResult:
    n = len(cals)
    rng = make_rng(seed)
    objective = _Fitness(cals, model, budget)
    generations = iteration_cap(cfg.generations, n)

    population = rng.random((cfg.population, n))
    fitness = objective.population(population)
    history = [float(fitness.min())]

    for generation in range(generations):
        scale = max(cfg.mutation_scale * (1.0 - generation / generations), MIN_MUTATION_SCALE)
        ranked = np.lexsort((np.arange(fitness.size), fitness))
        children = [population[i].copy() for i in ranked[: cfg.elitism]]
        while len(children) < cfg.population:
            first = population[_tournament(rng, fitness, cfg.tournament)].copy()
            second = population[_tournament(rng, fitness, cfg.tournament)].copy()
            if rng.random() < cfg.crossover_rate:
                swap = rng.random(n) < 0.5
                first[swap], second[swap] = second[swap], first[swap]
            for child in (first, second):
                mutate = rng.random(n) < cfg.mutation_rate
                child[mutate] += rng.normal(0.0, scale, int(mutate.sum()))
                np.clip(child, 0.0, 1.0, out=child)
                if len(children) < cfg.population:
                    children.append(child)
        population = np.array(children)
        elite_fitness = fitness[ranked[: cfg.elitism]]
        fitness = np.concatenate([elite_fitness, objective.population(population[cfg.elitism :])])
        history.append(float(fitness.min()))

    best = population[int(np.lexsort((np.arange(fitness.size), fitness))[0])]
    return _finish("ga", objective, best, generations, seed, history)


def solve_pso(
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    cfg: EvoConfig = EvoConfig(population=30),
    seed: int = 0,
    seed_delta: Optional[Sequence[float]] = None,
) -> OptimizerResult:
    n = len(cals)
    rng = make_rng(seed)
    objective = _Fitness(cals, model, budget)
    iterations = iteration_cap(cfg.generations, n)

    positions = rng.random((cfg.population, n))
    if seed_delta is not None:
        anchor = objective.genes(seed_delta)
        half = max(1, cfg.population // 2)
        positions[:half] = np.clip(anchor + rng.normal(0.0, SEED_JITTER, (half, n)), 0.0, 1.0)
        positions[0] = anchor
    velocity = rng.uniform(-1.0, 1.0, (cfg.population, n)) * 0.1

    fitness = objective.population(positions)
    pbest, pbest_fit = positions.copy(), fitness.copy()
    leader = int(np.argmin(pbest_fit))
    gbest, gbest_fit = pbest[leader].copy(), float(pbest_fit[leader])
    history = [gbest_fit]

    for _ in range(iterations):
        r1 = rng.random((cfg.population, n))
        r2 = rng.random((cfg.population, n))
        velocity = (
            cfg.inertia * velocity + cfg.cognitive * r1 * (pbest - positions) + cfg.social * r2 * (gbest - positions)
        )
        np.clip(velocity, -1.0, 1.0, out=velocity)
        positions = np.clip(positions + velocity, 0.0, 1.0)
        fitness = objective.population(positions)
        improved = fitness < pbest_fit
        pbest[improved] = positions[improved]
        pbest_fit[improved] = fitness[improved]
        leader = int(np.argmin(pbest_fit))
        if pbest_fit[leader] < gbest_fit:
            gbest, gbest_fit = pbest[leader].copy(), float(pbest_fit[leader])
        history.append(gbest_fit)

    return _finish("pso", objective, gbest, iterations, seed, history)

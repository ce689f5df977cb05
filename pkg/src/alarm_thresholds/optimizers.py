from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional

from .benchmark import solve_equal_delta
from .config import METHOD_TAGS, get_method_settings, get_range_factor, get_sensing_model
from .convex import BcdConfig, ScaConfig, solve_bcd, solve_sca
from .evolutionary import EvoConfig, solve_ga, solve_pso
from .feasibility import OptimizerResult
from .heuristics import KnnConfig, solve_knn_bayes, solve_voronoi
from .metrics import ErrorBudget
from .network import (
    DEFAULT_RANGE_FACTOR,
    CalibratedCdf,
    Deployment,
    DomainError,
    SensingModel,
    VoronoiCell,
    calibrate_w,
    voronoi_partition,
)
from .qlearning import QConfig, solve_qlearning
from .simulator import RewardConfig


@dataclass(frozen=True)
class ProblemInstance:
    """Everything a method needs for one deployment, computed once and shared."""

    deployment: Deployment
    cals: List[CalibratedCdf]
    cells: List[VoronoiCell]
    model: SensingModel
    budget: ErrorBudget
    range_factor: Optional[float] = DEFAULT_RANGE_FACTOR


def build_instance(
    dep: Deployment,
    model: SensingModel,
    error_budget: float,
    samples: int = 20_000,
    grid_points: int = 64,
    seed: int = 0,
    range_factor: Optional[float] = DEFAULT_RANGE_FACTOR,
) -> ProblemInstance:
    cals = calibrate_w(dep, model, samples=samples, seed=seed, grid_points=grid_points, range_factor=range_factor)
    return ProblemInstance(
        deployment=dep,
        cals=cals,
        cells=voronoi_partition(dep),
        model=model,
        budget=ErrorBudget.for_model(error_budget, model),
        range_factor=range_factor,
    )


def instance_from_config(config: Dict[str, Any], dep: Deployment, seed: int) -> ProblemInstance:
    calibration = config["calibration"]
    return build_instance(
        dep,
        get_sensing_model(config),
        float(config["error_budget"]),
        samples=int(calibration["samples"]),
        grid_points=int(calibration["grid_points"]),
        seed=seed,
        range_factor=get_range_factor(config),
    )


def _voronoi_min(instance: ProblemInstance) -> OptimizerResult:
    return solve_voronoi(instance.deployment, instance.cals, instance.model, instance.budget, "min", instance.cells)


def _evo_config(settings: Dict[str, Any]) -> EvoConfig:
    fields = EvoConfig.__dataclass_fields__
    return EvoConfig(**{key: value for key, value in settings.items() if key in fields})


def _run_equal(instance: ProblemInstance, settings: Dict[str, Any], seed: int) -> OptimizerResult:
    return solve_equal_delta(instance.cals, instance.model, instance.budget, tolerance=float(settings["tolerance"]))


def _run_sca(instance: ProblemInstance, settings: Dict[str, Any], seed: int) -> OptimizerResult:
    cfg = ScaConfig(
        delta0=_voronoi_min(instance).delta,
        max_iters=settings["max_iters"],
        trust_radius=float(settings["trust_radius"]),
        tolerance=float(settings["tolerance"]),
        inner_iters=int(settings["inner_iters"]),
        max_backtracks=int(settings["max_backtracks"]),
    )
    return solve_sca(instance.cals, instance.model, instance.budget, cfg, seed=seed)


def _run_bcd(instance: ProblemInstance, settings: Dict[str, Any], seed: int) -> OptimizerResult:
    cfg = BcdConfig(
        delta0=_voronoi_min(instance).delta,
        max_iters=settings["max_iters"],
        tolerance=float(settings["tolerance"]),
    )
    return solve_bcd(instance.cals, instance.model, instance.budget, cfg, seed=seed)


def _voronoi_runner(variant: str) -> Callable[[ProblemInstance, Dict[str, Any], int], OptimizerResult]:
    def run(instance: ProblemInstance, settings: Dict[str, Any], seed: int) -> OptimizerResult:
        return solve_voronoi(instance.deployment, instance.cals, instance.model, instance.budget, variant, instance.cells)

    return run


def _run_knn(instance: ProblemInstance, settings: Dict[str, Any], seed: int) -> OptimizerResult:
    cfg = KnnConfig(k=int(settings["k"]), max_sweeps=settings["max_sweeps"], quadrature=int(settings["quadrature"]))
    return solve_knn_bayes(
        instance.deployment, instance.cals, instance.model, instance.budget, cfg, seed=seed, cells=instance.cells
    )


def _run_ga(instance: ProblemInstance, settings: Dict[str, Any], seed: int) -> OptimizerResult:
    return solve_ga(instance.cals, instance.model, instance.budget, _evo_config(settings), seed=seed)


def _run_pso(instance: ProblemInstance, settings: Dict[str, Any], seed: int) -> OptimizerResult:
    seed_delta = _voronoi_min(instance).delta if settings.get("voronoi_seeded") else None
    return solve_pso(
        instance.cals, instance.model, instance.budget, _evo_config(settings), seed=seed, seed_delta=seed_delta
    )


def _run_qlearn(
    instance: ProblemInstance, settings: Dict[str, Any], seed: int, reward: RewardConfig
) -> OptimizerResult:
    fields = QConfig.__dataclass_fields__
    qcfg = QConfig(**{key: value for key, value in settings.items() if key in fields})
    return solve_qlearning(
        instance.deployment,
        instance.cals,
        instance.model,
        instance.budget,
        qcfg,
        seed=seed,
        reward_cfg=reward,
        range_factor=instance.range_factor,
    )


_RUNNERS: Dict[str, Callable[[ProblemInstance, Dict[str, Any], int], OptimizerResult]] = {
    "equal": _run_equal,
    "sca": _run_sca,
    "bcd": _run_bcd,
    "voronoi_min": _voronoi_runner("min"),
    "voronoi_mean": _voronoi_runner("mean"),
    "voronoi_max": _voronoi_runner("max"),
    "knn": _run_knn,
    "ga": _run_ga,
    "pso": _run_pso,
}


def reward_from_config(config: Dict[str, Any]) -> RewardConfig:
    reward = config.get("reward", {})
    return RewardConfig(**{key: float(value) for key, value in reward.items() if key in RewardConfig.__dataclass_fields__})


def run_method(tag: str, instance: ProblemInstance, config: Dict[str, Any], seed: int = 0) -> OptimizerResult:
    """Run the method named by ``tag`` with its settings from ``config``.

    SCA and BCD start from the Voronoi-(i) thresholds; PSO is seeded with them
    when ``methods.pso.voronoi_seeded`` is set. The returned result always
    carries ``seed``.
    """

    if tag not in METHOD_TAGS:
        raise DomainError(f"unknown method {tag!r}; expected one of {', '.join(METHOD_TAGS)}")
    settings = get_method_settings(config, tag)
    if tag == "qlearn":
        result = _run_qlearn(instance, settings, seed, reward_from_config(config))
    else:
        result = _RUNNERS[tag](instance, settings, seed)
    return replace(result, seed=seed)


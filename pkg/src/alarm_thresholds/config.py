import os
from copy import deepcopy
from typing import Any, Dict, Iterable, Optional, Tuple

import yaml

from .network import Area, SensingModel

METHOD_TAGS: Tuple[str, ...] = (
    "equal",
    "sca",
    "bcd",
    "voronoi_min",
    "voronoi_mean",
    "voronoi_max",
    "knn",
    "ga",
    "pso",
    "qlearn",
)

REQUIRED_PATH_KEYS: Iterable[str] = ("output_dir", "cache_path")

QLEARN_INIT_MODES = ("voronoi", "random", "ones")

DEFAULT_METHODS: Dict[str, Dict[str, Any]] = {
    "equal": {"tolerance": 1e-12},
    "sca": {"max_iters": None, "trust_radius": 1.0, "tolerance": 1e-6, "inner_iters": 200, "max_backtracks": 8},
    "bcd": {"max_iters": None, "tolerance": 1e-6},
    "voronoi_min": {},
    "voronoi_mean": {},
    "voronoi_max": {},
    "knn": {"k": 4, "max_sweeps": None, "quadrature": 16},
    "ga": {
        "population": 40,
        "generations": None,
        "mutation_rate": 0.2,
        "mutation_scale": 0.5,
        "crossover_rate": 0.9,
        "elitism": 2,
        "tournament": 3,
    },
    "pso": {
        "population": 30,
        "generations": None,
        "inertia": 0.7,
        "cognitive": 1.5,
        "social": 1.5,
        "voronoi_seeded": True,
    },
    "qlearn": {
        "levels": 20,
        "episodes": 200,
        "steps": None,
        "learning_rate": 0.5,
        "discount": 0.9,
        "epsilon_start": 1.0,
        "epsilon_end": 0.05,
        "init": "voronoi",
    },
}

DEFAULT_CONFIG: Dict[str, Any] = {
    "area": {"length": 50.0, "height": 50.0},
    "sensing": {"eta": 1.0, "alpha": 0.1, "range_factor": 200.0},
    "error_budget": 0.08,
    "calibration": {"samples": 20000, "grid_points": 64},
    "simulation": {"ttis": 100000},
    "sweep": {
        "profile": "desk",
        "n_values": [25, 50, 100],
        "deployments": 20,
        "master_seed": 2024,
        "workers": 1,
        "methods": list(METHOD_TAGS),
        "include_timing": False,
    },
    "profiles": {
        "desk": {
            "sweep": {"n_values": [25, 50], "deployments": 20},
            "simulation": {"ttis": 100000},
        },
        "full": {
            "sweep": {"n_values": list(range(25, 251, 25)), "deployments": 250},
            "simulation": {"ttis": 1000000},
        },
    },
    "methods": deepcopy(DEFAULT_METHODS),
    "reward": {"mu1": 1.0, "mu2": 1.0, "silent_rho": -1.0, "energy_weight": 0.5},
    "paths": {"output_dir": "results", "cache_path": "results/cache.sqlite"},
}


def _merge_dicts(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge_dicts(merged[key], value)
        else:
            merged[key] = value
    return merged


def _resolve_paths(config: Dict[str, Any], config_path: str) -> Dict[str, Any]:
    base_dir = os.path.dirname(os.path.abspath(config_path))
    resolved = deepcopy(config)
    paths = resolved.get("paths", {})
    resolved_paths: Dict[str, Any] = {}
    for key, value in paths.items():
        if isinstance(value, str) and value and not os.path.isabs(value):
            resolved_paths[key] = os.path.normpath(os.path.join(base_dir, value))
        else:
            resolved_paths[key] = value
    resolved["paths"] = resolved_paths
    return resolved


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_positive_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value > 0


def _check_optional_cap(section: Dict[str, Any], tag: str, key: str) -> None:
    value = section.get(key)
    if value is not None and not _is_positive_int(value):
        raise ValueError(f"Config error: methods.{tag}.{key} must be a positive integer or null")


def _check_unit_interval(section: Dict[str, Any], tag: str, key: str, open_low: bool = False) -> None:
    value = section.get(key)
    low_ok = _is_number(value) and (value > 0 if open_low else value >= 0)
    if not (low_ok and value <= 1):
        bounds = "(0, 1]" if open_low else "[0, 1]"
        raise ValueError(f"Config error: methods.{tag}.{key} must lie in {bounds}")


def _check_positive(section: Dict[str, Any], tag: str, key: str) -> None:
    value = section.get(key)
    if not _is_number(value) or value <= 0:
        raise ValueError(f"Config error: methods.{tag}.{key} must be > 0")


def _validate_methods(methods: Dict[str, Any]) -> None:
    if not isinstance(methods, dict):
        raise ValueError("Config error: methods must be an object")
    for tag in METHOD_TAGS:
        if not isinstance(methods.get(tag, {}), dict):
            raise ValueError(f"Config error: methods.{tag} must be an object")

    sca = methods["sca"]
    _check_optional_cap(sca, "sca", "max_iters")
    _check_positive(sca, "sca", "trust_radius")
    _check_positive(sca, "sca", "tolerance")
    if not _is_positive_int(sca.get("inner_iters")):
        raise ValueError("Config error: methods.sca.inner_iters must be a positive integer")
    if not _is_positive_int(sca.get("max_backtracks")):
        raise ValueError("Config error: methods.sca.max_backtracks must be a positive integer")

    bcd = methods["bcd"]
    _check_optional_cap(bcd, "bcd", "max_iters")
    _check_positive(bcd, "bcd", "tolerance")

    knn = methods["knn"]
    if not _is_positive_int(knn.get("k")):
        raise ValueError("Config error: methods.knn.k must be a positive integer")
    _check_optional_cap(knn, "knn", "max_sweeps")
    if not _is_positive_int(knn.get("quadrature")):
        raise ValueError("Config error: methods.knn.quadrature must be a positive integer")

    for tag in ("ga", "pso"):
        section = methods[tag]
        population = section.get("population")
        if not isinstance(population, int) or isinstance(population, bool) or population < 2:
            raise ValueError(f"Config error: methods.{tag}.population must be an integer >= 2")
        _check_optional_cap(section, tag, "generations")

    ga = methods["ga"]
    for key in ("mutation_rate", "crossover_rate"):
        _check_unit_interval(ga, "ga", key)
    _check_positive(ga, "ga", "mutation_scale")
    elitism = ga.get("elitism")
    if not isinstance(elitism, int) or isinstance(elitism, bool) or not 0 <= elitism < ga["population"]:
        raise ValueError("Config error: methods.ga.elitism must be an integer in [0, population)")
    if not _is_positive_int(ga.get("tournament")):
        raise ValueError("Config error: methods.ga.tournament must be a positive integer")

    pso = methods["pso"]
    for key in ("inertia", "cognitive", "social"):
        value = pso.get(key)
        if not _is_number(value) or value < 0:
            raise ValueError(f"Config error: methods.pso.{key} must be >= 0")
    if not isinstance(pso.get("voronoi_seeded"), bool):
        raise ValueError("Config error: methods.pso.voronoi_seeded must be a boolean")

    qlearn = methods["qlearn"]
    levels = qlearn.get("levels")
    if not isinstance(levels, int) or isinstance(levels, bool) or levels < 2:
        raise ValueError("Config error: methods.qlearn.levels must be an integer >= 2")
    if not _is_positive_int(qlearn.get("episodes")):
        raise ValueError("Config error: methods.qlearn.episodes must be a positive integer")
    _check_optional_cap(qlearn, "qlearn", "steps")
    _check_unit_interval(qlearn, "qlearn", "learning_rate", open_low=True)
    _check_unit_interval(qlearn, "qlearn", "discount", open_low=True)
    _check_unit_interval(qlearn, "qlearn", "epsilon_start")
    _check_unit_interval(qlearn, "qlearn", "epsilon_end")
    if qlearn.get("init") not in QLEARN_INIT_MODES:
        raise ValueError(f"Config error: methods.qlearn.init must be one of {', '.join(QLEARN_INIT_MODES)}")


def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    area = config.get("area")
    if not isinstance(area, dict):
        raise ValueError("Config error: area must be an object")
    for key in ("length", "height"):
        if not _is_number(area.get(key)) or area[key] <= 0:
            raise ValueError(f"Config error: area.{key} must be > 0")

    sensing = config.get("sensing")
    if not isinstance(sensing, dict):
        raise ValueError("Config error: sensing must be an object")
    eta = sensing.get("eta")
    alpha = sensing.get("alpha")
    range_factor = sensing.get("range_factor")
    if not _is_number(eta) or eta <= 0:
        raise ValueError("Config error: sensing.eta must be > 0")
    if not _is_number(alpha) or not 0 < alpha <= 1:
        raise ValueError("Config error: sensing.alpha must lie in (0, 1]")
    if range_factor is not None and (not _is_number(range_factor) or range_factor <= 0):
        raise ValueError("Config error: sensing.range_factor must be > 0 or null")

    budget = config.get("error_budget")
    if not _is_number(budget) or not 0 < budget < alpha:
        raise ValueError("Config error: error_budget must lie in (0, sensing.alpha)")

    calibration = config.get("calibration", {})
    samples = calibration.get("samples")
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 10_000:
        raise ValueError("Config error: calibration.samples must be an integer >= 10000")
    grid_points = calibration.get("grid_points")
    if not isinstance(grid_points, int) or isinstance(grid_points, bool) or grid_points < 2:
        raise ValueError("Config error: calibration.grid_points must be an integer >= 2")

    if not _is_positive_int(config.get("simulation", {}).get("ttis")):
        raise ValueError("Config error: simulation.ttis must be >= 1")

    sweep = config.get("sweep")
    if not isinstance(sweep, dict):
        raise ValueError("Config error: sweep must be an object")
    n_values = sweep.get("n_values")
    if not isinstance(n_values, list) or not n_values or not all(_is_positive_int(n) for n in n_values):
        raise ValueError("Config error: sweep.n_values must be a non-empty list of positive integers")
    if not _is_positive_int(sweep.get("deployments")):
        raise ValueError("Config error: sweep.deployments must be >= 1")
    seed = sweep.get("master_seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ValueError("Config error: sweep.master_seed must be a non-negative integer")
    if not _is_positive_int(sweep.get("workers")):
        raise ValueError("Config error: sweep.workers must be >= 1")
    methods = sweep.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ValueError("Config error: sweep.methods must be a non-empty list")
    unknown = [tag for tag in methods if tag not in METHOD_TAGS]
    if unknown:
        raise ValueError(f"Config error: sweep.methods has unknown tags: {', '.join(map(str, unknown))}")
    if not isinstance(sweep.get("include_timing"), bool):
        raise ValueError("Config error: sweep.include_timing must be a boolean")
    if sweep.get("profile") not in config.get("profiles", {}):
        raise ValueError("Config error: sweep.profile must name an entry under profiles")

    _validate_methods(config.get("methods"))

    reward = config.get("reward", {})
    for key in ("mu1", "mu2", "silent_rho", "energy_weight"):
        if not _is_number(reward.get(key)):
            raise ValueError(f"Config error: reward.{key} must be a number")
    if reward["energy_weight"] < 0:
        raise ValueError("Config error: reward.energy_weight must be >= 0")

    paths = config.get("paths")
    if not isinstance(paths, dict):
        raise ValueError("Config error: paths must be an object")
    for key in REQUIRED_PATH_KEYS:
        value = paths.get(key)
        if not isinstance(value, str) or not value.strip():
            raise ValueError(f"Config error: paths.{key} must be a non-empty string")

    return config


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    config = deepcopy(DEFAULT_CONFIG)
    config_path: Optional[str] = None
    if path is None:
        if os.path.exists("config.yaml"):
            path = "config.yaml"
        elif os.path.exists("config.yml"):
            path = "config.yml"
    if path and not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    if path and os.path.exists(path):
        config_path = path
        with open(path, "r", encoding="utf-8") as f:
            try:
                loaded = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ValueError(f"Config error: {path} is not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValueError("Config error: root YAML node must be an object")
        config = _merge_dicts(config, loaded)
    if config_path:
        config = _resolve_paths(config, config_path)
    return validate_config(config)


def apply_profile(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    profiles = config.get("profiles", {})
    if name not in profiles:
        raise ValueError(f"Config error: unknown profile {name!r}")
    profile = profiles[name]
    updated = _merge_dicts(config, {key: profile[key] for key in ("sweep", "simulation") if key in profile})
    updated["sweep"]["profile"] = name
    return validate_config(updated)


def get_path(config: Dict[str, Any], key: str) -> str:
    return config["paths"][key]


def get_area(config: Dict[str, Any]) -> Area:
    return Area(length=float(config["area"]["length"]), height=float(config["area"]["height"]))


def get_sensing_model(config: Dict[str, Any]) -> SensingModel:
    return SensingModel(eta=float(config["sensing"]["eta"]), alpha=float(config["sensing"]["alpha"]))


def get_range_factor(config: Dict[str, Any]) -> Optional[float]:
    value = config["sensing"].get("range_factor")
    return None if value is None else float(value)


def get_method_settings(config: Dict[str, Any], tag: str) -> Dict[str, Any]:
    if tag not in METHOD_TAGS:
        raise ValueError(f"Config error: unknown method tag {tag!r}")
    return _merge_dicts(DEFAULT_METHODS[tag], config.get("methods", {}).get(tag, {}) or {})

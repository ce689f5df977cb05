import os
from copy import deepcopy

import pytest
import yaml

from alarm_thresholds.config import (
    DEFAULT_CONFIG,
    _merge_dicts,
    apply_profile,
    get_area,
    get_method_settings,
    get_range_factor,
    get_sensing_model,
    load_config,
    validate_config,
)


def _write(tmp_path, data):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


def test_defaults_are_valid():
    config = validate_config(deepcopy(DEFAULT_CONFIG))
    assert get_area(config).measure == 2500.0
    model = get_sensing_model(config)
    assert (model.eta, model.alpha) == (1.0, 0.1)
    assert config["error_budget"] == 0.08
    assert get_range_factor(config) == 200.0
    assert config["reward"]["energy_weight"] == 0.5


def test_yaml_overrides_merge_and_paths_resolve(tmp_path):
    path = _write(tmp_path, {"sensing": {"eta": 0.5}, "paths": {"output_dir": "runs"}})
    config = load_config(path)
    assert config["sensing"]["eta"] == 0.5
    assert config["sensing"]["alpha"] == 0.1
    assert config["paths"]["output_dir"] == os.path.join(str(tmp_path), "runs")


def test_missing_explicit_path_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "absent.yaml"))


def test_null_range_factor_disables_the_cap(tmp_path):
    config = load_config(_write(tmp_path, {"sensing": {"range_factor": None}}))
    assert get_range_factor(config) is None


@pytest.mark.parametrize(
    "override",
    [
        {"area": {"length": 0}},
        {"sensing": {"eta": -1.0}},
        {"sensing": {"alpha": 1.5}},
        {"error_budget": 0.1},
        {"calibration": {"samples": 500}},
        {"sweep": {"n_values": []}},
        {"sweep": {"methods": ["equal", "simplex"]}},
        {"sweep": {"workers": 0}},
        {"sweep": {"profile": "huge"}},
        {"methods": {"ga": {"mutation_rate": 2.0}}},
        {"methods": {"ga": {"elitism": 40}}},
        {"methods": {"pso": {"population": 1}}},
        {"methods": {"qlearn": {"levels": 1}}},
        {"methods": {"qlearn": {"init": "greedy"}}},
        {"methods": {"knn": {"k": 0}}},
        {"methods": {"sca": {"max_iters": 0}}},
        {"reward": {"energy_weight": -1.0}},
        {"paths": {"cache_path": ""}},
    ],
)
def test_invalid_values_raise_config_error(override):
    with pytest.raises(ValueError, match="Config error"):
        validate_config(_merge_dicts(DEFAULT_CONFIG, override))


def test_root_must_be_mapping(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(str(path))


def test_profiles_override_sweep_and_simulation():
    config = apply_profile(deepcopy(DEFAULT_CONFIG), "desk")
    assert config["sweep"]["n_values"] == [25, 50]
    assert config["simulation"]["ttis"] == 100000
    with pytest.raises(ValueError):
        apply_profile(deepcopy(DEFAULT_CONFIG), "nightly")


def test_method_settings_fill_defaults():
    config = _merge_dicts(DEFAULT_CONFIG, {"methods": {"ga": {"population": 12}}})
    settings = get_method_settings(config, "ga")
    assert settings["population"] == 12
    assert settings["tournament"] == 3
    assert get_method_settings(config, "voronoi_max") == {}
    with pytest.raises(ValueError):
        get_method_settings(config, "simplex")


def test_malformed_yaml_is_a_config_error(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("area: [unclosed\n", encoding="utf-8")
    with pytest.raises(ValueError, match="Config error"):
        load_config(str(path))

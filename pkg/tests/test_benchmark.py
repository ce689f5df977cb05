import json
import math

import numpy as np
import pytest

from alarm_thresholds.benchmark import equal_delta_asymptotic, single_device_threshold, solve_equal_delta
from alarm_thresholds.feasibility import (
    OptimizerResult,
    check_feasibility,
    iteration_cap,
    log_threshold_bounds,
    scale_to_budget,
)
from alarm_thresholds.metrics import ErrorBudget, expected_p_e
from alarm_thresholds.network import DomainError, SensingModel

from conftest import SQUARE_W


def test_equal_delta_sits_on_the_budget_boundary(model, budget, make_cals):
    cals = make_cals([SQUARE_W] * 10)
    result = solve_equal_delta(cals, model, budget)
    assert result.method == "equal"
    assert result.feasible
    assert len(set(result.delta)) == 1
    looser = [min(1.0, d * 1.001) for d in result.delta]
    assert expected_p_e(cals, model, looser) > budget.E


def test_equal_delta_single_device_matches_closed_form(model, budget, make_cals):
    result = solve_equal_delta(make_cals([SQUARE_W]), model, budget)
    expected = single_device_threshold(SQUARE_W, model, budget)
    assert -math.log(expected) < math.sqrt(200.0)
    assert result.delta[0] == pytest.approx(expected, rel=1e-6)
    assert result.error == pytest.approx(budget.E, abs=1e-9)


@pytest.mark.parametrize("eta", [0.5, 1.0, 2.0])
def test_single_device_threshold_scales_with_eta(eta, make_cals):
    model = SensingModel(eta=eta, alpha=0.1)
    budget = ErrorBudget.for_model(0.08, model)
    cals = make_cals([SQUARE_W], z_max=math.inf)
    delta = single_device_threshold(SQUARE_W, model, budget)
    assert expected_p_e(cals, model, [delta]) == pytest.approx(budget.E, rel=1e-9)
    assert solve_equal_delta(cals, model, budget).delta[0] == pytest.approx(delta, rel=1e-6)


def test_equal_delta_reports_infeasible_sparse_network(model, budget, make_cals):
    result = solve_equal_delta(make_cals([1e6, 1e6]), model, budget)
    assert not result.feasible
    assert result.error > budget.E


def test_equal_delta_needs_a_device(model, budget):
    with pytest.raises(DomainError):
        solve_equal_delta([], model, budget)


def test_asymptotic_threshold_example():
    assert equal_delta_asymptotic(SQUARE_W, 100) == pytest.approx(2.126e-3, rel=1e-3)


@pytest.mark.parametrize(
    "w, n, target",
    [(SQUARE_W, 1, 0.9), (SQUARE_W, 10, 1.0), (SQUARE_W, 10, 0.0), (0.0, 10, 0.9)],
)
def test_asymptotic_threshold_rejects_bad_inputs(w, n, target):
    with pytest.raises(DomainError):
        equal_delta_asymptotic(w, n, target)


def test_asymptote_gap_to_bisection_shrinks_with_n(model, budget, make_cals):
    target = 1.0 - budget.E / model.alpha
    gaps = []
    for n in (50, 100, 200, 400):
        bisected = solve_equal_delta(make_cals([SQUARE_W] * n), model, budget).delta[0]
        asymptotic = equal_delta_asymptotic(SQUARE_W, n, success_target=target)
        gaps.append(1.0 - asymptotic / bisected)
    assert all(later < earlier for earlier, later in zip(gaps, gaps[1:]))


def test_all_silent_thresholds_are_infeasible(model, budget, make_cals):
    status = check_feasibility(make_cals([SQUARE_W] * 3), model, [1.0] * 3, budget)
    assert not status.feasible
    assert status.error == pytest.approx(model.alpha)
    assert status.margin == pytest.approx(budget.E - model.alpha)


@pytest.mark.parametrize("value, n, expected", [(None, 1, 1), (None, 10, 4), (None, 100, 10), (7, 100, 7)])
def test_iteration_cap_defaults_to_sqrt_n(value, n, expected):
    assert iteration_cap(value, n) == expected


def test_log_threshold_bounds_follow_cap(model, make_cals):
    capped = log_threshold_bounds(make_cals([100.0, 400.0]), model)
    np.testing.assert_allclose(capped, [math.sqrt(200.0)] * 2)
    uncapped = log_threshold_bounds(make_cals([100.0], z_max=math.inf), model)
    assert uncapped[0] == pytest.approx(math.sqrt(20.0 * 100.0))


def test_scale_to_budget_respects_direction_shape(model, budget, make_cals):
    cals = make_cals([SQUARE_W, SQUARE_W / 2])
    search = scale_to_budget(cals, model, budget, [2.0, 1.0])
    assert search.feasible
    assert search.log_thresholds[0] == pytest.approx(2.0 * search.log_thresholds[1])
    assert search.error <= budget.E + 1e-9


def test_scale_to_budget_treats_zero_direction_as_equal(model, budget, make_cals):
    cals = make_cals([SQUARE_W] * 4)
    zero = scale_to_budget(cals, model, budget, [0.0] * 4)
    ones = scale_to_budget(cals, model, budget, [1.0] * 4)
    np.testing.assert_allclose(zero.log_thresholds, ones.log_thresholds)


@pytest.mark.parametrize("direction", [[1.0], [1.0, -1.0], [1.0, float("nan")]])
def test_scale_to_budget_rejects_bad_direction(model, budget, make_cals, direction):
    with pytest.raises(DomainError):
        scale_to_budget(make_cals([SQUARE_W, SQUARE_W]), model, budget, direction)


def test_optimizer_result_json_round_trip(model, budget, make_cals):
    result = solve_equal_delta(make_cals([SQUARE_W] * 3), model, budget)
    restored = OptimizerResult.from_dict(json.loads(json.dumps(result.to_dict())))
    assert restored == result


def test_error_budget_for_model_uses_alpha(model):
    assert ErrorBudget.for_model(0.05, model).alpha == model.alpha

import math

import numpy as np
import pytest

from alarm_thresholds.metrics import (
    ErrorBudget,
    EventPoint,
    angular_activation_estimate,
    check_thresholds,
    conditional_activation,
    coverage_probabilities,
    event_breakdown,
    expected_breakdown_geometric,
    expected_p_e,
    expected_p_miss_independent,
    expected_p_suc,
    expected_power,
    grad_expected_p_e,
    grad_expected_power,
    hessian_expected_p_e,
    p_e_at_event,
    p_miss_at_event,
    p_suc_at_event,
)
from alarm_thresholds.network import Device, DomainError, calibrate_w, generate_deployment
from alarm_thresholds.utils import make_rng

from conftest import SQUARE_W


def _central_gradient(fn, delta, step=1e-6):
    grad = np.zeros(len(delta))
    for j in range(len(delta)):
        up = np.array(delta, dtype=float)
        down = np.array(delta, dtype=float)
        up[j] += step
        down[j] -= step
        grad[j] = (fn(up) - fn(down)) / (2 * step)
    return grad


def test_check_thresholds_rejects_bad_vectors():
    with pytest.raises(DomainError):
        check_thresholds([0.5, 0.5], 3)
    with pytest.raises(DomainError):
        check_thresholds([0.5, 0.0], 2)
    with pytest.raises(DomainError):
        check_thresholds([1.2], 1)


def test_error_budget_bounds(model):
    assert ErrorBudget.for_model(0.08, model).E == 0.08
    with pytest.raises(DomainError):
        ErrorBudget.for_model(0.1, model)


def test_expected_power_limits(model, make_cals):
    cals = make_cals([SQUARE_W] * 3, z_max=math.inf)
    assert expected_power(cals, model, [1.0, 1.0, 1.0]) == 0.0
    assert expected_power(cals, model, [1e-300] * 3) == pytest.approx(model.alpha)


def test_expected_power_two_devices(model, make_cals):
    cals = make_cals([1591.55, 1591.55])
    assert expected_power(cals, model, [0.1, 0.5]) == pytest.approx(3.62e-4, rel=1e-3)


def test_expected_power_length_mismatch(model, make_cals):
    with pytest.raises(DomainError):
        expected_power(make_cals([1591.55]), model, [0.5, 0.5])


def test_expected_p_suc_single_device(model, make_cals):
    cals = make_cals([1591.55])
    delta = 0.2
    expected = model.alpha * (1 - math.exp(-2 * math.log(delta) ** 2 / 1591.55))
    assert expected_p_suc(cals, model, [delta]) == pytest.approx(expected, rel=1e-12)


def test_expected_p_e_all_silent_is_alpha(model, make_cals):
    cals = make_cals([900.0, 1591.55, 2400.0])
    assert expected_p_suc(cals, model, [1.0, 1.0, 1.0]) == 0.0
    assert expected_p_e(cals, model, [1.0, 1.0, 1.0]) == model.alpha


def test_expected_p_e_single_device_near_zero_uncapped(model, make_cals):
    cals = make_cals([1591.55], z_max=math.inf)
    assert expected_p_e(cals, model, [1e-300]) == pytest.approx(0.0, abs=1e-12)


def test_error_terms_partition_alpha(model, make_cals):
    rng = np.random.default_rng(3)
    cals = make_cals(rng.uniform(800, 3000, 6))
    delta = rng.uniform(1e-5, 0.9, 6)
    miss = expected_p_miss_independent(cals, model, delta)
    success = expected_p_suc(cals, model, delta)
    collision = model.alpha - miss - success
    assert 0.0 <= miss <= model.alpha
    assert collision >= -1e-15
    assert 0.0 <= expected_p_e(cals, model, delta) <= model.alpha


@pytest.mark.parametrize("n", [2, 3, 5])
def test_grad_expected_p_e_matches_finite_differences(model, make_cals, n):
    rng = np.random.default_rng(100 + n)
    for _ in range(50):
        cals = make_cals(rng.uniform(500, 3000, n))
        delta = rng.uniform(0.05, 0.95, n)
        analytic = grad_expected_p_e(cals, model, delta)
        numeric = _central_gradient(lambda d: expected_p_e(cals, model, d), delta)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-10)


def test_grad_expected_p_e_two_device_example(model, make_cals):
    cals = make_cals([1591.55, 1591.55])
    analytic = grad_expected_p_e(cals, model, [0.3, 0.5])
    numeric = _central_gradient(lambda d: expected_p_e(cals, model, d), [0.3, 0.5])
    assert np.max(np.abs(analytic - numeric) / np.abs(numeric)) <= 1e-5


def test_grad_expected_p_e_symmetry_and_flat_edge(model, make_cals):
    cals = make_cals([SQUARE_W] * 4)
    grad = grad_expected_p_e(cals, model, [0.2] * 4)
    assert np.allclose(grad, grad[0])
    grad = grad_expected_p_e(cals, model, [0.2, 0.3, 0.4, 1.0])
    assert grad[3] == 0.0


def test_grad_expected_power_matches_finite_differences(model, make_cals):
    cals = make_cals([700.0, 1591.55, 2600.0])
    delta = np.array([0.15, 0.4, 0.7])
    numeric = _central_gradient(lambda d: expected_power(cals, model, d), delta)
    np.testing.assert_allclose(grad_expected_power(cals, model, delta), numeric, rtol=1e-5, atol=1e-12)


def test_hessian_witness_point_is_not_convex(model, make_cals):
    cals = make_cals([1591.55, 1591.55])
    hessian = hessian_expected_p_e(cals, model, [0.3, 0.5])
    assert np.max(np.abs(hessian - hessian.T)) <= 1e-9
    assert np.min(np.linalg.eigvalsh(hessian)) < 0


def test_hessian_matches_gradient_differences(model, make_cals):
    rng = np.random.default_rng(17)
    cals = make_cals(rng.uniform(600, 2500, 3))
    delta = rng.uniform(0.1, 0.9, 3)
    hessian = hessian_expected_p_e(cals, model, delta)
    numeric = np.zeros((3, 3))
    for k in range(3):
        numeric[:, k] = _central_gradient(lambda d: grad_expected_p_e(cals, model, d)[k], delta)
    np.testing.assert_allclose(hessian, numeric, rtol=1e-4, atol=1e-10)


def test_hessian_rejects_boundary(model, make_cals):
    with pytest.raises(DomainError):
        hessian_expected_p_e(make_cals([1591.55, 1591.55]), model, [1.0, 0.5])


def test_coverage_probabilities_respect_cap(model, make_cals):
    cals = make_cals([1591.55])
    coverage = coverage_probabilities(cals, model, [1e-200])
    assert coverage[0] == pytest.approx(-math.expm1(-400 / 1591.55))


def test_event_at_device_is_never_missed(model, make_deployment):
    dep = make_deployment([(10.0, 10.0), (40.0, 40.0)])
    assert p_miss_at_event(dep, model, [0.5, 0.5], EventPoint(10.0, 10.0)) == 0.0


def test_event_missed_when_all_silent(model, make_deployment):
    dep = make_deployment([(10.0, 10.0), (40.0, 40.0)])
    assert p_miss_at_event(dep, model, [1.0, 1.0], EventPoint(20.0, 30.0)) == model.alpha
    assert p_e_at_event(dep, model, [1.0, 1.0], EventPoint(20.0, 30.0)) == model.alpha


def test_single_transmitter_is_success(model, make_deployment):
    dep = make_deployment([(25.0, 25.0)])
    assert p_suc_at_event(dep, model, [math.exp(-5)], EventPoint(27.0, 25.0)) == model.alpha
    assert p_e_at_event(dep, model, [math.exp(-5)], EventPoint(27.0, 25.0)) == 0.0


def test_two_transmitters_collide(model, make_deployment):
    dep = make_deployment([(20.0, 25.0), (30.0, 25.0)])
    breakdown = event_breakdown(dep, model, [math.exp(-6), math.exp(-6)], EventPoint(25.0, 25.0))
    assert breakdown.success == 0.0
    assert breakdown.collision == model.alpha
    assert breakdown.error == model.alpha


def test_event_breakdown_partitions_alpha(model, square):
    dep = generate_deployment(square, 8, seed=2)
    rng = np.random.default_rng(8)
    delta = rng.uniform(1e-4, 1.0, 8)
    for x, y in rng.uniform(0, 50, size=(50, 2)):
        parts = event_breakdown(dep, model, delta, EventPoint(float(x), float(y)))
        assert parts.miss + parts.success + parts.collision == pytest.approx(model.alpha)
        assert parts.error == pytest.approx(parts.miss + parts.collision)


def test_geometric_single_interior_disk(model, make_deployment):
    dep = make_deployment([(25.0, 25.0)])
    parts = expected_breakdown_geometric(dep, model, [math.exp(-5)])
    assert parts.success == pytest.approx(model.alpha * math.pi * 25 / 2500, rel=1e-4)
    assert parts.collision == pytest.approx(0.0, abs=1e-12)
    assert parts.miss + parts.success == pytest.approx(model.alpha)


def test_geometric_corner_disk_is_a_quarter(model, make_deployment):
    dep = make_deployment([(0.0, 0.0)])
    parts = expected_breakdown_geometric(dep, model, [math.exp(-10)])
    assert parts.success == pytest.approx(model.alpha * math.pi * 100 / 4 / 2500, rel=1e-4)


def test_geometric_coincident_devices_always_collide(model, make_deployment):
    dep = make_deployment([(20.0, 30.0), (20.0, 30.0)])
    parts = expected_breakdown_geometric(dep, model, [math.exp(-6)] * 2)
    assert parts.success == pytest.approx(0.0, abs=1e-12)
    assert parts.collision == pytest.approx(model.alpha * math.pi * 36 / 2500, rel=1e-4)
    assert parts.error == pytest.approx(model.alpha)


def test_geometric_silent_network_misses_everything(model, square):
    dep = generate_deployment(square, 4, seed=3)
    parts = expected_breakdown_geometric(dep, model, [1.0] * 4)
    assert parts.miss == model.alpha
    assert parts.error == model.alpha


def test_closed_form_error_stays_within_independence_gap(model, square):
    # closed form assumes independent coverage; overlapping disks move the exact value
    rng = make_rng(41)
    gaps = []
    for index, n in enumerate((2, 3, 5, 10, 2, 3, 5, 10, 5, 10)):
        dep = generate_deployment(square, n, seed=700 + index)
        delta = np.exp(-rng.uniform(5.0, 14.0, n))
        cals = calibrate_w(dep, model, samples=20_000, seed=index)
        exact = expected_breakdown_geometric(dep, model, delta).error
        gaps.append(expected_p_e(cals, model, delta) - exact)
    assert max(abs(gap) for gap in gaps) <= 0.4 * model.alpha
    assert any(abs(gap) > 1e-3 for gap in gaps)


def test_event_outside_area_is_rejected(model, make_deployment):
    dep = make_deployment([(10.0, 10.0)])
    with pytest.raises(DomainError):
        p_miss_at_event(dep, model, [0.5], EventPoint(-1.0, 10.0))


def test_conditional_activation_interior_example(model, make_deployment):
    dep = make_deployment([(25.0, 25.0), (30.0, 25.0)])
    h, j = dep.devices
    value = conditional_activation(dep, model, math.exp(-4), h, j, 3.0)
    assert value == pytest.approx(math.acos(0.6) / math.pi, rel=1e-12)
    assert angular_activation_estimate(dep, model, math.exp(-4), h, j, 3.0) == pytest.approx(value, abs=0.01)


def test_conditional_activation_clamps(model, make_deployment):
    dep = make_deployment([(25.0, 25.0), (30.0, 25.0)])
    h, j = dep.devices
    assert conditional_activation(dep, model, math.exp(-20), h, j, 3.0) == 1.0
    assert conditional_activation(dep, model, 1.0, h, j, 3.0) == 0.0


def test_conditional_activation_is_monotone(model, make_deployment):
    dep = make_deployment([(20.0, 22.0), (27.0, 26.0)])
    h, j = dep.devices
    values = [conditional_activation(dep, model, d, h, j, 4.0) for d in np.linspace(1e-5, 1.0, 60)]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_conditional_activation_edge_device_falls_back(model, make_deployment):
    dep = make_deployment([(1.0, 25.0), (3.0, 25.0)])
    h, j = dep.devices
    value = conditional_activation(dep, model, math.exp(-8), h, j, 10.0)
    assert value == angular_activation_estimate(dep, model, math.exp(-8), h, j, 10.0)


def test_conditional_activation_rejects_bad_pairs(model, make_deployment):
    dep = make_deployment([(10.0, 10.0), (10.0, 10.0)])
    h, j = dep.devices
    with pytest.raises(DomainError):
        conditional_activation(dep, model, 0.5, h, h, 2.0)
    with pytest.raises(DomainError):
        conditional_activation(dep, model, 0.5, h, j, 2.0)
    with pytest.raises(DomainError):
        conditional_activation(dep, model, 0.5, h, Device(2, 12.0, 10.0), 0.0)

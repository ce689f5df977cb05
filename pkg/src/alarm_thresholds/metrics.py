import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import shapely
from shapely.geometry import Point, Polygon, box

from .network import CalibratedCdf, Deployment, Device, DomainError, SensingModel

ANGULAR_SAMPLES = 720
DISK_QUAD_SEGMENTS = 256


@dataclass(frozen=True)
class EventPoint:
    x: float
    y: float


@dataclass(frozen=True)
class ErrorBudget:
    E: float
    alpha: float

    def __post_init__(self) -> None:
        if not 0 < self.E < self.alpha:
            raise DomainError(f"error budget must lie in (0, alpha={self.alpha}), got {self.E}")

    @classmethod
    def for_model(cls, E: float, model: SensingModel) -> "ErrorBudget":
        return cls(E=float(E), alpha=model.alpha)


@dataclass(frozen=True)
class EventBreakdown:
    miss: float
    success: float
    collision: float
    error: float


def check_thresholds(delta: Sequence[float], n: int) -> np.ndarray:
    values = np.array(delta, dtype=float).reshape(-1)
    if values.size != n:
        raise DomainError(f"expected {n} thresholds, got {values.size}")
    if np.any(np.isnan(values)) or np.any(values <= 0) or np.any(values > 1):
        raise DomainError("every threshold must lie in (0, 1]")
    return values


def _calibration_arrays(cals: Sequence[CalibratedCdf]):
    w = np.array([cal.w for cal in cals], dtype=float)
    z_max = np.array([cal.z_max for cal in cals], dtype=float)
    return w, z_max


def _exponents(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]):
    """Return (a, capped): a_j = 2 z_j / w_j with z_j = ln^2(delta_j)/eta^2 clamped to the valid range."""

    values = check_thresholds(delta, len(cals))
    w, z_max = _calibration_arrays(cals)
    z = np.log(values) ** 2 / model.eta**2
    capped = z >= z_max
    z = np.minimum(z, z_max)
    return 2.0 * z / w, capped, values, w


def _exponent_derivatives(values: np.ndarray, w: np.ndarray, capped: np.ndarray, eta: float):
    log_delta = np.log(values)
    first = 4.0 * log_delta / (eta**2 * w * values)
    second = 4.0 * (1.0 - log_delta) / (eta**2 * w * values**2)
    first = np.where(capped, 0.0, first)
    second = np.where(capped, 0.0, second)
    return first, second


def coverage_probabilities(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> np.ndarray:
    a, _, _, _ = _exponents(cals, model, delta)
    return -np.expm1(-a)


def expected_power(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> float:
    coverage = coverage_probabilities(cals, model, delta)
    return float(model.alpha * np.mean(coverage))


def expected_p_suc(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> float:
    a, _, _, _ = _exponents(cals, model, delta)
    total = float(np.sum(a))
    # alpha * sum_h F_h * prod_{j != h} (1 - F_j)
    value = model.alpha * float(np.sum(-np.expm1(-a) * np.exp(a - total)))
    return min(model.alpha, max(0.0, value))


def expected_p_e(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> float:
    return min(model.alpha, max(0.0, model.alpha - expected_p_suc(cals, model, delta)))


def expected_p_miss_independent(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> float:
    a, _, _, _ = _exponents(cals, model, delta)
    return float(model.alpha * math.exp(-float(np.sum(a))))


def grad_expected_power(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> np.ndarray:
    a, capped, values, w = _exponents(cals, model, delta)
    first, _ = _exponent_derivatives(values, w, capped, model.eta)
    return model.alpha / len(cals) * np.exp(-a) * first


def _leave_one_out(a: np.ndarray):
    total = float(np.sum(a))
    return np.exp(a - total), math.exp(-total)


def grad_expected_p_e(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> np.ndarray:
    a, capped, values, w = _exponents(cals, model, delta)
    first, _ = _exponent_derivatives(values, w, capped, model.eta)
    n = len(cals)
    leave_out, all_silent = _leave_one_out(a)
    others = float(np.sum(leave_out)) - leave_out
    return model.alpha * (others - n * all_silent) * first


def hessian_expected_p_e(cals: Sequence[CalibratedCdf], model: SensingModel, delta: Sequence[float]) -> np.ndarray:
    values = check_thresholds(delta, len(cals))
    if np.any(values >= 1):
        raise DomainError("Hessian is defined for interior thresholds only")
    a, capped, values, w = _exponents(cals, model, delta)
    first, second = _exponent_derivatives(values, w, capped, model.eta)
    n = len(cals)
    leave_out, all_silent = _leave_one_out(a)
    total = float(np.sum(leave_out))

    # d2 P_e / (da_j da_k) = alpha * (N e^{-A} - sum_{h not in {j,k}} E_h) for j != k
    pair = total - leave_out[:, None] - leave_out[None, :]
    diag_sum = total - leave_out
    np.fill_diagonal(pair, diag_sum)
    curvature = model.alpha * (n * all_silent - pair)
    slope = model.alpha * (diag_sum - n * all_silent)
    hessian = curvature * np.outer(first, first) + np.diag(slope * second)
    return 0.5 * (hessian + hessian.T)


def _check_event(dep: Deployment, e: EventPoint) -> None:
    if not dep.area.contains(e.x, e.y):
        raise DomainError(f"event ({e.x}, {e.y}) lies outside the area")


def transmitters_at_event(dep: Deployment, model: SensingModel, delta: Sequence[float], e: EventPoint) -> np.ndarray:
    values = check_thresholds(delta, dep.n)
    _check_event(dep, e)
    positions = dep.positions()
    distances = np.hypot(positions[:, 0] - e.x, positions[:, 1] - e.y)
    return np.exp(-model.eta * distances) >= values


def event_breakdown(dep: Deployment, model: SensingModel, delta: Sequence[float], e: EventPoint) -> EventBreakdown:
    count = int(np.count_nonzero(transmitters_at_event(dep, model, delta, e)))
    miss = model.alpha if count == 0 else 0.0
    success = model.alpha if count == 1 else 0.0
    collision = model.alpha - miss - success
    return EventBreakdown(miss=miss, success=success, collision=collision, error=model.alpha - success)


def expected_breakdown_geometric(
    dep: Deployment, model: SensingModel, delta: Sequence[float], quad_segs: int = DISK_QUAD_SEGMENTS
) -> EventBreakdown:
    """Area-averaged miss/success/collision of the detection rule, without the independence assumption.

    Device j reports every epicentre within |ln delta_j|/eta, so success is the
    share of the area covered by exactly one clipped disk. This is the quantity
    ``run_slots`` estimates; the closed forms above approximate it with
    independent per-device coverage. No range cap applies.
    """

    values = check_thresholds(delta, dep.n)
    if quad_segs < 1:
        raise DomainError("quad_segs must be >= 1")
    bounds = box(0.0, 0.0, dep.area.length, dep.area.height)
    radii = np.abs(np.log(values)) / model.eta
    disks = [
        Point(device.x, device.y).buffer(float(radius), quad_segs=quad_segs).intersection(bounds)
        if radius > 0
        else Polygon()
        for device, radius in zip(dep.devices, radii)
    ]
    covered = float(shapely.union_all(disks).area)
    single = 0.0
    for j, disk in enumerate(disks):
        if disk.is_empty:
            continue
        others = shapely.union_all(disks[:j] + disks[j + 1 :])
        single += float(disk.difference(others).area)

    measure = dep.area.measure
    miss = model.alpha * max(0.0, 1.0 - covered / measure)
    success = model.alpha * min(1.0, single / measure)
    collision = max(0.0, model.alpha - miss - success)
    return EventBreakdown(miss=miss, success=success, collision=collision, error=model.alpha - success)


def p_miss_at_event(dep: Deployment, model: SensingModel, delta: Sequence[float], e: EventPoint) -> float:
    return event_breakdown(dep, model, delta, e).miss


def p_suc_at_event(dep: Deployment, model: SensingModel, delta: Sequence[float], e: EventPoint) -> float:
    return event_breakdown(dep, model, delta, e).success


def p_e_at_event(dep: Deployment, model: SensingModel, delta: Sequence[float], e: EventPoint) -> float:
    return event_breakdown(dep, model, delta, e).error


def _coverage_radius(model: SensingModel, delta_j: float) -> float:
    if not 0 < delta_j <= 1:
        raise DomainError(f"threshold must lie in (0, 1], got {delta_j!r}")
    return abs(math.log(delta_j)) / model.eta


def _check_pair(dep: Deployment, h: Device, j: Device) -> float:
    if h.id == j.id:
        raise DomainError("conditional activation needs two distinct devices")
    separation = math.hypot(j.x - h.x, j.y - h.y)
    if separation <= 0:
        raise DomainError(f"devices {h.id} and {j.id} share a position")
    return separation


def _angular_fraction(dep: Deployment, h: Device, j: Device, radius: float, d_values: np.ndarray) -> np.ndarray:
    angles = 2.0 * math.pi * (np.arange(ANGULAR_SAMPLES) + 0.5) / ANGULAR_SAMPLES
    xs = h.x + d_values[:, None] * np.cos(angles)[None, :]
    ys = h.y + d_values[:, None] * np.sin(angles)[None, :]
    inside = (xs >= 0) & (xs <= dep.area.length) & (ys >= 0) & (ys <= dep.area.height)
    covered = np.hypot(xs - j.x, ys - j.y) <= radius
    counts = np.count_nonzero(inside, axis=1)
    hits = np.count_nonzero(covered & inside, axis=1)
    return np.where(counts > 0, hits / np.maximum(counts, 1), 0.0)


def angular_activation_estimate(
    dep: Deployment, model: SensingModel, delta_j: float, h: Device, j: Device, d_ih: float
) -> float:
    """Fraction of in-area epicentres at distance d_ih from h that device j detects.

    Deterministic quadrature over equally spaced angles around h.
    """

    _check_pair(dep, h, j)
    if d_ih <= 0:
        raise DomainError("event distance must be positive")
    radius = _coverage_radius(model, delta_j)
    return float(_angular_fraction(dep, h, j, radius, np.array([float(d_ih)]))[0])


def conditional_activation_profile(
    dep: Deployment, model: SensingModel, delta_j: float, h: Device, j: Device, d_values
) -> np.ndarray:
    separation = _check_pair(dep, h, j)
    distances = np.asarray(d_values, dtype=float).reshape(-1)
    if np.any(distances <= 0):
        raise DomainError("event distance must be positive")
    radius = _coverage_radius(model, delta_j)
    edge = min(h.x, h.y, dep.area.length - h.x, dep.area.height - h.y)

    reach = np.maximum(edge, distances)
    cosine = (distances**2 + separation**2 - radius**2) / (2.0 * distances * separation)
    numerator = 2.0 * np.arccos(np.clip(cosine, -1.0, 1.0))
    denominator = 2.0 * math.pi - 8.0 * np.arccos(np.clip(edge / reach, -1.0, 1.0))

    result = np.empty_like(distances)
    closed = denominator > 0
    result[closed] = numerator[closed] / denominator[closed]
    if np.any(~closed):
        result[~closed] = _angular_fraction(dep, h, j, radius, distances[~closed])
    return np.clip(result, 0.0, 1.0)


def conditional_activation(
    dep: Deployment, model: SensingModel, delta_j: float, h: Device, j: Device, d_ih: float
) -> float:
    return float(conditional_activation_profile(dep, model, delta_j, h, j, [d_ih])[0])

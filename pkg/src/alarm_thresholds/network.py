import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import shapely
from scipy import integrate, optimize
from shapely import STRtree
from shapely.geometry import MultiPoint, Point, Polygon, box
from shapely.ops import voronoi_diagram

from .utils import make_rng, read_json, write_json

DEFAULT_RANGE_FACTOR = 200.0
MIN_CALIBRATION_SAMPLES = 10_000
OMEGA_MEAN_SAMPLES = 256
DUPLICATE_JITTER = 1e-9


class DomainError(ValueError):
    pass


class GeometryError(DomainError):
    pass


@dataclass(frozen=True)
class Area:
    length: float
    height: float

    def __post_init__(self) -> None:
        for name, value in (("length", self.length), ("height", self.height)):
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
                raise GeometryError(f"area {name} must be a positive finite number, got {value!r}")

    @property
    def measure(self) -> float:
        return float(self.length) * float(self.height)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.length, self.height)

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.length and 0.0 <= y <= self.height


@dataclass(frozen=True)
class Device:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Deployment:
    area: Area
    devices: Tuple[Device, ...]

    def __post_init__(self) -> None:
        if len(self.devices) < 1:
            raise DomainError("deployment needs at least one device")
        for index, device in enumerate(self.devices):
            if device.id != index:
                raise DomainError(f"device ids must be dense and ordered, got {device.id} at position {index}")
            if not self.area.contains(device.x, device.y):
                raise DomainError(f"device {device.id} at ({device.x}, {device.y}) lies outside the area")

    @property
    def n(self) -> int:
        return len(self.devices)

    def positions(self) -> np.ndarray:
        return np.array([(device.x, device.y) for device in self.devices], dtype=float)


@dataclass(frozen=True)
class SensingModel:
    eta: float
    alpha: float

    def __post_init__(self) -> None:
        if not (isinstance(self.eta, (int, float)) and math.isfinite(self.eta) and self.eta > 0):
            raise DomainError(f"eta must be > 0, got {self.eta!r}")
        if not (isinstance(self.alpha, (int, float)) and 0 < self.alpha <= 1):
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha!r}")


@dataclass(frozen=True)
class DeviceGeometry:
    u: float
    v: float
    R: float


@dataclass(frozen=True)
class CalibratedCdf:
    device_id: int
    w: float
    z_max: float
    tolerance: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and math.isfinite(self.w)):
            raise DomainError(f"calibrated w must be positive and finite, got {self.w!r}")
        if not self.z_max > 0:
            raise DomainError(f"valid range bound must be positive, got {self.z_max!r}")


@dataclass(frozen=True)
class VoronoiCell:
    device_id: int
    vertices: Tuple[Tuple[float, float], ...]
    area: float
    omega_min: float
    omega_mean: float
    omega_max: float


def valid_range(model: SensingModel, range_factor: float = DEFAULT_RANGE_FACTOR) -> float:
    if range_factor is None:
        return math.inf
    if range_factor <= 0:
        raise DomainError("range_factor must be positive or None")
    return range_factor / model.eta**2


def sensing_power(model: SensingModel, d):
    distances = np.asarray(d, dtype=float)
    if np.any(np.isnan(distances)) or np.any(distances < 0):
        raise DomainError("distance must be non-negative")
    power = np.exp(-model.eta * distances)
    return float(power) if power.ndim == 0 else power


def threshold_for_distance(model: SensingModel, d: float) -> float:
    return sensing_power(model, d)


def device_geometry(device: Device, area: Area) -> DeviceGeometry:
    u = max(device.x, area.length - device.x) ** 2
    v = max(device.y, area.height - device.y) ** 2
    R = min(device.x, device.y, area.length - device.x, area.height - device.y)
    return DeviceGeometry(u=u, v=v, R=R)


def exact_cdf_z(geom: DeviceGeometry, area: Area, z: float) -> float:
    """Closed-form CDF of the squared event distance along the x-marginal.

    The arcsin argument sqrt(u/z) is clamped to 1, so for z <= u the value is
    the free-disk law pi*z/(L*H). The result is clamped to [0, 1]; boundary
    truncation is not modelled here (see ``coverage_cdf_z``).
    """

    if z < 0:
        raise DomainError("z must be non-negative")
    if z == 0:
        return 0.0
    ratio = min(1.0, math.sqrt(geom.u / z))
    angle = math.asin(ratio)
    value = (2.0 * z / area.measure) * (angle + 0.5 * math.sin(2.0 * angle))
    return min(1.0, max(0.0, value))


def coverage_cdf_z(device: Device, area: Area, z: float) -> float:
    """Area of the disk of radius sqrt(z) around the device inside the area, over L*H."""

    if z < 0:
        raise DomainError("z must be non-negative")
    if z == 0:
        return 0.0
    radius = math.sqrt(z)
    x0, y0 = device.x, device.y
    lo = max(0.0, x0 - radius)
    hi = min(area.length, x0 + radius)
    if hi <= lo:
        return 0.0

    def column(xp: float) -> float:
        half = math.sqrt(max(0.0, z - (xp - x0) ** 2))
        return max(0.0, min(area.height, y0 + half) - max(0.0, y0 - half))

    # kinks where the circle crosses the bottom or top edge
    breaks = []
    for edge_gap in (y0, area.height - y0):
        if radius > edge_gap:
            offset = math.sqrt(z - edge_gap**2)
            breaks.extend(p for p in (x0 - offset, x0 + offset) if lo < p < hi)
    value, _ = integrate.quad(column, lo, hi, points=sorted(breaks) or None, limit=200, epsabs=1e-12, epsrel=1e-10)
    return min(1.0, value / area.measure)


def empirical_cdf_z(device: Device, area: Area, z, samples: int = 100_000, seed: int = 0):
    z_values = np.asarray(z, dtype=float)
    if np.any(z_values < 0):
        raise DomainError("z must be non-negative")
    rng = make_rng(seed)
    events = rng.uniform(low=(0.0, 0.0), high=(area.length, area.height), size=(samples, 2))
    squared = np.sort(np.sum((events - (device.x, device.y)) ** 2, axis=1))
    cdf = np.searchsorted(squared, z_values, side="right") / samples
    return float(cdf) if cdf.ndim == 0 else cdf


def approx_cdf_z(cal: CalibratedCdf, z):
    z_values = np.asarray(z, dtype=float)
    if np.any(z_values < 0):
        raise DomainError("z must be non-negative")
    cdf = -np.expm1(-2.0 * z_values / cal.w)
    return float(cdf) if cdf.ndim == 0 else cdf


def _log_w_cdf(z: np.ndarray, log_w: float) -> np.ndarray:
    return -np.expm1(-2.0 * z * np.exp(-log_w))


def calibrate_w(
    dep: Deployment,
    model: SensingModel,
    samples: int = 20_000,
    seed: int = 0,
    grid_points: int = 64,
    range_factor: float = DEFAULT_RANGE_FACTOR,
) -> List[CalibratedCdf]:
    if samples < MIN_CALIBRATION_SAMPLES:
        raise DomainError(f"calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {samples}")
    if grid_points < 2:
        raise DomainError("calibration grid needs at least two points")
    area = dep.area
    if area.measure <= 0:
        raise GeometryError("degenerate area")
    z_max = valid_range(model, range_factor)
    rng = make_rng(seed)
    events = rng.uniform(low=(0.0, 0.0), high=(area.length, area.height), size=(samples, 2))
    initial_log_w = math.log(2.0 * area.measure / math.pi)

    cals: List[CalibratedCdf] = []
    for device in dep.devices:
        squared = np.sort(np.sum((events - (device.x, device.y)) ** 2, axis=1))
        geom = device_geometry(device, area)
        z_hi = min(z_max, geom.u + geom.v)
        grid = np.linspace(z_hi / grid_points, z_hi, grid_points)
        empirical = np.searchsorted(squared, grid, side="right") / samples
        params, _ = optimize.curve_fit(_log_w_cdf, grid, empirical, p0=[initial_log_w])
        w = float(math.exp(params[0]))
        tolerance = float(np.max(np.abs(_log_w_cdf(grid, params[0]) - empirical)))
        cals.append(CalibratedCdf(device_id=device.id, w=w, z_max=z_max, tolerance=tolerance))
    return cals


def activation_probability(cal: CalibratedCdf, model: SensingModel, delta: float) -> float:
    if not (0 < delta <= 1):
        raise DomainError(f"threshold must lie in (0, 1], got {delta!r}")
    z = min(math.log(delta) ** 2 / model.eta**2, cal.z_max)
    return model.alpha * approx_cdf_z(cal, z)


def generate_deployment(area: Area, n: int, seed: int) -> Deployment:
    if n < 1:
        raise DomainError("deployment needs at least one device")
    rng = make_rng(seed)
    xs = rng.uniform(0.0, area.length, n)
    ys = rng.uniform(0.0, area.height, n)
    devices = tuple(Device(id=i, x=float(x), y=float(y)) for i, (x, y) in enumerate(zip(xs, ys)))
    return Deployment(area=area, devices=devices)


def _distinct_sites(dep: Deployment) -> np.ndarray:
    sites = dep.positions()
    if dep.n >= 2 and np.all(sites == sites[0]):
        raise GeometryError("all devices are coincident")
    jitter = DUPLICATE_JITTER * min(dep.area.length, dep.area.height)
    seen: Dict[Tuple[float, float], int] = {}
    for index, (x, y) in enumerate(sites):
        key = (float(x), float(y))
        count = seen.get(key, 0)
        seen[key] = count + 1
        if count == 0:
            continue
        shift = count * jitter
        sites[index, 0] = x + shift if x + shift <= dep.area.length else x - shift
    return sites


def _site_polygon(geom, site: Point) -> Polygon:
    if geom.geom_type == "Polygon":
        return geom
    parts = [part for part in getattr(geom, "geoms", []) if part.geom_type == "Polygon" and part.intersects(site)]
    if not parts:
        raise GeometryError("Voronoi region does not contain its site")
    return max(parts, key=lambda part: part.area)


def _cell(device_id: int, polygon: Polygon, site: Point) -> VoronoiCell:
    ring = polygon.exterior
    omega_min = float(ring.distance(site))
    fractions = np.linspace(0.0, 1.0, OMEGA_MEAN_SAMPLES, endpoint=False)
    boundary_points = shapely.line_interpolate_point(ring, fractions, normalized=True)
    omega_mean = float(np.mean(shapely.distance(boundary_points, site)))
    corners = np.asarray(ring.coords)[:-1]
    omega_max = float(np.max(np.hypot(corners[:, 0] - site.x, corners[:, 1] - site.y)))
    omega_mean = min(max(omega_mean, omega_min), omega_max)
    vertices = tuple((float(x), float(y)) for x, y in corners)
    return VoronoiCell(
        device_id=device_id,
        vertices=vertices,
        area=float(polygon.area),
        omega_min=omega_min,
        omega_mean=omega_mean,
        omega_max=omega_max,
    )


def voronoi_partition(dep: Deployment) -> List[VoronoiCell]:
    bounds = box(0.0, 0.0, dep.area.length, dep.area.height)
    sites = _distinct_sites(dep)
    points = [Point(float(x), float(y)) for x, y in sites]
    if dep.n == 1:
        return [_cell(0, bounds, points[0])]

    diagram = voronoi_diagram(MultiPoint(points), envelope=bounds)
    regions = [region.intersection(bounds) for region in diagram.geoms]
    tree = STRtree(regions)
    cells: List[VoronoiCell] = []
    for device_id, site in enumerate(points):
        candidates = tree.query(site, predicate="intersects")
        if len(candidates) == 0:
            raise GeometryError(f"no Voronoi region found for device {device_id}")
        # a site sits strictly inside its own region, so it is farthest from that boundary
        best = max(candidates, key=lambda k: _site_polygon(regions[k], site).exterior.distance(site))
        cells.append(_cell(device_id, _site_polygon(regions[best], site), site))
    return cells


def deployment_to_dict(dep: Deployment) -> Dict[str, Any]:
    return {
        "L": float(dep.area.length),
        "H": float(dep.area.height),
        "devices": [{"x": float(device.x), "y": float(device.y)} for device in dep.devices],
    }


def deployment_from_dict(data: Dict[str, Any]) -> Deployment:
    if not isinstance(data, dict) or "devices" not in data:
        raise DomainError("deployment JSON must be an object with L, H and devices")
    try:
        area = Area(length=float(data["L"]), height=float(data["H"]))
        devices: Sequence[Dict[str, Any]] = data["devices"]
        built = tuple(Device(id=i, x=float(item["x"]), y=float(item["y"])) for i, item in enumerate(devices))
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed deployment JSON: {exc}") from exc
    return Deployment(area=area, devices=built)


def save_deployment(path: str, dep: Deployment) -> None:
    write_json(path, deployment_to_dict(dep))


def load_deployment(path: str) -> Deployment:
    return deployment_from_dict(read_json(path))

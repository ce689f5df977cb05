import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .feasibility import OptimizerResult, finalize_result, iteration_cap, log_threshold_bounds, scale_to_budget
from .metrics import ErrorBudget, check_thresholds, conditional_activation_profile
from .network import CalibratedCdf, Deployment, DomainError, SensingModel, VoronoiCell, approx_cdf_z, voronoi_partition
from .utils import make_rng

VORONOI_VARIANTS = ("min", "mean", "max")
# convergence is measured on ln(delta), i.e. relative threshold change
KNN_TOLERANCE = 1e-4
ROOT_GRID = 64
SMALLEST_THRESHOLD = np.finfo(float).tiny


def solve_voronoi(
    dep: Deployment,
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    variant: str,
    cells: Optional[Sequence[VoronoiCell]] = None,
) -> OptimizerResult:
    if variant not in VORONOI_VARIANTS:
        raise DomainError(f"unknown Voronoi variant {variant!r}; expected one of {VORONOI_VARIANTS}")
    cells = list(cells) if cells is not None else voronoi_partition(dep)
    if len(cells) != dep.n or len(cals) != dep.n:
        raise DomainError("cells, calibrations and devices must line up")
    radii = np.array([getattr(cell, f"omega_{variant}") for cell in cells], dtype=float)
    delta = np.maximum(np.exp(-model.eta * radii), SMALLEST_THRESHOLD)
    return finalize_result(
        f"voronoi_{variant}",
        delta,
        cals,
        model,
        budget,
        iterations=1,
        evaluations=1,
        extra={"radii": radii.tolist()},
    )


@dataclass(frozen=True)
class ClusterGraph:
    neighbors: Tuple[Tuple[int, ...], ...]
    distances: Tuple[Tuple[float, ...], ...]
    k: int
    clusters: int
    labels: Tuple[int, ...]

    @classmethod
    def build(cls, dep: Deployment, k: int) -> "ClusterGraph":
        if k < 1:
            raise DomainError("k must be >= 1")
        n = dep.n
        positions = dep.positions()
        k_eff = min(k, n - 1)
        links: List[set] = [set() for _ in range(n)]
        if k_eff > 0:
            _, index = cKDTree(positions).query(positions, k=k_eff + 1)
            for j, row in enumerate(np.atleast_2d(index)):
                for h in row:
                    if int(h) != j:
                        links[j].add(int(h))
                        links[int(h)].add(j)
        neighbors = tuple(tuple(sorted(group)) for group in links)
        distances = tuple(
            tuple(float(np.hypot(*(positions[h] - positions[j]))) for h in neighbors[j]) for j in range(n)
        )
        rows = np.array([j for j in range(n) for _ in neighbors[j]], dtype=np.intp)
        cols = np.array([h for j in range(n) for h in neighbors[j]], dtype=np.intp)
        adjacency = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        count, labels = connected_components(adjacency, directed=False)
        return cls(
            neighbors=neighbors,
            distances=distances,
            k=k_eff,
            clusters=int(count),
            labels=tuple(int(v) for v in labels),
        )


@dataclass(frozen=True)
class KnnConfig:
    k: int = 4
    max_sweeps: Optional[int] = None
    quadrature: int = 16
    tolerance: float = KNN_TOLERANCE

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if self.max_sweeps is not None and self.max_sweeps < 1:
            raise DomainError("max_sweeps must be >= 1")
        if self.quadrature < 1 or self.tolerance <= 0:
            raise DomainError("quadrature must be >= 1 and tolerance positive")


def update_order(cells: Sequence[VoronoiCell]) -> List[int]:
    """Devices with the widest gap to their cell boundary come first."""

    need = np.array([cell.omega_min for cell in cells], dtype=float)
    return [int(j) for j in np.argsort(-need, kind="stable")]


def _coverage(cal: CalibratedCdf, model: SensingModel, s: float) -> float:
    return approx_cdf_z(cal, min(s * s / model.eta**2, cal.z_max))


def _event_radius(model: SensingModel, delta_h: float, cell: VoronoiCell, limit: float) -> float:
    radius = -math.log(delta_h) / model.eta
    if radius <= 0:
        radius = cell.omega_mean
    return min(radius, limit)


def _mean_activation(
    dep: Deployment,
    model: SensingModel,
    delta_j: float,
    h: int,
    j: int,
    radius_h: float,
    nodes: np.ndarray,
    weights: np.ndarray,
) -> float:
    """Pr(A_j | A_h) with the epicentre uniform over the disk where h is active."""

    if radius_h <= 0:
        return 0.0
    d = 0.5 * radius_h * (nodes + 1.0)
    profile = conditional_activation_profile(dep, model, delta_j, dep.devices[h], dep.devices[j], d)
    return float(np.sum(weights * d * profile) / radius_h)


def bayes_sweep(
    dep: Deployment,
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    graph: ClusterGraph,
    cells: Sequence[VoronoiCell],
    delta: Sequence[float],
    order: Sequence[int],
    quadrature: int = 16,
) -> Tuple[np.ndarray, List[int]]:
    """One Gauss-Seidel pass of the neighbourhood Bayes update.

    Device j's activation probability is rebuilt from total probability over
    its cluster: events in its own cell always need it, events attributed to a
    neighbour h need it with Pr(A_j | A_h), and neighbours are weighted by
    their own activation probabilities. The new threshold is the smallest
    coverage matching that probability; devices whose target exceeds the
    valid-range cap are clamped there and reported.
    """

    n = dep.n
    current = check_thresholds(delta, n).copy()
    upper = log_threshold_bounds(cals, model)
    nodes, weights = np.polynomial.legendre.leggauss(quadrature)
    total = dep.area.measure
    limit = dep.area.diagonal
    positions = dep.positions()
    clamped: List[int] = []

    for j in order:
        own = cells[j].area
        partners = [h for h in graph.neighbors[j] if np.hypot(*(positions[h] - positions[j])) > 0]
        shared = sum(cells[h].area for h in partners)
        likelihood = np.array([_coverage(cals[h], model, -math.log(current[h])) for h in partners])
        if partners and likelihood.sum() > 0:
            mixture = likelihood / likelihood.sum()
        else:
            mixture = np.full(len(partners), 1.0 / max(len(partners), 1))
        radii = [_event_radius(model, current[h], cells[h], limit) for h in partners]

        def gap(s: float) -> float:
            delta_j = math.exp(-s)
            conditional = sum(
                weight * _mean_activation(dep, model, delta_j, h, j, radius, nodes, weights)
                for weight, h, radius in zip(mixture, partners, radii)
            )
            target = (own + shared * conditional) / total
            return _coverage(cals[j], model, s) - target

        grid = np.linspace(0.0, float(upper[j]), ROOT_GRID)
        previous = 0.0
        solved = None
        for s in grid[1:]:
            if gap(float(s)) >= 0:
                solved = optimize.brentq(gap, previous, float(s), xtol=1e-12)
                break
            previous = float(s)
        if solved is None:
            solved = float(upper[j])
            clamped.append(int(j))
        current[j] = max(math.exp(-solved), SMALLEST_THRESHOLD)
    return current, clamped


def solve_knn_bayes(
    dep: Deployment,
    cals: Sequence[CalibratedCdf],
    model: SensingModel,
    budget: ErrorBudget,
    cfg: KnnConfig = KnnConfig(),
    seed: int = 0,
    cells: Optional[Sequence[VoronoiCell]] = None,
) -> OptimizerResult:
    if len(cals) != dep.n:
        raise DomainError(f"expected {dep.n} calibrations, got {len(cals)}")
    cells = list(cells) if cells is not None else voronoi_partition(dep)
    graph = ClusterGraph.build(dep, cfg.k)
    order = update_order(cells)

    rng = make_rng(seed)
    delta = 1.0 - rng.random(dep.n)
    sweeps = 0
    converged = False
    clamped: List[int] = []
    for sweep in range(iteration_cap(cfg.max_sweeps, dep.n)):
        sweeps = sweep + 1
        updated, clamped = bayes_sweep(dep, cals, model, graph, cells, delta, order, cfg.quadrature)
        change = float(np.max(np.abs(np.log(updated) - np.log(delta))))
        delta = updated
        if change < cfg.tolerance:
            converged = True
            break

    raw = delta.copy()
    final = finalize_result("knn", raw, cals, model, budget, iterations=sweeps, evaluations=sweeps * dep.n, seed=seed)
    projected = False
    if not final.feasible:
        search = scale_to_budget(cals, model, budget, -np.log(raw))
        if search.feasible:
            projected = True
            final = finalize_result(
                "knn",
                search.delta,
                cals,
                model,
                budget,
                iterations=sweeps,
                evaluations=sweeps * dep.n + search.evaluations,
                seed=seed,
            )

    extra: Dict[str, object] = {
        "raw_delta": raw.tolist(),
        "converged": converged,
        "projected": projected,
        "clamped": clamped,
        "clusters": graph.clusters,
        "order": order,
    }
    final.extra.update(extra)
    return final

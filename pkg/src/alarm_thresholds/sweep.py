import asyncio
import json
import os
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .cache import Cache, cell_key
from .config import METHOD_TAGS, get_area, get_sensing_model
from .logger import log_event
from .network import generate_deployment
from .optimizers import instance_from_config, run_method
from .simulator import SimConfig, run_slots
from .utils import canonical_json, derive_seed, ensure_dir, now_iso, sha256_text, write_json

# methods plotted against the benchmark in each figure file
FIG5_METHODS = ("equal", "sca", "bcd", "voronoi_min", "voronoi_mean", "voronoi_max")
FIG8_METHODS = ("equal", "knn", "ga", "pso", "qlearn")
TIMING_COLUMN = "wall_clock_ms"


@dataclass(frozen=True)
class ExperimentConfig:
    n_values: Tuple[int, ...]
    deployments: int
    methods: Tuple[str, ...]
    master_seed: int
    workers: int
    ttis: int
    include_timing: bool
    output_dir: str
    cache_path: str
    config_hash: str

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "ExperimentConfig":
        sweep = config["sweep"]
        return cls(
            n_values=tuple(int(n) for n in sweep["n_values"]),
            deployments=int(sweep["deployments"]),
            methods=tuple(sweep["methods"]),
            master_seed=int(sweep["master_seed"]),
            workers=int(sweep["workers"]),
            ttis=int(config["simulation"]["ttis"]),
            include_timing=bool(sweep["include_timing"]),
            output_dir=config["paths"]["output_dir"],
            cache_path=config["paths"]["cache_path"],
            config_hash=config_hash(config),
        )


@dataclass(frozen=True)
class SweepRow:
    method: str
    n: int
    deployment: int
    deployment_seed: int
    feasible: bool
    power: float
    error: float
    sim_power: float
    sim_power_se: float
    sim_p_e: float
    sim_p_e_se: float
    sim_p_miss: float
    sim_p_col: float
    iterations: int
    evaluations: int
    wall_clock_ms: float = 0.0


SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))


def config_hash(config: Dict[str, Any]) -> str:
    """Hash of every setting that changes row values; paths, workers and timing do not."""

    relevant = {key: value for key, value in config.items() if key not in {"paths", "profiles"}}
    relevant["sweep"] = {k: v for k, v in config["sweep"].items() if k not in {"workers", "include_timing", "profile"}}
    return sha256_text(canonical_json(relevant))


def evaluate_cell(config: Dict[str, Any], n: int, index: int) -> List[SweepRow]:
    """Generate, calibrate, solve and simulate one (N, deployment index) cell."""

    master = int(config["sweep"]["master_seed"])
    model = get_sensing_model(config)
    deployment_seed = derive_seed(master, "deployment", n, index)
    dep = generate_deployment(get_area(config), n, deployment_seed)
    instance = instance_from_config(config, dep, derive_seed(master, "calibration", n, index))
    ttis = int(config["simulation"]["ttis"])

    rows: List[SweepRow] = []
    for tag in config["sweep"]["methods"]:
        started = time.perf_counter()
        result = run_method(tag, instance, config, derive_seed(master, "method", tag, n, index))
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        report = run_slots(dep, model, result.delta, SimConfig(ttis, derive_seed(master, "simulate", tag, n, index)))
        rows.append(
            SweepRow(
                method=tag,
                n=n,
                deployment=index,
                deployment_seed=deployment_seed,
                feasible=result.feasible,
                power=result.objective,
                error=result.error,
                sim_power=report.power,
                sim_power_se=report.power_se,
                sim_p_e=report.p_e,
                sim_p_e_se=report.p_e_se,
                sim_p_miss=report.p_miss,
                sim_p_col=report.p_col,
                iterations=result.iterations,
                evaluations=result.evaluations,
                wall_clock_ms=elapsed_ms,
            )
        )
    return rows


def _row_order(row: SweepRow) -> Tuple[int, str, int, int]:
    rank = METHOD_TAGS.index(row.method) if row.method in METHOD_TAGS else len(METHOD_TAGS)
    return rank, row.method, row.n, row.deployment


def _executor(workers: int) -> Executor:
    if workers > 1:
        return ProcessPoolExecutor(max_workers=workers)
    return ThreadPoolExecutor(max_workers=1)


async def run_sweep(config: Dict[str, Any], logger, resume: bool = False) -> List[SweepRow]:
    experiment = ExperimentConfig.from_config(config)
    cache_dir = os.path.dirname(experiment.cache_path)
    if cache_dir:
        ensure_dir(cache_dir)

    cached_cells = 0
    cache = Cache(experiment.cache_path)
    await cache.open()
    executor = _executor(experiment.workers)
    try:
        loop = asyncio.get_running_loop()
        semaphore = asyncio.Semaphore(experiment.workers)

        async def process(n: int, index: int) -> List[SweepRow]:
            nonlocal cached_cells
            async with semaphore:
                key = cell_key(n, index)
                if resume:
                    entry = await cache.get(key)
                    if entry and entry.get("status") == "done" and entry.get("config_hash") == experiment.config_hash:
                        cached_cells += 1
                        log_event(logger, "sweep_cell_cached", n=n, deployment=index)
                        return [SweepRow(**item) for item in json.loads(entry["rows_json"])]
                try:
                    rows = await loop.run_in_executor(executor, evaluate_cell, config, n, index)
                except Exception as exc:
                    await cache.upsert(key, n=n, deployment=index, status="error", error=str(exc), finished_at=now_iso())
                    raise
                await cache.upsert(
                    key,
                    config_hash=experiment.config_hash,
                    n=n,
                    deployment=index,
                    rows_json=json.dumps([asdict(row) for row in rows]),
                    finished_at=now_iso(),
                    status="done",
                    error=None,
                )
                log_event(
                    logger,
                    "sweep_cell_complete",
                    n=n,
                    deployment=index,
                    rows=len(rows),
                    feasible=sum(1 for row in rows if row.feasible),
                )
                return rows

        tasks = [process(n, index) for n in experiment.n_values for index in range(experiment.deployments)]
        batches = await asyncio.gather(*tasks)
        stored = await cache.count(experiment.config_hash)
    finally:
        executor.shutdown(wait=True)
        await cache.close()

    rows = sorted((row for batch in batches for row in batch), key=_row_order)
    log_event(
        logger,
        "sweep_complete",
        rows=len(rows),
        cells=len(batches),
        cached=cached_cells,
        stored=stored,
        config_hash=experiment.config_hash,
    )
    return rows


def rows_frame(rows: Sequence[SweepRow], include_timing: bool = True) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(row) for row in rows], columns=list(SWEEP_COLUMNS))
    if not include_timing:
        frame = frame.drop(columns=[TIMING_COLUMN])
    return frame


def summarize(rows: Sequence[SweepRow]) -> pd.DataFrame:
    """Per-method, per-N aggregates in first-appearance order.

    ``power_reduction_pct`` is 100 * (1 - W_method / W_equal) against the
    equal-threshold mean at the same N, and NaN when no benchmark rows exist.
    """

    if not rows:
        raise ValueError("Cannot summarize an empty sweep")
    frame = rows_frame(rows)
    summary = (
        frame.groupby(["method", "n"], sort=False)
        .agg(
            runs=("power", "size"),
            mean_power=("power", "mean"),
            median_power=("power", "median"),
            feasible_rate=("feasible", "mean"),
            mean_error=("error", "mean"),
            mean_sim_power=("sim_power", "mean"),
            mean_sim_p_e=("sim_p_e", "mean"),
            mean_sim_p_miss=("sim_p_miss", "mean"),
            mean_sim_p_col=("sim_p_col", "mean"),
        )
        .reset_index()
    )
    summary["feasible_rate"] = summary["feasible_rate"].astype(float)
    benchmark = summary[summary["method"] == "equal"].set_index("n")["mean_power"]
    reference = summary["n"].map(benchmark)
    with np.errstate(divide="ignore", invalid="ignore"):
        summary["power_reduction_pct"] = 100.0 * (1.0 - summary["mean_power"] / reference)
    return summary


def _write_csv(path: str, frame: pd.DataFrame) -> None:
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise OSError(f"Cannot write {path}: {exc}") from exc


def _figure_frames(summary: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    fig5 = summary[summary["method"].isin(FIG5_METHODS)]
    fig8 = summary[summary["method"].isin(FIG8_METHODS)]
    split = summary[["method", "n", "mean_sim_p_e", "mean_sim_p_miss", "mean_sim_p_col"]].rename(
        columns={"mean_sim_p_e": "p_e", "mean_sim_p_miss": "p_miss", "mean_sim_p_col": "p_col"}
    )
    return {
        "fig5_power.csv": fig5[["method", "n", "mean_power", "median_power", "mean_sim_power"]],
        "fig6_feasibility.csv": summary[["method", "n", "runs", "feasible_rate"]],
        "fig8_power.csv": fig8[["method", "n", "mean_power", "median_power", "mean_sim_power"]],
        "fig9_error_split.csv": split,
    }


def export(rows: Sequence[SweepRow], out_dir: str, logger=None, include_timing: bool = False) -> Dict[str, str]:
    """Write sweep.csv, sweep.json, summary.csv and the per-figure data files.

    Power is exported as the expected fraction of devices active per TTI;
    multiply by the device transmit power to get watts.
    """

    ensure_dir(out_dir)
    written: Dict[str, str] = {}

    sweep_path = os.path.join(out_dir, "sweep.csv")
    _write_csv(sweep_path, rows_frame(rows, include_timing=include_timing))
    written["sweep.csv"] = sweep_path

    json_path = os.path.join(out_dir, "sweep.json")
    write_json(json_path, [asdict(row) for row in rows])
    written["sweep.json"] = json_path

    summary = summarize(rows)
    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(summary_path, summary)
    written["summary.csv"] = summary_path

    for name, frame in _figure_frames(summary).items():
        path = os.path.join(out_dir, name)
        _write_csv(path, frame)
        written[name] = path

    if logger is not None:
        log_event(logger, "export_complete", out_dir=out_dir, files=sorted(written), rows=len(rows))
    return written


def read_rows(csv_path: str) -> List[SweepRow]:
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    casts = {f.name: f.type for f in fields(SweepRow)}
    rows = []
    for record in frame.to_dict(orient="records"):
        rows.append(SweepRow(**{name: casts[name](value) for name, value in record.items() if name in casts}))
    return rows

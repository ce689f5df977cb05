import argparse
import asyncio
import sys
from typing import Any, Dict, List, Optional, Tuple

from .config import METHOD_TAGS, apply_profile, get_area, get_path, get_sensing_model, load_config, validate_config
from .logger import log_event, setup_logger
from .network import DomainError, generate_deployment, load_deployment, save_deployment
from .optimizers import instance_from_config, run_method
from .simulator import SimConfig, run_slots
from .sweep import export, run_sweep
from .utils import read_json, write_json


def _apply_overrides(config: Dict[str, Any], args: argparse.Namespace) -> Dict[str, Any]:
    profile = getattr(args, "profile", None)
    out_dir = getattr(args, "out_dir", None)
    seed = getattr(args, "seed", None)
    workers = getattr(args, "workers", None)
    ttis = getattr(args, "ttis", None)
    include_timing = getattr(args, "include_timing", False)

    if profile:
        config = apply_profile(config, profile)
    if out_dir:
        config["paths"]["output_dir"] = out_dir
    if seed is not None and getattr(args, "command", None) == "sweep":
        config["sweep"]["master_seed"] = seed
    if workers is not None:
        config["sweep"]["workers"] = workers
    if ttis is not None:
        config["simulation"]["ttis"] = ttis
    if include_timing:
        config["sweep"]["include_timing"] = True
    return validate_config(config)


def _load_delta(path: str) -> List[float]:
    data = read_json(path)
    if isinstance(data, dict):
        data = data.get("delta")
    if not isinstance(data, list):
        raise DomainError(f"{path} must hold a list of thresholds or an object with a delta list")
    return [float(value) for value in data]


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    logger = setup_logger(args.verbose)
    rows = asyncio.run(run_sweep(config, logger, resume=args.resume))
    export(rows, get_path(config, "output_dir"), logger, include_timing=config["sweep"]["include_timing"])
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    logger = setup_logger(args.verbose)
    dep = load_deployment(args.deployment)
    instance = instance_from_config(config, dep, args.seed)
    result = run_method(args.method, instance, config, args.seed)
    if args.out:
        write_json(args.out, result.to_dict())
    log_event(
        logger,
        "solve_complete",
        method=result.method,
        n=dep.n,
        feasible=result.feasible,
        power=result.objective,
        error=result.error,
        iterations=result.iterations,
        delta=list(result.delta),
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    logger = setup_logger(args.verbose)
    dep = load_deployment(args.deployment)
    delta = _load_delta(args.delta)
    report = run_slots(dep, get_sensing_model(config), delta, SimConfig(config["simulation"]["ttis"], args.seed))
    if args.out:
        write_json(args.out, report.to_dict())
    log_event(
        logger,
        "simulate_complete",
        n=dep.n,
        ttis=report.tti_count,
        p_e=report.p_e,
        p_e_se=report.p_e_se,
        p_miss=report.p_miss,
        p_col=report.p_col,
        power=report.power,
    )
    return 0


def cmd_deploy(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    dep = generate_deployment(get_area(config), args.n, args.seed)
    save_deployment(args.out, dep)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Transmission-threshold optimization for IIoT alarm networks")
    parser.add_argument("--config", help="Path to config YAML", default=None)
    parser.add_argument("--verbose", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)

    sweep = subparsers.add_parser("sweep", help="Run every method over random deployments and export results")
    sweep.add_argument("--out", dest="out_dir", type=str, help="Output directory")
    sweep.add_argument("--profile", choices=["desk", "full"])
    sweep.add_argument("--seed", type=int, help="Master seed")
    sweep.add_argument("--workers", type=int)
    sweep.add_argument("--ttis", type=int)
    sweep.add_argument("--include-timing", action="store_true")
    sweep.add_argument("--resume", action="store_true")
    sweep.set_defaults(func=cmd_sweep)

    solve = subparsers.add_parser("solve", help="Optimize thresholds for one deployment")
    solve.add_argument("--method", choices=list(METHOD_TAGS), required=True)
    solve.add_argument("--deployment", type=str, required=True, help="Path to deployment JSON")
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--out", type=str, help="Write the result JSON here")
    solve.set_defaults(func=cmd_solve)

    simulate = subparsers.add_parser("simulate", help="Simulate slotted transmissions under given thresholds")
    simulate.add_argument("--deployment", type=str, required=True, help="Path to deployment JSON")
    simulate.add_argument("--delta", type=str, required=True, help="Path to threshold JSON")
    simulate.add_argument("--ttis", type=int)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", type=str, help="Write the report JSON here")
    simulate.set_defaults(func=cmd_simulate)

    deploy = subparsers.add_parser("deploy", help="Write a random deployment")
    deploy.add_argument("--n", type=int, required=True)
    deploy.add_argument("--seed", type=int, default=0)
    deploy.add_argument("--out", type=str, required=True)
    deploy.set_defaults(func=cmd_deploy)

    return parser


def _extract_global_args(argv: List[str]) -> Tuple[Dict[str, Any], List[str]]:
    """Extract global flags from argv regardless of position.

    argparse subparsers only accept "global" options before the subcommand,
    so `--config`/`--verbose` are lifted out wherever they appear.
    """

    globals_: Dict[str, Any] = {}
    remaining: List[str] = []

    i = 0
    while i < len(argv):
        arg = argv[i]

        if arg == "--verbose":
            globals_["verbose"] = True
            i += 1
            continue

        if arg == "--config":
            if i + 1 >= len(argv):
                # Let argparse handle the error message format.
                remaining.append(arg)
                i += 1
                continue
            globals_["config"] = argv[i + 1]
            i += 2
            continue

        if arg.startswith("--config="):
            globals_["config"] = arg.split("=", 1)[1]
            i += 1
            continue

        remaining.append(arg)
        i += 1

    return globals_, remaining


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    raw_argv = list(sys.argv[1:] if argv is None else argv)
    globals_, remaining = _extract_global_args(raw_argv)

    args = parser.parse_args(remaining)

    if "config" in globals_:
        args.config = globals_["config"]
    if globals_.get("verbose"):
        args.verbose = True

    return args


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        log_event(setup_logger(args.verbose), "command_failed", command=args.command, error=str(exc), exit_code=2)
        return 2
    except OSError as exc:
        log_event(setup_logger(args.verbose), "command_failed", command=args.command, error=str(exc), exit_code=3)
        return 3

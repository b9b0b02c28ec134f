"""Command-line interface: stage commands, the full pipeline, and studies."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .drift import METHODS
from .metrics import DETECTORS
from .pipeline import (
    FILES,
    StageError,
    run_capacity_study,
    run_drift_study,
    run_pipeline,
    stage_analyze,
    stage_drift,
    stage_extract,
    stage_prep,
    stage_simulate,
)

EXIT_CODES = {
    "config": 2,
    "simulate": 10,
    "prep": 20,
    "drift": 30,
    "extract": 40,
    "analyze": 50,
    "study": 60,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="config file; its values override flags")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--allan-dev", type=float, help="1 s Allan deviation of the clocks")
    p.add_argument("--noise-power", type=float, help="per-sample noise variance N0")
    p.add_argument("--n-paths", type=int, help="random scenario path count")
    p.add_argument("--snapshots", type=int)
    p.add_argument("--rotor-delay", type=float, help="seconds per rotor move")
    p.add_argument("--ref-mode", choices=("column-start", "per-snapshot"))
    p.add_argument("--nf", type=int, help="frequency points")
    p.add_argument("--f-start", type=float)
    p.add_argument("--f-stop", type=float)
    p.add_argument("--tx-rings", type=int)
    p.add_argument("--tx-per-ring", type=int)
    p.add_argument("--rx-rings", type=int)
    p.add_argument("--rx-per-ring", type=int)
    p.add_argument("--outlier-prob", type=float)
    p.add_argument("--drift-method", choices=METHODS)
    p.add_argument("--angle-grid", type=float, help="degrees")
    p.add_argument("--delay-grid", type=float, help="meters")
    p.add_argument("--dynamic-range", type=float, help="dB window below strongest path")
    p.add_argument("--max-paths", type=int)
    p.add_argument("--no-tensors", action="store_true", help="skip writing tensor files")


def _flags_to_dict(args: argparse.Namespace) -> dict:
    d: dict = {}

    def put(path: tuple[str, ...], value):
        if value is None:
            return
        node = d
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    put(("master_seed",), args.master_seed)
    put(("allan_dev_1s",), args.allan_dev)
    put(("noise_power",), args.noise_power)
    put(("mpcs", "n_paths"), args.n_paths)
    put(("schedule", "snapshots"), args.snapshots)
    put(("schedule", "rotor_delay_s"), args.rotor_delay)
    put(("schedule", "ref_mode"), args.ref_mode)
    put(("grid", "n_points"), args.nf)
    put(("grid", "f_start_hz"), args.f_start)
    put(("grid", "f_stop_hz"), args.f_stop)
    put(("tx_array", "rings"), args.tx_rings)
    put(("tx_array", "per_ring"), args.tx_per_ring)
    put(("rx_array", "rings"), args.rx_rings)
    put(("rx_array", "per_ring"), args.rx_per_ring)
    put(("outliers", "probability"), args.outlier_prob)
    put(("drift_method",), args.drift_method)
    put(("clean", "angle_grid_deg"), args.angle_grid)
    put(("clean", "delay_grid_m"), args.delay_grid)
    put(("clean", "dynamic_range_db"), args.dynamic_range)
    put(("clean", "max_paths"), args.max_paths)
    if args.no_tensors:
        put(("save_tensors",), False)
    return d


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _resolve_config(args: argparse.Namespace, out: Path | None) -> ExperimentConfig:
    flag_dict = _flags_to_dict(args)
    file_dict = {}
    path = args.config
    if path is None and out is not None and (out / FILES["config"]).exists():
        path = out / FILES["config"]
    if path is not None:
        with open(path) as fh:
            try:
                file_dict = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    # config file wins over command-line flags
    return ExperimentConfig.from_dict(_deep_merge(flag_dict, file_dict))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sounder3d",
        description="Synthetic 3D-MIMO channel sounding and post-processing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("simulate", "acquire the scenario; write tensors and ground truth"),
        ("pipeline", "run simulate, prep, drift, extract, analyze end to end"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--no-figures", action="store_true")
        _add_config_flags(p)

    for name, help_text in (
        ("prep", "suppress outlier snapshots and average"),
        ("drift", "estimate per-rotor clock phase and correct the tensors"),
        ("extract", "run CLEAN on the corrected tensor"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", type=Path, required=True, help="artifact directory")
        p.add_argument("--no-figures", action="store_true")
        _add_config_flags(p)

    p = sub.add_parser("analyze", help="angular spreads and separability from MPC lists")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mpcs", type=Path, nargs="*", help="MPC CSV files (default: out/mpcs.csv)")
    p.add_argument("--no-figures", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("study-drift", help="RMSE vs Allan deviation sweep")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--allan-devs", type=str, default="0,1e-11,1e-10,1e-9",
                   help="comma-separated Allan deviations")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--no-figures", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("study-capacity", help="capacity CDFs from extracted MPC lists")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mpcs", type=Path, nargs="+", required=True,
                   help="one CSV for single-user, two for the interference study")
    p.add_argument("--arrays", type=str, default="rect:8x60",
                   help="comma-separated descriptors, e.g. rect:8x60,cyl:8x60")
    p.add_argument("--detectors", type=str, default="mrc,zf,mmse")
    p.add_argument("--n0", type=float, required=True, help="noise power")
    p.add_argument("--realizations", type=int, default=300)
    p.add_argument("--pattern", choices=("patch", "isotropic"), default="patch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = getattr(args, "out", None)
    figures = not getattr(args, "no_figures", False)
    try:
        if args.command == "study-capacity":
            detectors = [d.strip() for d in args.detectors.split(",") if d.strip()]
            bad = [d for d in detectors if d not in DETECTORS]
            if bad:
                raise ConfigError(f"unknown detector(s): {', '.join(bad)}")
            pattern = None if args.pattern == "patch" else {"kind": "isotropic"}
            try:
                run_capacity_study(
                    mpc_csvs=list(args.mpcs),
                    arrays=[a.strip() for a in args.arrays.split(",") if a.strip()],
                    detectors=detectors,
                    noise_power=args.n0,
                    realizations=args.realizations,
                    master_seed=args.seed,
                    out=out,
                    pattern=pattern,
                    figures=figures,
                )
            except (ValueError, OSError) as exc:
                raise StageError("study", str(exc)) from exc
            return 0

        cfg = _resolve_config(args, out)
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "pipeline":
            run_pipeline(cfg, out, figures=figures)
        elif args.command == "simulate":
            cfg.save(out / FILES["config"])
            _stage(args.command, lambda: stage_simulate(cfg, out))
        elif args.command == "prep":
            _stage(args.command, lambda: stage_prep(cfg, out))
        elif args.command == "drift":
            _stage(args.command, lambda: stage_drift(cfg, out, figures=figures))
        elif args.command == "extract":
            _stage(args.command, lambda: stage_extract(cfg, out, figures=figures))
        elif args.command == "analyze":
            _stage(args.command, lambda: stage_analyze(cfg, out, args.mpcs, figures=figures))
        elif args.command == "study-drift":
            allan_devs = [float(v) for v in args.allan_devs.split(",") if v.strip()]
            _stage("study", lambda: run_drift_study(cfg, allan_devs, args.trials, out, figures))
        return 0
    except ConfigError as exc:
        print(f"sounder3d: config error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    except StageError as exc:
        print(f"sounder3d: [{exc.stage}] {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)


def _stage(name: str, fn):
    try:
        return fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc


if __name__ == "__main__":
    sys.exit(main())

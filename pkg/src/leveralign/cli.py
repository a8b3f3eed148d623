"""Command line entry point: ``leveralign {run,montecarlo,remarks,export-streams}``.

Exit codes: 0 success, 2 configuration error, 3 degenerate pair geometry.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from . import simkit
from .config import ConfigError, ExperimentConfig, parse_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3

log = logging.getLogger("leveralign")


class DegenerateGeometry(RuntimeError):
    pass


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML experiment file (defaults if omitted)")
    common.add_argument("--seed", type=_u64, help="override base_seed")
    common.add_argument("--out", type=Path, help="override output_dir")
    common.add_argument("--mode", choices=["none", "eq9", "exact"], help="override compensation_mode")
    common.add_argument("--runs", type=_positive, help="override run_count")
    common.add_argument("--threads", type=_positive, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="leveralign",
                                description="Lever-arm compensated in-motion coarse alignment experiments.",
                                epilog="Exit codes: 0 success, 2 configuration error, 3 degenerate pair geometry.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="single alignment run")
    run.add_argument("--run-index", type=int, default=0)
    sub.add_parser("montecarlo", parents=[common], help="Monte Carlo over all scenarios")
    sub.add_parser("remarks", parents=[common], help="approximation and growth diagnostics")
    exp = sub.add_parser("export-streams", parents=[common], help="write truth, IMU and GNSS CSVs")
    exp.add_argument("--run-index", type=int, default=0)
    return p


def load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.mode is not None:
        changes["compensation_mode"] = args.mode
    if args.runs is not None:
        changes["run_count"] = args.runs
    return cfg.replace(**changes) if changes else cfg


def cmd_run(cfg: ExperimentConfig, args) -> list[Path]:
    series = ex.run_single(cfg, args.run_index)
    if not series.solved.any():
        raise DegenerateGeometry("no epoch had an observable pair geometry")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"run_{cfg.compensation_mode}_{args.run_index}.csv"
    ex.write_series_csv(path, series)
    (out / "effective_config.toml").write_text(cfg.dump())
    final = series.errors[series.solved][-1] * ex.RAD2DEG
    print("final error [deg] pitch %.6g roll %.6g yaw %.6g" % tuple(final))
    return [path, out / "effective_config.toml"]


def cmd_montecarlo(cfg: ExperimentConfig, args) -> list[Path]:
    curves = ex.run_monte_carlo(cfg, threads=args.threads, keep_runs=False)
    if any(len(c.epochs) == 0 for c in curves.values()):
        raise DegenerateGeometry("no epoch was observable in every run")
    paths = ex.write_monte_carlo(cfg.output_dir, cfg, curves)
    for name, c in curves.items():
        print(f"{name}: peak mean yaw {c.peak():.6g} deg, final "
              + " ".join(f"{x:.6g}" for x in c.mean_deg[-1]))
    return paths


def cmd_remarks(cfg: ExperimentConfig, args) -> list[Path]:
    rows = ex.report_remarks(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "remarks.csv"
    ex.write_remarks_csv(path, rows)
    (out / "effective_config.toml").write_text(cfg.dump())
    print(f"max approximation ratio {np.nanmax(rows.approximation_ratio):.6g}")
    return [path, out / "effective_config.toml"]


def cmd_export(cfg: ExperimentConfig, args) -> list[Path]:
    sim = simkit.simulate(cfg.profile(), cfg.lever_arm_truth, cfg.error_model(), cfg.imu_dt,
                          cfg.gnss_dt, args.run_index)
    out = Path(cfg.output_dir)
    paths = simkit.export_streams(out, sim.traj, sim.imu, sim.gnss)
    (out / "effective_config.toml").write_text(cfg.dump())
    return paths + [out / "effective_config.toml"]


COMMANDS = {
    "run": cmd_run,
    "montecarlo": cmd_montecarlo,
    "remarks": cmd_remarks,
    "export-streams": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = COMMANDS[args.command](cfg, args)
    except DegenerateGeometry as e:
        print(f"degenerate geometry: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

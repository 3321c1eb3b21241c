"""Command-line front end.

::

    cpsbench run --config scenario.json [--seed N] [--reps K] [--out DIR] [--allow-fault]
    cpsbench replay --config scenario.json --trace run-0000.csv --out DIR
    cpsbench validate --config scenario.json
    cpsbench metrics --config scenario.json --trace run-0000.csv
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .config import ScenarioConfig, parse_config, write_config
from .engine import compute_report, playback_trace, run_scenario
from .exceptions import CapacityError, ConfigError, PlaybackError
from .metrics import MetricsReport
from .trace import read_csv

log = logging.getLogger("cpsbench")

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_ERROR = 2

SUMMARY_FIELDS = (
    "seed", "faulted", "rounds", "quadratic_cost", "actuation_intensity",
    "max_abs_angle", "angle_within_3deg_fraction", "max_abs_pos", "sync_rms_error",
    "sync_rms_error_final", "drop_rate_state", "drop_rate_control", "loop_latency",
    "radio_duty_cycle",
)


@dataclass(frozen=True)
class RunRequest:
    config_path: Path
    output_dir: Path
    seed_override: Optional[int] = None
    repetitions: int = 1
    playback_path: Optional[Path] = None
    allow_fault: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.playback_path is not None and self.repetitions != 1:
            raise ConfigError("playback runs a single repetition")


def _write_outputs(out: Path, stem: str, cfg: ScenarioConfig, trace, report: MetricsReport):
    trace.write_csv(out / f"{stem}.csv")
    (out / f"{stem}.metrics.json").write_text(report.to_json(), encoding="utf-8")
    write_config(cfg, out / f"{stem}.config.json")


def _one_run(cfg: ScenarioConfig, out: Path):
    trace, report = run_scenario(cfg)
    _write_outputs(out, f"run-{cfg.seed:04d}", cfg, trace, report)
    return cfg.seed, report


def _write_summary(path: Path, results):
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_FIELDS)
        for seed, report in results:
            row = [seed]
            for name in SUMMARY_FIELDS[1:]:
                value = getattr(report, name)
                if isinstance(value, bool) or value is None:
                    row.append("" if value is None else int(value))
                elif isinstance(value, float):
                    row.append(f"{value:.9g}")
                else:
                    row.append(value)
            writer.writerow(row)


def run(req: RunRequest) -> int:
    """Execute a request; returns the process exit status."""
    try:
        cfg = parse_config(req.config_path)
        if req.seed_override is not None:
            cfg = cfg.with_seed(req.seed_override)
        req.output_dir.mkdir(parents=True, exist_ok=True)
        if req.playback_path is not None:
            recorded = read_csv(req.playback_path)
            trace = playback_trace(recorded, cfg)
            report = compute_report(trace.to_table(), cfg)
            _write_outputs(req.output_dir, f"replay-{cfg.seed:04d}", cfg, trace, report)
            results = [(cfg.seed, report)]
        else:
            configs = [cfg.with_seed(cfg.seed + k) for k in range(req.repetitions)]
            if req.jobs > 1 and len(configs) > 1:
                with ProcessPoolExecutor(max_workers=req.jobs) as pool:
                    results = list(pool.map(_one_run, configs, [req.output_dir] * len(configs)))
            else:
                results = [_one_run(c, req.output_dir) for c in configs]
        _write_summary(req.output_dir / "summary.csv", results)
    except (ConfigError, CapacityError, PlaybackError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR

    faulted = [seed for seed, report in results if report.faulted]
    for seed, report in results:
        log.info("seed %d: cost %.6g, faulted=%s", seed, report.quadratic_cost, report.faulted)
    if faulted and not req.allow_fault:
        log.error("faulted runs: %s", ", ".join(str(s) for s in faulted))
        return EXIT_FAULT
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpsbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario")
    p_run.add_argument("--config", required=True, type=Path)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--reps", type=int, default=1)
    p_run.add_argument("--out", type=Path, default=Path("out"))
    p_run.add_argument("--allow-fault", action="store_true")
    p_run.add_argument("--jobs", type=int, default=1)

    p_replay = sub.add_parser("replay", help="replay recorded sensing through live controllers")
    p_replay.add_argument("--config", required=True, type=Path)
    p_replay.add_argument("--trace", required=True, type=Path)
    p_replay.add_argument("--out", type=Path, default=Path("out"))
    p_replay.add_argument("--seed", type=int, default=None)
    p_replay.add_argument("--allow-fault", action="store_true")

    p_val = sub.add_parser("validate", help="check a configuration file")
    p_val.add_argument("--config", required=True, type=Path)

    p_met = sub.add_parser("metrics", help="recompute metrics from a trace file")
    p_met.add_argument("--config", required=True, type=Path)
    p_met.add_argument("--trace", required=True, type=Path)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "validate":
        try:
            cfg = parse_config(args.config)
        except ConfigError as exc:
            print(f"invalid: {exc}", file=sys.stderr)
            return EXIT_ERROR
        print(write_config(cfg), end="")
        return EXIT_OK
    if args.command == "metrics":
        try:
            cfg = parse_config(args.config)
            report = compute_report(read_csv(args.trace), cfg)
        except (ConfigError, PlaybackError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        print(report.to_json(), end="")
        return EXIT_OK
    try:
        if args.command == "run":
            req = RunRequest(args.config, args.out, args.seed, args.reps, None,
                             args.allow_fault, args.jobs)
        else:
            req = RunRequest(args.config, args.out, args.seed, 1, args.trace, args.allow_fault)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run(req)


if __name__ == "__main__":
    sys.exit(main())

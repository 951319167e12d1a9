"""Command line front end."""
from __future__ import annotations

import argparse
from collections.abc import Sequence
import json
import logging
from pathlib import Path
import sys

from .benchmarks import bench_cable, bench_spiral, compare_runs, lat_from_manifest
from .config import RunConfig, load_config
from .const import LAT_THRESHOLD_MV
from .core import MonodomainSimulation
from .errors import CardioError, ConfigError, OutputError
from .output import RunWriter, append_jsonl, write_lat_csv

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

BENCH_REPORT = "bench.jsonl"
COMPARE_REPORT = "compare.jsonl"
LAT_FILE = "lat.csv"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="log debug messages")
    common.add_argument(
        "--no-timing", action="store_true", help="omit wall times from written outputs"
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a configuration key (repeatable)",
    )
    parser = argparse.ArgumentParser(
        prog="cardiolts", description="Adaptive DG monodomain solver with local time stepping"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="run a configuration file")
    run.add_argument("config", type=Path)

    bench = commands.add_parser("bench", parents=[common], help="run a built-in benchmark")
    bench.add_argument("name", choices=["cable", "strip", "spiral"])
    bench.add_argument("--output", type=Path, default=Path("bench"))
    bench.add_argument("--mirror", action="store_true", help="also run the mirrored spiral")

    compare = commands.add_parser(
        "compare", parents=[common], help="run two configurations and compare them"
    )
    compare.add_argument("config_a", type=Path)
    compare.add_argument("config_b", type=Path)
    compare.add_argument("--output", type=Path, default=None)

    lat = commands.add_parser(
        "lat", parents=[common], help="activation times from a run manifest"
    )
    lat.add_argument("manifest", type=Path)
    lat.add_argument("--threshold", type=float, default=LAT_THRESHOLD_MV)
    lat.add_argument("--output", type=Path, default=None)
    return parser


def _run_config(config: RunConfig, timing: bool, directory: Path | None = None):
    simulation = MonodomainSimulation(config)
    with RunWriter(
        directory or config.output_dir, simulation.basis, timing=timing, vtk=config.write_vtk
    ) as writer:
        return simulation.run(writer)


def _report(path: Path, record: dict, timing: bool) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OutputError(path.parent, err.strerror or str(err)) from err
    if not timing:
        record = {k: v for k, v in record.items() if not k.startswith("wall_time")}
    append_jsonl(path, record)
    print(json.dumps(record, sort_keys=True, default=str))


def _command(args: argparse.Namespace) -> None:
    timing = not args.no_timing
    if args.command == "run":
        config = load_config(args.config, args.overrides)
        result = _run_config(config, timing)
        print(f"{config.output_dir}: {len(result.trajectory.snapshots)} snapshot(s)")
    elif args.command == "bench":
        if args.name == "spiral":
            report = bench_spiral(args.overrides, check_mirror=args.mirror)
        else:
            report = bench_cable(args.overrides, strip=args.name == "strip")
        _report(args.output / BENCH_REPORT, report, timing)
    elif args.command == "compare":
        config_a = load_config(args.config_a, args.overrides)
        config_b = load_config(args.config_b, args.overrides)
        output = args.output or config_a.output_dir
        result_a = _run_config(config_a, timing, output / "a")
        result_b = _run_config(config_b, timing, output / "b")
        _report(output / COMPARE_REPORT, compare_runs(result_a, result_b), timing)
    elif args.command == "lat":
        lat = lat_from_manifest(args.manifest, args.threshold)
        output = args.output or args.manifest.parent / LAT_FILE
        write_lat_csv(output, lat.points, lat.times)
        print(f"{output}: {int(lat.activated.sum())} of {len(lat.times)} point(s) activated")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        _command(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CardioError as err:
        _LOGGER.debug("Run failed", exc_info=True)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

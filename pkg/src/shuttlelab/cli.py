"""Command-line front end: run scenarios, check datasets, print metrics.

Thin by design: every subcommand parses arguments, calls one package
function, prints, and sets an exit code. Exit 0 on success, 1 when a
validation finds problems, 2 on bad input or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis
from .datastore import (
    SchemaError,
    dataset_info,
    validate_dataset,
    write_dataset,
)
from .sim import ConfigError, build_scenario, load_scenario, run, with_seed


def _load_config(path: str | None):
    if path is None:
        return build_scenario()
    return load_scenario(Path(path))


def _cmd_sim_run(args: argparse.Namespace) -> int:
    config = _load_config(args.scenario)
    if args.seed is not None:
        config = with_seed(config, args.seed)
    log = run(config)
    spans, flags = write_dataset(log, args.out)
    print(f"scenario {config.name!r} seed {config.rng_seed}: "
          f"{config.duration_s:.0f} s simulated")
    print(f"dataset written to {args.out}: {len(spans)} trip(s), "
          f"{log.tx_total} messages sent, {log.dropped} dropped")
    for span in spans:
        print(f"  trip_{span.index}: mission {span.mission_id}, "
              f"{span.start_ns / 1e9:.1f} s .. {span.end_ns / 1e9:.1f} s")
    for flag in flags:
        print(f"  warning: {flag}")
    return 0


def _cmd_dataset_validate(args: argparse.Namespace) -> int:
    problems = validate_dataset(args.dataset)
    for problem in problems:
        print(problem)
    if problems:
        print(f"{len(problems)} problem(s) found")
        return 1
    print("OK")
    return 0


def _cmd_dataset_info(args: argparse.Namespace) -> int:
    print(json.dumps(dataset_info(args.dataset), indent=2))
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    kind = args.kind
    if kind == "loss":
        report = analysis.package_loss(args.dataset,
                                       cell_size_m=args.cell_size)
        if args.format == "csv":
            out = (analysis.heatmap_csv(report) if args.heatmap
                   else report.to_csv())
            print(out, end="")
            return 0
    elif kind == "travel":
        report = analysis.travel_times(args.dataset)
    elif kind == "compliance":
        report = analysis.non_compliance(args.dataset)
    else:
        report = analysis.red_fraction(args.dataset)
    if args.format == "csv":
        print(report.to_csv(), end="")
    else:
        print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_telemetry_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(_load_config(args.scenario), rate=args.rate)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shuttlelab",
        description="V2X shuttle simulation lab: run, archive, analyze")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run simulations")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)
    sim_run = sim_sub.add_parser("run", help="run a scenario to a dataset")
    sim_run.add_argument("--scenario", help="scenario YAML (default config "
                                            "when omitted)")
    sim_run.add_argument("--seed", type=int, help="override the RNG seed")
    sim_run.add_argument("--out", required=True, help="dataset output root")
    sim_run.set_defaults(func=_cmd_sim_run)

    dataset = sub.add_parser("dataset", help="inspect recorded datasets")
    ds_sub = dataset.add_subparsers(dest="dataset_command", required=True)
    ds_validate = ds_sub.add_parser("validate",
                                    help="check layout, schemas, timestamps")
    ds_validate.add_argument("dataset")
    ds_validate.set_defaults(func=_cmd_dataset_validate)
    ds_info = ds_sub.add_parser("info", help="summarize a dataset as JSON")
    ds_info.add_argument("dataset")
    ds_info.set_defaults(func=_cmd_dataset_info)

    analyze = sub.add_parser("analyze", help="compute metrics over a dataset")
    analyze.add_argument("kind",
                         choices=["loss", "travel", "compliance",
                                  "red-fraction"])
    analyze.add_argument("dataset")
    fmt = analyze.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="format", action="store_const",
                     const="json", help="JSON report (default)")
    fmt.add_argument("--csv", dest="format", action="store_const",
                     const="csv", help="gnuplot-ready table")
    analyze.add_argument("--cell-size", type=float, default=5.0,
                         help="heatmap cell edge in meters (loss only)")
    analyze.add_argument("--heatmap", action="store_true",
                         help="with --csv, emit the loss heatmap table")
    analyze.set_defaults(func=_cmd_analyze, format="json")

    telemetry = sub.add_parser("telemetry", help="serve live telemetry")
    tel_sub = telemetry.add_subparsers(dest="telemetry_command",
                                       required=True)
    serve = tel_sub.add_parser("serve", help="start the websocket/HTTP "
                                             "server for one scenario")
    serve.add_argument("--scenario", help="scenario YAML (default config "
                                          "when omitted)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8711)
    serve.add_argument("--rate", type=float, default=1.0,
                       help="simulation speed, 1.0 = real time")
    serve.set_defaults(func=_cmd_telemetry_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, analysis.NoPhaseLog, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: `grangernet run` / `grangernet report`.

Exit codes: 0 success, 1 usage error, 2 data error, 3 resource limit or
interrupt.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, RunConfig
from .ensemble import EnsembleError
from .evaluate import EvaluateError
from .ingest import IngestError
from .network import NetworkError
from .perturb import PerturbError
from .pipeline import PipelineError
from .quantize import QuantizeError
from .xpfsa import XpfsaError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RESOURCE = 3

_DATA_ERRORS = (ConfigError, IngestError, QuantizeError, XpfsaError,
                NetworkError, EnsembleError, EvaluateError, PerturbError,
                PipelineError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grangernet",
                     description="Event-forecasting pipeline over tiled "
                                 "spatio-temporal event logs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one pipeline stage (or all)")
    run.add_argument("--config", required=True, help="YAML run configuration")
    run.add_argument("--stage", required=True,
                     choices=pipeline.STAGE_ORDER + ["all"],
                     help="stage to run; 'all' runs the full pipeline")

    rep = sub.add_parser("report", help="emit summary tables from a finished run")
    rep.add_argument("--config", required=True, help="YAML run configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = RunConfig.from_yaml(args.config)
        if args.command == "run":
            stages = pipeline.STAGE_ORDER if args.stage == "all" else [args.stage]
            for stage in stages:
                status = pipeline.run_stage(cfg, stage)
                print(f"{stage}: {status}")
        else:
            for stage in ("evaluate", "diffusion", "report"):
                status = pipeline.run_stage(cfg, stage)
                print(f"{stage}: {status}")
            summary = json.loads(
                (Path(cfg.output_dir) / "report_summary.json").read_text())
            print(json.dumps(summary, indent=2, sort_keys=True))
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyboardInterrupt, MemoryError) as exc:
        print(f"interrupted: {type(exc).__name__}", file=sys.stderr)
        return EXIT_RESOURCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

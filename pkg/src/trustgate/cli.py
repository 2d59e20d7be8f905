"""Command-line entry point.

Subcommands::

    trustgate run             --config PATH [--seed N] [--out DIR] [--experiment NAME]
    trustgate validate-config --config PATH
    trustgate replay          --events FILE --state FILE
    trustgate dump-state      --config PATH [--seed N] [--experiment NAME]

Exit codes: 0 success, 2 invalid configuration, 3 scenario check failure or
replay divergence, 4 unreadable/corrupt event log.  ``TRUSTGATE_LOG`` sets the
log level (e.g. ``DEBUG``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import EXPERIMENTS, load_config
from .errors import ConfigError, ReplayError, ScenarioAssertionError
from .replay import replay_files
from .scenarios import run_experiment, write_artifacts

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSERTION = 3
EXIT_CORRUPT = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trustgate", description="Trust-aware attribute-based access control simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(p, out=True):
        p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--experiment", choices=EXPERIMENTS, help="override the config experiment")
        if out:
            p.add_argument("--out", help="output directory (default: config output.dir)")

    scenario_args(sub.add_parser("run", help="run an experiment and write artifacts"))
    p = sub.add_parser("validate-config", help="check a config file against the schema")
    p.add_argument("--config", required=True)
    p = sub.add_parser("replay", help="recompute reputations/trust from an event log and compare with a state dump")
    p.add_argument("--events", required=True)
    p.add_argument("--state", required=True)
    scenario_args(sub.add_parser("dump-state", help="run an experiment and print its final state as JSON"), out=False)
    return parser


def _config_error(exc: ConfigError) -> int:
    print(json.dumps({"error": "config", "fields": [{"field": loc, "message": msg} for loc, msg in exc.errors]}),
          file=sys.stderr)
    return EXIT_CONFIG


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TRUSTGATE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate-config":
            cfg = load_config(args.config)
            print(f"ok: {cfg.experiment} (schema_version {cfg.schema_version})")
            return EXIT_OK
        if args.command == "replay":
            report = replay_files(args.events, args.state)
            print(report.summary())
            return EXIT_OK if report.ok else EXIT_ASSERTION
        cfg = load_config(args.config, seed=args.seed, experiment=args.experiment)
        result = run_experiment(cfg, strict=False)
        if args.command == "dump-state":
            print(json.dumps({"runs": result.states}, sort_keys=True, indent=1))
        else:
            for path in write_artifacts(result, args.out or cfg.output.dir):
                print(path)
        for c in result.checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name} {c.detail}".rstrip(), file=sys.stderr)
        if result.failed:
            raise ScenarioAssertionError(result.failed)
        return EXIT_OK
    except ConfigError as exc:
        return _config_error(exc)
    except ScenarioAssertionError as exc:
        print(json.dumps({"error": "assertion", "failed": [c.name for c in exc.failed]}), file=sys.stderr)
        return EXIT_ASSERTION
    except ReplayError as exc:
        print(json.dumps({"error": "corrupt_log", "message": str(exc)}), file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())

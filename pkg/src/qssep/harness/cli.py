"""Command-line entry point: ``qssep <command> --config <path>``.

The exit status is 0 when the report passes, 1 when it fails and 2 for
configuration or usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .compare import Row
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import run_experiment
from .report import ComparisonReport, emit_report, render_csv

OUT_DIR_ENV = "QSSEP_OUT_DIR"
DEFAULT_OUT_DIR = "qssep-output"
COMMANDS = ("nc", "fock-check", "simulate", "solve", "steady", "verify", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qssep", description="QSSEP simulation and verification harness")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True,
                        help="experiment config (JSON); for 'report', a previously written report JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default=None,
                        help=f"output directory (default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    parser.add_argument("--reproducible", action="store_true",
                        help="omit wall-clock data so that repeated runs give identical files")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for trajectory pools")
    parser.add_argument("--quiet", action="store_true", help="print only the verdict line")
    return parser


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


def _rows_from_json(rows: list[dict]) -> list[Row]:
    def num(v):
        return float(v) if isinstance(v, str) else v
    return [Row(**{k: (num(v) if k not in ("observable", "mode", "verdict", "note") else v)
                   for k, v in r.items()}) for r in rows]


def _rerun_report(path: Path, args) -> tuple[ComparisonReport, bool]:
    """Re-run the config embedded in a report and check the rows reproduce exactly."""
    try:
        stored = json.loads(path.read_text())
        cfg = ExperimentConfig.from_dict(stored["config"])
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except (KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not a report file ({exc})") from None
    fresh = run_experiment(cfg, threads=args.threads, reproducible=True)
    old = ComparisonReport(stored["name"], stored["kind"], stored["task"], _rows_from_json(stored["rows"]),
                           stored["config"], stored["config_hash"], stored["seed"])
    same = render_csv(old) == render_csv(fresh) and stored["config_hash"] == fresh.config_hash
    return fresh, same


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    out_dir = _out_dir(args.out_dir)
    try:
        if args.command == "report":
            report, same = _rerun_report(Path(args.config), args)
            paths = emit_report(report, out_dir, report.config.get("formats", ("csv", "json", "plotdata")))
            verdict = same and report.passed
            print(f"{report.name}: rerun {'reproduces' if same else 'DIFFERS FROM'} the stored report; "
                  f"verdict {report.verdict}")
            return 0 if verdict else 1
        cfg = load_config(args.config)
        if cfg.kind != args.command:
            raise ConfigError(f"kind: config is of kind {cfg.kind!r}, but the command is {args.command!r}")
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        report = run_experiment(cfg, threads=args.threads, reproducible=args.reproducible)
        paths = emit_report(report, out_dir, cfg.formats)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    if args.quiet:
        print(f"{report.name}: {report.verdict}")
    else:
        print(report.summary())
        for fmt, path in paths.items():
            print(f"  wrote {fmt}: {path}")
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command line entry point.

Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .config import ExperimentConfig, load_config, parse_config
from .errors import ConvergenceError, ValidationError
from .grid import measure_csv_text

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4


def _write(text: str, out: str | None) -> None:
    if out:
        harness.emit(text, out)
    else:
        sys.stdout.write(text)


def _target(args, cfg: ExperimentConfig, key: str) -> str | None:
    return args.out or cfg.outputs.get(key)


def cmd_validate(args, cfg):
    _write(harness.json_text({"valid": True, "config": cfg.to_dict()}), args.out)


def cmd_lyapunov(args, cfg):
    _write(harness.json_text(harness.run_lyapunov(cfg)), _target(args, cfg, "lyapunov"))


def cmd_stationary(args, cfg):
    report, eta = harness.run_stationary(cfg)
    out = _target(args, cfg, "stationary")
    if out:
        harness.emit(measure_csv_text(eta), out)
        harness.emit(harness.json_text(report), out + ".report.json")
    sys.stdout.write(harness.json_text(report))


def cmd_expanding(args, cfg):
    _write(harness.json_text(harness.run_expanding(cfg)), _target(args, cfg, "expanding"))


def cmd_sweep(args, cfg):
    rows = harness.run_sweep(cfg, threads=args.threads)
    _write(harness.sweep_csv(rows), _target(args, cfg, "sweep"))


def cmd_energy_decay(args, cfg):
    rows, summary = harness.run_energy_decay(cfg)
    out = _target(args, cfg, "energy")
    if out:
        harness.emit(harness.energy_csv(rows), out)
        harness.emit(harness.json_text(summary), out + ".summary.json")
    else:
        sys.stdout.write(harness.energy_csv(rows))
    sys.stdout.write(harness.summary_line(summary) + "\n")


COMMANDS = {
    "validate": cmd_validate,
    "lyapunov": cmd_lyapunov,
    "stationary": cmd_stationary,
    "expanding": cmd_expanding,
    "sweep": cmd_sweep,
    "energy-decay": cmd_energy_decay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cocyclelab",
                                     description="Lyapunov exponents and stationary measures of Markov GL(2) cocycles")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="path to a JSON experiment config")
        p.add_argument("--out", help="output path (written atomically)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
        p.add_argument("--grid", type=int, help="override the grid size N")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.grid is not None:
            raw = cfg.to_dict()
            raw["grid"] = args.grid
            if raw["energy"] is not None and args.grid <= 256:
                raw["energy"]["grid"] = args.grid
            cfg = parse_config(raw)
        if args.threads < 1:
            raise ValidationError("--threads: must be >= 1")
        COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

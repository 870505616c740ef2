"""``histoprog`` command line: synth, normalize, train-classifier, train-prognosis, distill, evaluate, report.

Exit codes: 0 success, 1 validation error (bad arguments or config, missing inputs, invalid data),
2 runtime failure (divergence, locked run directory, anything unexpected).
"""

from __future__ import annotations

import argparse
import sys

from ..gradcore import TrainingDiverged
from . import stages
from .config import RunConfig, dump, resolve
from .rundir import RunDir, RunLocked

COMMANDS = ("synth", "normalize", "train-classifier", "train-prognosis", "distill", "evaluate", "report")

_STAGES = {
    "synth": stages.synth,
    "train-classifier": stages.train_classifier,
    "train-prognosis": stages.train_prognosis_stage,
    "distill": stages.distill_stage,
    "evaluate": stages.evaluate,
    "report": stages.report,
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="histoprog", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--run", default=None if name == "normalize" else "run",
                       help="run directory (default: ./run)")
        p.add_argument("--config", help="key=value config file; defaults to the run's config.resolved")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int)
        if name == "normalize":
            p.add_argument("--method", choices=("macenko", "reinhard", "style"), default="style")
            p.add_argument("--input", help="PNG to normalize (single-image mode)")
            p.add_argument("--output", help="where to write the normalized PNG")
            p.add_argument("--reference", help="reference PNG for macenko/reinhard")
            p.add_argument("--checkpoint", help="trained style checkpoint for --method style")
    return parser


def _normalize(args) -> None:
    if args.input is not None:
        if args.output is None:
            raise UsageError("normalize --input needs --output")
        ckpt = args.checkpoint
        if ckpt is None and args.method == "style" and args.run is not None:
            ckpt = RunDir(args.run).checkpoints / "style.ckpt"
        stages.normalize_file(args.method, args.input, args.output, args.reference, ckpt)
        return
    if args.run is None:
        raise UsageError("normalize needs --input/--output or --run")
    if args.method != "style":
        raise UsageError("run mode trains the style normalizer; use --input for macenko/reinhard")
    with RunDir(args.run) as run:
        cfg = run.resolve_config(args.config, args.overrides, args.seed)
        run.write_config(cfg)
        stages.normalize_run(run, cfg)


def run(argv=None) -> int:
    """Execute one command; returns the exit code instead of exiting."""
    try:
        args = build_parser().parse_args(argv)
        if args.command == "normalize":
            _normalize(args)
        else:
            with RunDir(args.run) as rd:
                cfg = rd.resolve_config(args.config, args.overrides, args.seed)
                rd.write_config(cfg)
                _STAGES[args.command](rd, cfg)
    except FileNotFoundError as e:
        path = e.filename if e.filename is not None else (e.args[0] if e.args else "")
        print(f"error: missing input: {path}", file=sys.stderr)
        return 1
    except (UsageError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TrainingDiverged, RunLocked) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - the exit code contract covers every failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


__all__ = ["COMMANDS", "RunConfig", "build_parser", "dump", "main", "resolve", "run"]

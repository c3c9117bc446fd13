"""Command line: `lab run <config>`, `lab list`, `lab check <config>`.

Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 usage or config error, 3 runtime error.
"""
import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.core.config import logger
from app.experiments import UnknownExperiment, list_experiments, load_config, run_experiment, tomllib
from app.utils.expr import ExpressionError

EXIT_PASS = 0
EXIT_VERDICT = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONFIG_ERRORS = (ValidationError, UnknownExperiment, ExpressionError, FileNotFoundError, IsADirectoryError,
                 tomllib.TOMLDecodeError)


def config_message(ex: Exception) -> str:
    if isinstance(ex, ValidationError):
        parts = []
        for err in ex.errors():
            loc = ".".join(str(p) for p in err.get("loc", ()))
            msg = str(err.get("msg", "")).removeprefix("Value error, ")
            parts.append(f"{loc}: {msg}" if loc else msg)
        return "; ".join(parts)
    return str(ex)


def _cmd_list(_: argparse.Namespace) -> int:
    for exp in list_experiments():
        print(f"{exp.id:18s} {exp.summary}")
    return EXIT_PASS


def _cmd_check(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    print(f"ok {cfg.experiment}")
    return EXIT_PASS


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    overrides = {"output_dir": args.output_dir, "seed": args.seed}
    cfg = cfg.model_copy(update={k: v for k, v in overrides.items() if v is not None})
    report = run_experiment(cfg)
    for v in report.verdicts:
        mark = "PASS" if v.passed else "FAIL"
        value = "" if v.value is None else f" value={v.value:.6g}"
        threshold = "" if v.threshold is None else f" threshold={v.threshold:.6g}"
        print(f"{mark} {v.name}{value}{threshold}")
    print(f"{report.experiment}: {'pass' if report.passed else 'fail'} ({report.wall_clock_s:.2f}s)")
    return EXIT_PASS if report.passed else EXIT_VERDICT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description="Numerical experiments for forced mean curvature flow.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment named in a config file")
    p_run.add_argument("config", help="path to a TOML experiment config")
    p_run.add_argument("--output-dir", default=None, help="override the config's output_dir")
    p_run.add_argument("--seed", type=int, default=None, help="override the config's seed (seminorm pair sampling)")
    p_run.set_defaults(handler=_cmd_run)

    p_list = sub.add_parser("list", help="enumerate experiments")
    p_list.set_defaults(handler=_cmd_list)

    p_check = sub.add_parser("check", help="validate a config without running it")
    p_check.add_argument("config", help="path to a TOML experiment config")
    p_check.set_defaults(handler=_cmd_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return EXIT_PASS if ex.code == 0 else EXIT_CONFIG
    try:
        return args.handler(args)
    except CONFIG_ERRORS as ex:
        print(f"config error: {config_message(ex)}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as ex:
        logger.exception(f"lab {args.command} failed: {ex}")
        print(f"runtime error: {type(ex).__name__}: {ex}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

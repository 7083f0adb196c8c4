"""
Command-line interface.

    nls-decay-lab run EXPERIMENT.yaml [...] [--workers N]
    nls-decay-lab resume RUN_DIR
    nls-decay-lab fit TRACE.csv --window A,B [--target S] [--tolerance T]
    nls-decay-lab verify {oracle,dispersive,conservation,quadrature,lemmas,pseudo-conformal,all}
    nls-decay-lab report DIRECTORY

Every command prints a JSON document on stdout and exits 0 when all checks
pass, 1 when a check fails and 2 on invalid input.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, Optional, Sequence, Tuple

from nls_decay_lab import __version__
from nls_decay_lab.config import get_config
from nls_decay_lab.exceptions import ConfigError, NLSLabError, ValidationError
from nls_decay_lab.runner import fit_and_report, report_directory, resume_run, run_campaign
from nls_decay_lab.utils import configure_logging, to_jsonable
from nls_decay_lab.verification import VERIFY_SUITES, verify


logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INVALID = 2


def _window(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"window must be 'A,B', got '{text}'") from exc
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError(f"window needs 0 < A < B, got {lo}, {hi}")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nls-decay-lab",
        description="Simulate defocusing NLS and measure sup-norm decay estimates.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL for this invocation")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one or more experiment files")
    run.add_argument("configs", nargs="+", help="Experiment YAML files")
    run.add_argument("--workers", type=int, default=None, help="Experiments run in parallel")

    resume = commands.add_parser("resume", help="Continue an interrupted run")
    resume.add_argument("run_dir", help="Run directory (or its manifest.json)")

    fit = commands.add_parser("fit", help="Fit the decay exponent of a stored trace")
    fit.add_argument("trace", help="trace.csv written by a run")
    fit.add_argument("--window", type=_window, required=True, help="Fit window 'A,B'")
    fit.add_argument("--target", type=float, default=None, help="Expected slope")
    fit.add_argument("--tolerance", type=float, default=None, help="Allowed |slope - target|")

    check = commands.add_parser("verify", help="Run a built-in acceptance suite")
    check.add_argument("suite", choices=sorted(VERIFY_SUITES) + ["all"])

    report = commands.add_parser("report", help="Aggregate run summaries into report.csv")
    report.add_argument("directory", help="Directory holding run directories")
    return parser


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(to_jsonable(payload), indent=2, sort_keys=True))


def _cmd_run(args: argparse.Namespace) -> int:
    workers = args.workers or get_config().runner.workers
    results = run_campaign(args.configs, workers=workers)
    passed = all(r["status"] in ("complete", "already-complete") and r["exit_status"] == "pass" for r in results)
    _emit({"passed": passed, "runs": results})
    return EXIT_PASS if passed else EXIT_FAIL


def _cmd_resume(args: argparse.Namespace) -> int:
    manifest = resume_run(args.run_dir)
    payload = manifest.to_dict()
    payload["run_dir"] = manifest.run_dir
    _emit(payload)
    return EXIT_PASS if manifest.passed else EXIT_FAIL


def _cmd_fit(args: argparse.Namespace) -> int:
    report = fit_and_report(args.trace, args.window, args.target, args.tolerance)
    _emit(report)
    return EXIT_FAIL if report.get("passed") is False else EXIT_PASS


def _cmd_verify(args: argparse.Namespace) -> int:
    result = verify(args.suite)
    _emit(result)
    return EXIT_PASS if result["passed"] else EXIT_FAIL


def _cmd_report(args: argparse.Namespace) -> int:
    frame = report_directory(args.directory)
    _emit({"runs": len(frame), "columns": list(frame.columns), "report": f"{args.directory}/report.csv"})
    return EXIT_PASS


COMMANDS = {
    "run": _cmd_run,
    "resume": _cmd_resume,
    "fit": _cmd_fit,
    "verify": _cmd_verify,
    "report": _cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the ``nls-decay-lab`` command.

    Args:
        argv: Arguments without the program name (``sys.argv[1:]`` when None).

    Returns:
        int: Process exit status.
    """
    args = build_parser().parse_args(argv)
    settings = get_config().logging
    if args.log_level:
        settings.level = args.log_level
    configure_logging(settings)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _emit({"passed": False, "error": "invalid configuration", "violations": exc.errors})
        return EXIT_INVALID
    except ValidationError as exc:
        _emit({"passed": False, "error": str(exc)})
        return EXIT_INVALID
    except NLSLabError as exc:
        logger.error(str(exc))
        _emit({"passed": False, "error": str(exc), "kind": type(exc).__name__})
        return EXIT_FAIL
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

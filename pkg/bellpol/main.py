import argparse
import logging
import sys
from typing import List, Optional

from .commands import CommandOutput, cmd_curves, cmd_dp, cmd_fit, cmd_simulate, cmd_sweep, cmd_validate
from .config import settings
from .exceptions import BellPolError
from .io import json_text
from .report import Report
from .run_config import load_run_config
from .validation import SUITES

logger = logging.getLogger("main")

RUN_COMMANDS = {
    "curves": cmd_curves,
    "sweep": cmd_sweep,
    "dp": cmd_dp,
    "simulate": cmd_simulate,
}

# CLI dest -> RunConfig key
OVERRIDE_KEYS = (
    "state", "eta", "gain", "nbar", "modes", "pulses", "seed", "orders", "out", "noise_sigma",
    "workers", "chunk_size", "batches", "plate", "curve_points", "mc", "format", "step_h", "step_q",
    "chi_h", "chi_q", "bins", "cutoff", "refine_tol", "subtract_noise",
)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="key=value run configuration file")
    parser.add_argument("--state", choices=["psi+", "psi-", "phi+", "phi-"])
    parser.add_argument("--eta", type=float, help="detection efficiency")
    strength = parser.add_mutually_exclusive_group()
    strength.add_argument("--gain", type=float, help="parametric gain Gamma")
    strength.add_argument("--nbar", type=float, help="mean photons per mode N")
    parser.add_argument("--modes", type=int, metavar="M", help="independent mode quadruples")
    parser.add_argument("--pulses", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--orders", help="comma-separated DP/moment orders, e.g. 1,2,4")
    parser.add_argument("--out", metavar="PATH")
    parser.add_argument("--noise-sigma", dest="noise_sigma", type=float, help="electronic noise per channel")
    parser.add_argument("--no-subtract-noise", dest="subtract_noise", action="store_const", const=False)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--chunk-size", dest="chunk_size", type=int)
    parser.add_argument("--batches", type=int, help="batch-means groups")
    parser.add_argument("--cutoff", type=int, help="Fock cutoff for outcome tables")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bellpol", description="Macroscopic Bell-state polarization statistics")
    sub = parser.add_subparsers(dest="command", required=True)

    curves = sub.add_parser("curves", help="NRF versus plate angle")
    _add_run_flags(curves)
    curves.add_argument("--plate", choices=["hwp", "qwp"])
    curves.add_argument("--points", dest="curve_points", type=int)
    curves.add_argument("--mc", action="store_const", const=True, help="add Monte Carlo columns")

    sweep = sub.add_parser("sweep", help="sphere map of NRF and fourth moment")
    _add_run_flags(sweep)
    sweep.add_argument("--format", choices=["csv", "json"])
    sweep.add_argument("--step-h", dest="step_h", type=float)
    sweep.add_argument("--step-q", dest="step_q", type=float)

    dp = sub.add_parser("dp", help="degrees of polarization")
    _add_run_flags(dp)
    dp.add_argument("--mc", action="store_const", const=True, help="add Monte Carlo estimates")
    dp.add_argument("--step-h", dest="step_h", type=float)
    dp.add_argument("--step-q", dest="step_q", type=float)
    dp.add_argument("--refine-tol", dest="refine_tol", type=float)

    simulate = sub.add_parser("simulate", help="one pulse batch at fixed plate angles")
    _add_run_flags(simulate)
    simulate.add_argument("--chi-h", dest="chi_h", type=float, help="HWP angle (deg)")
    simulate.add_argument("--chi-q", dest="chi_q", type=float, help="QWP angle (deg)")
    simulate.add_argument("--bins", type=int)

    fit = sub.add_parser("fit", help="fit eta and N to measured NRF curves")
    fit.add_argument("inputs", nargs="+", metavar="CSV")
    fit.add_argument("--model", dest="models", action="append", required=True,
                     help="state:plate, e.g. psi+:hwp (once per input, or once for all)")
    fit.add_argument("--out", metavar="PATH")

    validate = sub.add_parser("validate", help="run the self-check suites")
    validate.add_argument("--suite", dest="suites", action="append", choices=list(SUITES))
    validate.add_argument("--out", metavar="PATH")
    return parser


def run(args: argparse.Namespace) -> CommandOutput:
    if args.command == "fit":
        return cmd_fit(args.inputs, args.models, args.out)
    if args.command == "validate":
        return cmd_validate(args.suites, args.out)
    overrides = {key: getattr(args, key, None) for key in OVERRIDE_KEYS}
    config = load_run_config(args.config, overrides)
    logger.debug(f"Run configuration:\n{config.to_text()}")
    return RUN_COMMANDS[args.command](config)


def main(argv: Optional[List[str]] = None) -> int:
    """
    CLI entry point.

    Returns:
        0 on success, 1 on validation failure, 2 on usage or run errors
    """
    logging.basicConfig(level=settings.LOG_LEVEL)
    args = build_parser().parse_args(argv)
    try:
        output = run(args)
    except BellPolError as exc:
        logger.error(f"{exc.error_code}: {exc.message}")
        sys.stdout.write(json_text(Report.from_exception(exc)))
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"Unexpected error in {args.command}")
        sys.stdout.write(json_text(Report.error(str(exc), "INTERNAL_ERROR", exit_code=2)))
        return 2

    if output.files or output.text is None:
        sys.stdout.write(json_text(output.report))
    else:
        sys.stdout.write(output.text)
    return 0

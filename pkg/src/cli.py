"""
Command-line front end.

    capsym verify talenti --config talenti.cfg --out results --svg
    capsym verify all --lambda 0.5 --jobs 4
    capsym pde eigen --lambda -0.3 --spacing 1/64

Exit codes: 0 when every report passed, 1 when any failed, 2 on configuration,
solver or I/O errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import settings
from .errors import CapsymError
from .models import ExperimentConfig
from .runner import default_suite, load_config, run_batch, validate_config, with_overrides
from .utils import parse_number

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

# (command, action) -> experiment; None runs the default suite
COMMANDS: Dict[Tuple[str, str], Optional[str]] = {
    ("gauge", "eval"): "gauge_eval",
    ("gauge", "check"): "gauge_check",
    ("geom", "perimeter"): "perimeter",
    ("geom", "isoperimetric"): "isoperimetric",
    ("harmonic", "solve"): "harmonic",
    ("harmonic", "flux"): "flux_identity",
    ("rearrange", "profile"): "rearrange",
    ("rearrange", "coarea"): "coarea",
    ("pde", "solve"): "pde_solve",
    ("pde", "ode"): "pde_ode",
    ("pde", "eigen"): "pde_eigen",
    ("verify", "polya-szego"): "polya_szego",
    ("verify", "sobolev"): "sobolev",
    ("verify", "moser"): "moser",
    ("verify", "talenti"): "talenti",
    ("verify", "bossel-daners"): "bossel_daners",
    ("verify", "all"): None,
}

_HELP = {
    "gauge": "Gauge and dual gauge evaluation",
    "geom": "Capillary perimeter and isoperimetric checks",
    "harmonic": "Drift potential h",
    "rearrange": "Capillary symmetrization",
    "pde": "Mixed boundary value and eigenvalue solvers",
    "verify": "Inequality experiments",
}


def configure_logging(level: Optional[int] = None) -> None:
    """Root logger on standard error at the CAPSYM_LOG level."""
    logging.basicConfig(
        level=settings.log_level if level is None else level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, action="append", help="Experiment config file (repeatable)")
    common.add_argument("--out", type=Path, default=None, help="Output directory")
    common.add_argument("--jobs", type=int, default=None, help="Worker processes for batches")
    common.add_argument("--seed", type=int, default=None, help="Base random seed")
    common.add_argument("--svg", action="store_true", help="Write SVG charts")
    common.add_argument("--lambda", dest="lambda_", type=parse_number, default=None, help="Contact parameter")
    common.add_argument("--p", type=parse_number, default=None, help="Exponent")
    common.add_argument("--n", type=int, default=None, help="Dimension (2 or 3)")
    common.add_argument("--spacing", type=parse_number, default=None, help="Grid spacing, e.g. 1/64")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capsym",
        description="Capillary symmetrization and sharp inequality experiments",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    common = _common_options()

    actions: Dict[str, List[str]] = {}
    for command, action in COMMANDS:
        actions.setdefault(command, []).append(action)
    for command, names in actions.items():
        if command == "rearrange":
            command_parser = subparsers.add_parser(command, help=_HELP[command], parents=[common])
            command_parser.add_argument("action", nargs="?", choices=names, default="profile")
            continue
        command_parser = subparsers.add_parser(command, help=_HELP[command])
        action_parsers = command_parser.add_subparsers(dest="action", required=True)
        for name in names:
            action_parsers.add_parser(name, parents=[common])
    return parser


def _flag_overrides(args: argparse.Namespace) -> Dict[str, object]:
    overrides = {
        "seed": args.seed,
        "lambda": args.lambda_,
        "p": args.p,
        "n": args.n,
        "spacing": args.spacing,
        "output_dir": str(args.out) if args.out is not None else None,
        "svg": True if args.svg else None,
    }
    return {key: value for key, value in overrides.items() if value is not None}


def resolve_configs(args: argparse.Namespace) -> List[ExperimentConfig]:
    """Configs from files (or flags alone), with the subcommand's experiment and flag overrides."""
    experiment = COMMANDS[(args.command, args.action)]
    overrides = _flag_overrides(args)
    if args.config:
        bases = [load_config(path) for path in args.config]
    else:
        payload = {"experiment": experiment or "polya_szego", **overrides}
        if payload.get("experiment") == "sobolev" and "p" not in payload:
            payload["p"] = 1.5 if payload.get("n", 2) == 2 else 2.0
        bases = [validate_config(payload)]

    configs: List[ExperimentConfig] = []
    for base in bases:
        if experiment is not None and base.experiment != experiment:
            logger.warning(f"Config experiment {base.experiment} replaced by {experiment} from the command line")
        config = with_overrides(base, experiment=experiment, **overrides)
        configs.extend(default_suite(config) if experiment is None else [config])
    return configs


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    try:
        configs = resolve_configs(args)
        results = run_batch(configs, jobs=args.jobs, out_dir=args.out)
    except (CapsymError, OSError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR

    failed = [result for result in results if not result.passed]
    for result in results:
        status = "passed" if result.passed else "FAILED"
        logger.info(f"{result.config.experiment} {status}; artifacts: {', '.join(map(str, result.artifacts))}")
    return EXIT_FAILED if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

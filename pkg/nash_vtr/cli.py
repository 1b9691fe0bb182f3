""" Command-line interface of the experiment harness.

Subcommands:

* ``run --config <path>``: run a regret experiment and write CSV/JSON outputs.
* ``validate --instance <path>``: load and check an instance document.
* ``gen --kind <kind> --out <path>``: generate a random instance document.

Exit codes: 0 on success, 2 on configuration or instance-format errors, 3 on numeric or
invariant failures.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from nash_vtr.data_structures import AlgorithmKind
from nash_vtr.equilibrium import EquilibriumInvariantError, LPSolveError
from nash_vtr.evaluation import EvaluationInvariantError
from nash_vtr.game_model import (
    InstanceFormatError,
    InstanceValidationError,
    LinearMixtureMG,
    load_instance,
    save_instance,
)
from nash_vtr.harness import (
    ConfigError,
    ExperimentRunError,
    InstanceSpec,
    OutputError,
    build_instance,
    load_config,
    parse_config,
    run_experiment,
)
from nash_vtr.linalg import NumericError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_GEN_KINDS = ["tabular-random", "linear-random", "dummy-mdp", "turn-based-random"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nash-vtr", description="Self-play regret experiments on linear mixture MGs")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a regret experiment")
    run.add_argument("--config", required=True, help="Experiment JSON document")
    run.add_argument("--seeds", type=int, help="Number of seeded runs (derived from the master seed)")
    run.add_argument("--out", help="Output directory")
    run.add_argument("--algo", choices=[k.value for k in AlgorithmKind], help="Learning loop variant")
    run.add_argument("--monitor", action="store_true", help="Evaluate the event monitors")
    run.add_argument("--eval-every", type=int, help="Write a CSV row every n episodes")
    run.add_argument("--quiet", action="store_true", help="Hide progress bars")

    validate = sub.add_parser("validate", help="Check an instance document")
    validate.add_argument("--instance", required=True, help="Instance JSON document")

    gen = sub.add_parser("gen", help="Generate a random instance document")
    gen.add_argument("--kind", required=True, choices=_GEN_KINDS)
    gen.add_argument("--out", required=True, help="Destination path")
    gen.add_argument("--S", dest="num_states", type=int, default=3)
    gen.add_argument("--A", dest="num_actions_max", type=int, default=2)
    gen.add_argument("--B", dest="num_actions_min", type=int, default=2)
    gen.add_argument("--H", dest="horizon", type=int, default=3)
    gen.add_argument("--d", dest="dim", type=int, default=4)
    gen.add_argument("--seed", type=int, default=0)
    return parser


def _apply_overrides(document: Dict[str, Any], args: argparse.Namespace) -> Dict[str, Any]:
    document = dict(document)
    if args.seeds is not None:
        document.pop("seeds", None)
        document["num_seeds"] = args.seeds
    if args.out is not None:
        document["out"] = args.out
    if args.algo is not None:
        document["algorithm"] = args.algo
    if args.monitor:
        document["monitor"] = True
    if args.eval_every is not None:
        document["eval_every"] = args.eval_every
    return document


def _run(args: argparse.Namespace) -> int:
    config = parse_config(_apply_overrides(load_config(args.config), args))
    result = run_experiment(config, out_dir=config.out, quiet=args.quiet)
    for summary in result.summaries:
        print(f"run {summary.run_index} seed {summary.seed}: regret {summary.regret:.6f}")
    print(f"Outputs written to {config.out}")
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    game = load_instance(args.instance)
    game.validate()
    kind = game.kind.value if isinstance(game, LinearMixtureMG) else type(game).__name__
    print(f"Valid {kind} instance: S={game.num_states} H={game.horizon} d={game.dim} B={game.param_bound:.6g}")
    return EXIT_OK


def _gen(args: argparse.Namespace) -> int:
    fields = {
        "kind": args.kind,
        "S": args.num_states,
        "A": args.num_actions_max,
        "B": args.num_actions_min,
        "H": args.horizon,
        "d": args.dim,
        "seed": args.seed,
    }
    try:
        spec = InstanceSpec.model_validate(fields)
    except ValidationError as e:
        raise ConfigError(f"Invalid instance options: {e.errors()[0]['msg']}") from e
    save_instance(build_instance(spec), args.out)
    print(f"Wrote {args.kind} instance to {args.out}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": _run, "validate": _validate, "gen": _gen}
    try:
        return handlers[args.command](args)
    except (ConfigError, InstanceFormatError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (
        NumericError,
        LPSolveError,
        EquilibriumInvariantError,
        EvaluationInvariantError,
        InstanceValidationError,
        ExperimentRunError,
        OutputError,
    ) as e:
        logger.error("%s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

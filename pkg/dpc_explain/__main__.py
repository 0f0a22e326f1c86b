# coding=utf-8
""" Command-line entry point: ``python -m dpc_explain <command> [options]``. """

from __future__ import absolute_import, division, print_function

import argparse
import logging
import sys

from .configuration_utils import ATTACK_KINDS, ExperimentConfig
from .errors import ConfigError, IngestionError, NumericError, ParameterError, StructuralError, TrainingError
from .experiments import cmd_attack, cmd_explain, cmd_report, cmd_sweep, cmd_train_ae

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="dpc_explain", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, type=str, help="Experiment configuration JSON file.")
    common.add_argument("--seed", default=None, type=int, help="Run a single seed instead of the configured list.")
    common.add_argument("--out-dir", default=None, type=str, help="Directory for artifacts and reports.")
    common.add_argument("--epsilon", default=None, type=float, help="Privacy budget of the autoencoder objective.")
    common.add_argument("--dataset", default=None, type=str, help="CSV file, or IDX image file with --labels.")
    common.add_argument("--labels", default=None, type=str, help="IDX label file.")
    common.add_argument("--schema", default=None, type=str, help="Schema JSON for a CSV dataset.")
    common.add_argument("--tensorboard", default=None, type=str, help="Write per-epoch scalars to this directory.")
    common.add_argument("--progress", action="store_true", help="Show progress bars.")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")

    commands = parser.add_subparsers(dest="command")
    commands.required = True
    commands.add_parser("train-ae", parents=[common], help="Train the private autoencoder and the target model.")
    explain = commands.add_parser("explain", parents=[common], help="Search counterfactuals for queries.")
    explain.add_argument("--queries", default=None, type=str, help="CSV of normalized query rows.")
    attack = commands.add_parser("attack", parents=[common], help="Run an attack campaign.")
    attack.add_argument("--kind", required=True, choices=ATTACK_KINDS)
    attack.add_argument("--query-counts", default=None, type=int, nargs="+", help="Adversary query budgets |X_q|.")
    sweep = commands.add_parser("sweep", parents=[common], help="Run the pipeline over several budgets.")
    sweep.add_argument("--epsilons", default=None, type=float, nargs="+")
    sweep.add_argument("--workers", default=None, type=int)
    report = commands.add_parser("report", parents=[common], help="Merge metric and attack reports.")
    report.add_argument("directory", nargs="?", default=None)
    return parser


def load_config(args):
    config = ExperimentConfig.from_json_file(args.config) if args.config else ExperimentConfig()
    overrides = {
        "out_dir": args.out_dir,
        "epsilon": args.epsilon,
        "schema_path": args.schema,
        "labels_path": args.labels,
        "tensorboard_dir": args.tensorboard,
        "seeds": None if args.seed is None else [args.seed],
        "disable_progress": False if args.progress else None,
        "queries": getattr(args, "query_counts", None),
    }
    if args.dataset is not None:
        overrides["dataset_path"] = args.dataset
        overrides["dataset_kind"] = "csv" if args.dataset.lower().endswith(".csv") else "idx"
    return config.update(overrides)


def run(args):
    config = load_config(args)
    if args.command == "report":
        cmd_report(args.directory or config.out_dir)
        return
    config.validate()
    if args.command == "sweep":
        cmd_sweep(config, args.epsilons, args.workers)
        return
    for seed in config.seeds:
        if args.command == "train-ae":
            cmd_train_ae(config, seed)
        elif args.command == "explain":
            cmd_explain(config, args.queries, seed)
        else:
            cmd_attack(config, args.kind, seed)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(format="%(asctime)s - %(levelname)s - %(name)s -   %(message)s",
                        datefmt="%m/%d/%Y %H:%M:%S",
                        level=logging.WARNING if args.quiet else logging.INFO)
    try:
        run(args)
    except (ConfigError, ParameterError, IngestionError, StructuralError, FileNotFoundError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_USAGE
    except (NumericError, TrainingError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

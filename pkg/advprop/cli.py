# Copyright 2026 Xanadu Quantum Technologies Inc.

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""
The ``advprop`` command line interface.

Every subcommand runs one pipeline stage of :mod:`advprop.cli_actions`:

.. code-block:: console

    $ advprop --config experiment.yaml generate
    $ advprop --config experiment.yaml featurize
    $ advprop --config experiment.yaml train-estimators
    $ advprop --config experiment.yaml train-baseline --tune 20
    $ advprop --config experiment.yaml --threads 8 attack-bench
"""
import argparse
import dataclasses
import logging
import sys

from advprop import cli_actions
from advprop._version import __version__
from advprop.config import load_config
from advprop.utils import ConfigurationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSING = 2
EXIT_RUNTIME = 3

SUBCOMMANDS = {
    "generate": (cli_actions.generate, "generate the synthetic transaction dataset"),
    "featurize": (cli_actions.featurize, "compute the engineered features"),
    "train-baseline": (cli_actions.train_baseline, "train the baseline classifier"),
    "train-estimators": (cli_actions.train_estimators, "train the profile estimators"),
    "attack-bench": (cli_actions.attack_bench, "compare the attack search strategies"),
    "adv-train": (cli_actions.adv_train, "adversarially retrain the baseline"),
    "evaluate": (cli_actions.evaluate, "evaluate both models under the norm cap grid"),
    "report": (cli_actions.report, "merge the metric files into text tables"),
}
THREADED = ("attack-bench", "adv-train", "evaluate")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="advprop",
        description="Adversarial training with attack propagation for tabular fraud data",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  advprop --config experiment.yaml generate
  advprop --config experiment.yaml --threads 8 adv-train
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-c", "--config", default=None, help="YAML experiment configuration")
    parser.add_argument("--output-dir", default=None, help="overrides output_dir of the config")
    parser.add_argument("--threads", type=int, default=None, help="largest number of workers")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")

    subparsers = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    subparsers.required = True
    for name, (_, text) in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=text, description=text)
        if name == "train-baseline":
            sub.add_argument(
                "--tune",
                type=int,
                default=0,
                metavar="N",
                help="random search over N learner configurations",
            )
    return parser


def _configure_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run_subcommand(name, config, **options):
    """Runs a pipeline stage and maps its outcome to an exit status.

    Args:
        name (str): the subcommand
        config (ExperimentConfig): the experiment configuration
        **options: subcommand options such as ``tune``

    Returns:
        int: ``0`` on success, ``1`` for configuration errors, ``2`` for
        missing prerequisite files and ``3`` for any other failure
    """
    action, _ = SUBCOMMANDS[name]
    if name in THREADED:
        options["threads"] = config.threads
    try:
        written = action(config, **options)
    except ConfigurationError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error("%s", e)
        return EXIT_MISSING
    except Exception:  # pylint: disable=broad-except
        logger.exception("The subcommand %s failed.", name)
        return EXIT_RUNTIME

    for filepath in written if isinstance(written, tuple) else (written,):
        print(filepath)
    return EXIT_OK


def main(argv=None):
    """Entry point of the ``advprop`` console script."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        config = load_config(args.config)
        overrides = {}
        if args.output_dir is not None:
            overrides["output_dir"] = args.output_dir
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigurationError("--threads has to be at least 1.")
            overrides["threads"] = args.threads
        config = dataclasses.replace(config, **overrides)
    except (ConfigurationError, OSError) as e:
        logger.error("Could not load the configuration: %s", e)
        return EXIT_CONFIG

    options = {"tune": args.tune} if args.subcommand == "train-baseline" else {}
    return run_subcommand(args.subcommand, config, **options)


if __name__ == "__main__":
    sys.exit(main())

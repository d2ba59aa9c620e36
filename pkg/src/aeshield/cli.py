"""``aeshield <command> <config.ini>``: batch experiment driver.

Commands: train-ae, train-clf, attack, sweep, compare-activations, reproduce-all.
Exit status is 0 on success and the error category's ``exit_code`` otherwise.
"""

import argparse
import logging
import sys

from . import experiment as ex
from .config import load_config
from .exceptions import AeshieldError

logger = logging.getLogger("aeshield")


def cmd_train_ae(cfg, ws):
    ex.train_autoencoder(cfg, ws)


def cmd_train_clf(cfg, ws):
    ex.train_pipelines(cfg, ws)


def cmd_attack(cfg, ws):
    defended, undefended = ex.require_pipelines(cfg, ws)
    summary = ex.run_attacks(cfg, ws, defended, undefended)
    for name, entry in summary["attacks"].items():
        logger.info(
            "%s: defended %.4f undefended %.4f",
            name,
            entry["defended"]["accuracy"],
            entry["undefended"]["accuracy"],
        )


def cmd_sweep(cfg, ws):
    defended, undefended = ex.require_pipelines(cfg, ws)
    ex.run_sweep(cfg, ws, defended, undefended)


def cmd_compare_activations(cfg, ws):
    ex.run_compare_activations(cfg, ws)


def cmd_reproduce_all(cfg, ws):
    ex.reproduce_all(cfg, ws)


COMMANDS = {
    "train-ae": cmd_train_ae,
    "train-clf": cmd_train_clf,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "compare-activations": cmd_compare_activations,
    "reproduce-all": cmd_reproduce_all,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="aeshield", description="Batch experiment driver for autoencoder-filtered MNIST classifiers.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="path to the experiment INI file")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        ws = ex.Workspace(cfg.output_dir)
        COMMANDS[args.command](cfg, ws)
        ws.finalize()
    except AeshieldError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

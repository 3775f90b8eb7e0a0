"""Command line entry point: ``pcnnbench <command> [options]``.

Exit codes: 0 on success, 2 for configuration errors or missing inputs,
3 for numerical failures.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

COMMANDS = ("generate-data", "train-pcnn", "train-agent", "evaluate", "seed-sweep", "lambda-sweep", "oracle")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file overriding the preset")
    common.add_argument("--seed", type=int, help="run seed (data seed for generate-data)")
    common.add_argument("--out", required=True, help="output directory (or .csv file for generate-data)")
    scale = common.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="full_scale", action="store_false", help="small preset (default)")
    scale.add_argument("--full-scale", dest="full_scale", action="store_true", help="large preset")
    common.set_defaults(full_scale=False)
    common.add_argument("--data", help="record CSV; synthetic data from the config when omitted")
    common.add_argument("--workers", type=int, help="worker processes for evaluation and seed runs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pcnnbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("generate-data", parents=[common], help="write a synthetic record CSV")
    p.add_argument("--days", type=int)
    sub.add_parser("train-pcnn", parents=[common], help="fit the building model")
    for name, text in (("train-agent", "train one TD3 agent"), ("seed-sweep", "train one agent per seed"),
                       ("lambda-sweep", "oracle (and agent) Pareto points over lambda factors")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", help="building model checkpoint")
        p.add_argument("--epochs", type=int)
    p = sub.add_parser("evaluate", parents=[common], help="paired evaluation against baselines and oracle")
    p.add_argument("--model", help="building model checkpoint")
    p.add_argument("--agent", action="append", default=[], help="agent checkpoint (repeatable)")
    p = sub.add_parser("oracle", parents=[common], help="oracle and unavoidable penalties on the test set")
    p.add_argument("--model", help="building model checkpoint")
    p.add_argument("--dump-lp", type=int, help="write the LP of this test trajectory")
    return parser


def run(args) -> None:
    overrides = {"workers": args.workers}
    if args.command == "generate-data":
        overrides.update(data_seed=args.seed, days=args.days)
    else:
        overrides["seed"] = args.seed
    if args.command == "lambda-sweep":
        overrides["lambda_epochs"] = args.epochs
    elif args.command in ("train-agent", "seed-sweep"):
        overrides["epochs"] = args.epochs
    config = bench.resolve_config(args.full_scale, args.config, **overrides)
    cmd = args.command
    if cmd == "generate-data":
        bench.cmd_generate_data(config, args.out)
    elif cmd == "train-pcnn":
        bench.cmd_train_pcnn(config, args.out, args.data)
    elif cmd == "train-agent":
        bench.cmd_train_agent(config, args.out, args.model, args.data)
    elif cmd == "seed-sweep":
        bench.cmd_seed_sweep(config, args.out, args.model, args.data)
    elif cmd == "lambda-sweep":
        bench.cmd_lambda_sweep(config, args.out, args.model, args.data)
    elif cmd == "evaluate":
        bench.cmd_evaluate(config, args.out, args.model, args.agent, args.data)
    elif cmd == "oracle":
        bench.cmd_oracle(config, args.out, args.model, args.data, args.dump_lp)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

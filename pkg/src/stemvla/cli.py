"""Command-line driver: data generation, training, evaluation, ablations."""

import argparse
import logging
import sys

import numpy as np

from .config import ModelConfig, TrainConfig, load_train_config
from .world import DEFAULT_SUITE, generate_episode, write_dataset

log = logging.getLogger("stemvla")


def cmd_gen_data(args):
    suite = DEFAULT_SUITE
    if args.suite != suite.name:
        raise SystemExit(f"unknown suite {args.suite!r}; available: {suite.name}")
    episodes = []
    rng = np.random.default_rng(args.seed)
    for ti, task_id in enumerate(suite.tasks):
        for k in range(args.episodes_per_task):
            ep_seed = int(args.seed * 1_000_000 + ti * 10_000 + k)
            episodes.append(generate_episode(ep_seed, task_id))
    write_dataset(episodes, args.out)
    print(f"wrote {len(episodes)} episodes to {args.out}")


def cmd_train(args):
    from .training.trainer import evaluate, train

    config = load_train_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.ablate:
        setattr(config, args.ablate, True)
    model, report = train(config, dataset_path=args.data,
                          checkpoint_path=args.out, quiet=not args.verbose)
    if args.chains:
        eval_report = evaluate(model, n_chains=args.chains, seed=config.seed + 1)
        report.per_task_sr = eval_report.per_task_sr
        report.mean_sr = eval_report.mean_sr
        report.avg_chain_length = eval_report.avg_chain_length
        report.per_chain_completed = eval_report.per_chain_completed
    if args.metrics:
        report.save(args.metrics)
    print(report.render())


def cmd_eval(args):
    from .training.trainer import evaluate, load_policy

    model, _ = load_policy(args.checkpoint)
    report = evaluate(model, n_chains=args.chains,
                      episodes_per_task=args.episodes_per_task, seed=args.seed)
    if args.metrics:
        report.save(args.metrics)
    print(report.render())


def cmd_ablate(args):
    from .training.ablation import ablate, render_ablation_table

    config = load_train_config(args.config) if args.config else TrainConfig()
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [config.seed]
    results = ablate(config, dataset_path=args.data, seeds=seeds,
                     quiet=not args.verbose)
    table = render_ablation_table(results)
    print(table)
    if args.metrics:
        import json
        with open(args.metrics, "w") as f:
            json.dump({v: [r.to_dict() for r in rs] for v, rs in results.items()},
                      f, indent=2)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = argparse.ArgumentParser(prog="stemvla")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a demonstration dataset")
    p.add_argument("--suite", default=DEFAULT_SUITE.name)
    p.add_argument("--episodes-per-task", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="metrics JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ablate", choices=["no_fsgwp", "no_4d_history"], default=None)
    p.add_argument("--chains", type=int, default=0,
                   help="evaluate N 5-task chains after training")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--chains", type=int, default=100)
    p.add_argument("--episodes-per-task", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation matrix")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default=None, help="comma-separated seeds")
    p.add_argument("--metrics", default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

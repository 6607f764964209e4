"""``mbdqn`` command line: train, paired, compare, heatmap and check.

Every subcommand accepts ``--config FILE`` (flat ``section.key = value``
format), ``--set key=value`` overrides applied after the file, ``--seed`` to
replace the configured seed list with a single seed, and ``--out`` for the
output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from mbdqn.checks import CHECKS, run_checks
from mbdqn.harness.config import ConfigError, RunConfig, build_run_config, load_values, parse_value
from mbdqn.harness.heatmap import VisitationMap, export_heatmap, read_counts_csv
from mbdqn.harness.runner import run_comparison, run_paired, run_training, stable_goal_step


def _overrides(pairs) -> dict[str, object]:
    values = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        values[key.strip()] = parse_value(raw)
    return values


def _run_config(path, sets, seed, out) -> RunConfig:
    values = load_values(path) if path else {}
    values.update(_overrides(sets))
    cfg = build_run_config(values)
    if seed is not None:
        cfg = replace(cfg, seeds=(seed,))
    if out is not None:
        cfg = replace(cfg, out_dir=out)
    return cfg


def _print_final(name, metrics):
    for seed in sorted({r.seed for r in metrics.rows}):
        rows = metrics.seed_rows(seed)
        last = rows[-1]
        print(f"{name} seed={seed} step={last.step} majority_return={last.majority_return:.4f} "
              f"unique_states={last.unique_states} stable_goal_step={stable_goal_step(rows)}")


def cmd_train(args) -> int:
    cfg = _run_config(args.config, args.set, args.seed, args.out)
    metrics = run_training(cfg, workers=args.workers)
    _print_final(cfg.name, metrics)
    return 0


def cmd_paired(args) -> int:
    cfg = _run_config(args.config, args.set, args.seed, args.out)
    learner_values = {"agent.head_backups": [1] * cfg.agent.n_heads}
    if args.learner_config:
        learner_values.update({k: v for k, v in load_values(args.learner_config).items() if k.startswith("agent.")})
    learner_values.update(_overrides(args.learner_set))
    learner = build_run_config(learner_values, base=cfg).agent
    gen, learn = run_paired(cfg, learner, workers=args.workers)
    _print_final("generator", gen)
    _print_final("learner", learn)
    return 0


def cmd_compare(args) -> int:
    if not args.config or len(args.config) < 2:
        raise ConfigError("compare needs at least two --config files")
    configs = [_run_config(path, args.set, args.seed, None) for path in args.config]
    table = run_comparison(configs, workers=args.workers, out_dir=args.out)
    print(table.summary_csv(), end="")
    return 0


def cmd_heatmap(args) -> int:
    if args.counts:
        if args.out is None:
            raise ConfigError("heatmap from a counts file needs --out")
        csv_path, pgm_path = export_heatmap(VisitationMap(read_counts_csv(args.counts)), args.out)
        print(pgm_path)
        return 0
    cfg = _run_config(args.config[0] if args.config else None, args.set, args.seed, args.out)
    metrics = run_training(cfg, workers=args.workers)
    for seed, vmap in sorted(metrics.visitation.items()):
        print(f"seed={seed} total={vmap.total} unique={vmap.unique}")
    return 0


def cmd_check(args) -> int:
    results = run_checks(args.only, seed=args.seed or 0)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="run this single seed instead of the configured list")
    common.add_argument("--out", default=None, help="output directory (or heatmap path)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key; repeatable")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes over seeds")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mbdqn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one configuration over its seeds")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("paired", parents=[common], help="generator acts, learner only learns from its buffer")
    p.add_argument("--config", help="generator run config")
    p.add_argument("--learner-config", help="file whose agent.* keys define the learner")
    p.add_argument("--learner-set", action="append", metavar="KEY=VALUE", help="learner agent.* override")
    p.set_defaults(func=cmd_paired)

    p = sub.add_parser("compare", parents=[common], help="run several configs on shared seeds and summarise")
    p.add_argument("--config", action="append", help="config file; give two or more")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("heatmap", parents=[common], help="render a counts CSV, or train and write heatmaps")
    p.add_argument("counts", nargs="?", help="counts CSV to render as a 16-bit PGM")
    p.add_argument("--config", action="append")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("check", parents=[common], help="run the numerical self-checks")
    p.add_argument("--config", help="accepted for symmetry; unused")
    p.add_argument("--only", action="append", choices=sorted(CHECKS))
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"mbdqn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

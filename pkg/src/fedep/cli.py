"""Command-line entry point.

Two subcommands: ``run`` executes one experiment and writes a metrics CSV
plus a JSON summary, ``compare`` runs an aggregator-by-seed grid on shared
partitions and prints a mean/std table of final scores. Verbosity comes
from the FEDEP_LOG environment variable (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import AGGREGATORS, ExperimentConfig, config_to_obj, parse_config
from .errors import ConfigError
from .federation import ExperimentResult, run_experiment, write_metrics_csv

log = logging.getLogger("fedep")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _summary_obj(result: ExperimentResult) -> dict:
    cfg = result.config
    per_round = [
        {
            "round": rec.round_index,
            "mean_f1": rec.mean_f1(),
            "std_f1": rec.std_f1(),
            "mean_loss": rec.mean_loss(),
        }
        for rec in result.records
    ]
    final_alpha = None
    if cfg.aggregator == "fedep" and result.records:
        final_alpha = [a.tolist() for a in result.records[-1].alphas]
    return {
        "config": config_to_obj(cfg),
        "aggregator": cfg.aggregator,
        "rounds_completed": len(result.records),
        "per_round": per_round,
        "final_mean_f1": per_round[-1]["mean_f1"] if per_round else None,
        "final_alpha": final_alpha,
    }


def _print_round_table(result: ExperimentResult) -> None:
    print(f"aggregator={result.config.aggregator} seed={result.config.seed}")
    print("round  mean_f1  std_f1   mean_loss")
    for rec in result.records:
        print(
            f"{rec.round_index:>5}  {rec.mean_f1():.4f}   {rec.std_f1():.4f}   "
            f"{rec.mean_loss():.4f}"
        )


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.aggregator is not None:
        if args.aggregator not in AGGREGATORS:
            raise ConfigError(f"expected one of {AGGREGATORS}", field="--aggregator")
        cfg.aggregator = args.aggregator
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = Path(args.out or cfg.output_dir or "out")
    out_dir.mkdir(parents=True, exist_ok=True)

    log.info("running %s with seed %d", cfg.aggregator, cfg.seed)
    result = run_experiment(cfg)
    write_metrics_csv(result.records, out_dir / "metrics.csv", cfg.record_timings)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(_summary_obj(result), f, indent=2)
    _print_round_table(result)
    print(f"wrote {out_dir / 'metrics.csv'} and {out_dir / 'summary.json'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = parse_config(args.config)
    aggregators = [a.strip() for a in args.aggregators.split(",") if a.strip()]
    for a in aggregators:
        if a not in AGGREGATORS:
            raise ConfigError(f"expected one of {AGGREGATORS}", field="--aggregators")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as err:
        raise ConfigError(f"seeds must be integers: {err}", field="--seeds") from err
    if not aggregators or not seeds:
        raise ConfigError("need at least one aggregator and one seed")

    out_dir = Path(args.out or cfg.output_dir or "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    failed = False
    # Same seed means same dataset and partition for every aggregator, so
    # score differences reflect aggregation alone.
    for aggregator in aggregators:
        finals = []
        for seed in seeds:
            run_cfg = parse_config(args.config)
            run_cfg.aggregator = aggregator
            run_cfg.seed = seed
            try:
                result = run_experiment(run_cfg)
                final = result.final_mean_f1()
                run_out = out_dir / f"{aggregator}_seed{seed}"
                run_out.mkdir(parents=True, exist_ok=True)
                write_metrics_csv(
                    result.records, run_out / "metrics.csv", run_cfg.record_timings
                )
                rows.append({"aggregator": aggregator, "seed": seed, "final_f1": final,
                             "status": "ok"})
                finals.append(final)
            except Exception as err:  # flush partial results, keep going
                log.error("run %s seed %d failed: %s", aggregator, seed, err)
                rows.append({"aggregator": aggregator, "seed": seed, "final_f1": None,
                             "status": f"failed: {err}"})
                failed = True

    with open(out_dir / "compare.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("aggregator,seed,final_f1,status\n")
        for r in rows:
            f1 = "" if r["final_f1"] is None else f"{r['final_f1']:.10g}"
            f.write(f"{r['aggregator']},{r['seed']},{f1},{r['status']}\n")

    print("aggregator   mean_f1  std_f1   seeds")
    for aggregator in aggregators:
        finals = [r["final_f1"] for r in rows
                  if r["aggregator"] == aggregator and r["final_f1"] is not None]
        if finals:
            mean, std = float(np.mean(finals)), float(np.std(finals))
            print(f"{aggregator:<12} {mean:.4f}   {std:.4f}   {len(finals)}")
        else:
            print(f"{aggregator:<12} FAILED")
    print(f"wrote {out_dir / 'compare.csv'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedep",
        description="Decentralized federated learning simulator with entropy pooling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_run.add_argument("--aggregator", help="override the configured aggregator")
    p_run.add_argument("--seed", type=int, help="override the configured seed")
    p_run.add_argument("--out", help="output directory (default from config, else ./out)")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare aggregators across seeds")
    p_cmp.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_cmp.add_argument("--aggregators", required=True,
                       help="comma-separated list, e.g. fedavg,fedep")
    p_cmp.add_argument("--seeds", required=True, help="comma-separated integers")
    p_cmp.add_argument("--out", help="output directory (default from config, else ./out)")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("FEDEP_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        log.debug("unhandled failure", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

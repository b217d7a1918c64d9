"""Batch command-line entry points.

Subcommands generate a corpus, run training, evaluate checkpoints, render
charts from CSVs, and compare runs. Every subcommand that writes does so
only inside its --out directory, and writes a manifest of resolved settings
before any computation. Exit codes: 0 success, 2 configuration problem,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import AppConfig, PRESETS, config_snapshot, load_config
from .corpus import build_corpus, read_corpus, write_corpus
from .errors import ConfigError
from .evaluation import (
    compare_runs,
    comparison_table,
    evaluate_queries,
    read_efficiency_csv,
    write_efficiency_csv,
    write_eval_csv,
)
from .nets import read_params, write_params
from .plots import plot_recall_curves, plot_training_curves
from .policy import SequencePolicy
from .training import (
    Actor,
    Trainer,
    format_float,
    read_metrics_csv,
    write_metrics_csv,
)

THREADS_VAR = "SCOUT_SIM_THREADS"
COMPARE_COLUMNS = ("algorithm", "n_seeds", "final_window_return", "auc", "wins")


def _check_threads_var() -> int:
    """Validate the rollout-parallelism cap; collection itself is sequential
    (parallelism 1), which satisfies any cap >= 1."""
    raw = os.environ.get(THREADS_VAR)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_VAR} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"{THREADS_VAR} must be >= 1, got {value}")
    return value


def _require_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory not writable: {path}")
    return path


def write_manifest(
    out_dir: str, subcommand: str, config: AppConfig | None,
    config_path: str | None, seeds: list[int], outputs: list[str],
) -> str:
    manifest = {
        "subcommand": subcommand,
        "build": f"scoutsim {__version__}",
        "config_path": config_path,
        "config": config_snapshot(config) if config is not None else None,
        "seeds": seeds,
        "out_dir": out_dir,
        "outputs": outputs,
    }
    path = os.path.join(out_dir, f"manifest_{subcommand}.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def parse_query_spec(spec: str, n_queries: int) -> list[int]:
    """Comma-separated ids and inclusive ranges, e.g. "0-3,7,9-11"."""
    out: list[int] = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            if "-" in token:
                lo_txt, hi_txt = token.split("-", 1)
                lo, hi = int(lo_txt), int(hi_txt)
                if hi < lo:
                    raise ValueError("descending range")
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(token))
        except ValueError as exc:
            raise ConfigError(f"bad query spec token {token!r}: {exc}") from exc
    for qid in out:
        if not 0 <= qid < n_queries:
            raise ConfigError(f"query id {qid} outside corpus (n_queries={n_queries})")
    if not out:
        raise ConfigError(f"query spec {spec!r} selects nothing")
    return out


def _load_app_config(args) -> AppConfig:
    overrides: dict[str, dict] = {}
    if getattr(args, "algo", None):
        overrides["train"] = {"algorithm": args.algo}
    return load_config(args.config, preset=args.preset, overrides=overrides)


def cmd_gen_corpus(args) -> int:
    config = _load_app_config(args)
    seeds = args.seed or [0]
    if len(seeds) != 1:
        raise ConfigError("gen-corpus takes exactly one --seed")
    out_dir = _require_out(args.out)
    corpus_path = os.path.join(out_dir, "corpus.txt")
    write_manifest(
        out_dir, "gen-corpus", config, args.config, seeds, ["corpus.txt"]
    )
    corpus = build_corpus(
        seed=seeds[0],
        n_papers=config.corpus.n_papers,
        n_queries=config.corpus.n_queries,
        dim=config.corpus.dim,
        avg_refs=config.corpus.avg_refs,
        n_clusters=config.corpus.n_clusters,
        truth_threshold=config.corpus.truth_threshold,
        paper_spread=config.corpus.paper_spread,
        query_spread=config.corpus.query_spread,
        ref_power=config.corpus.ref_power,
    )
    write_corpus(corpus, corpus_path)
    sizes = [len(q.truth) for q in corpus.queries]
    print(
        f"wrote {corpus_path}: {corpus.n_papers} papers, "
        f"{corpus.n_queries} queries, truth sizes "
        f"min {min(sizes)} / median {int(np.median(sizes))} / max {max(sizes)}"
    )
    return 0


def cmd_train(args) -> int:
    config = _load_app_config(args)
    seeds = args.seed or [0]
    out_dir = _require_out(args.out)
    corpus = read_corpus(args.corpus)
    algo = config.train.algorithm
    if args.train_queries:
        if not 0 < args.train_queries <= corpus.n_queries:
            raise ConfigError(
                f"--train-queries must be in 1..{corpus.n_queries}, "
                f"got {args.train_queries}"
            )
        query_ids = list(range(args.train_queries))
    else:
        query_ids = list(range(corpus.n_queries))

    outputs = []
    for seed in seeds:
        outputs.extend(
            (
                f"metrics_{algo}_{seed}.csv",
                f"pretrain_{algo}_{seed}.csv",
                f"actor_{algo}_{seed}.txt",
                f"critic_{algo}_{seed}.txt",
            )
        )
    write_manifest(out_dir, "train", config, args.config, seeds, outputs)

    for seed in seeds:
        trainer = Trainer(corpus, query_ids, config.train, config.env, seed)
        result = trainer.run()
        write_metrics_csv(
            result.metrics, os.path.join(out_dir, f"metrics_{algo}_{seed}.csv")
        )
        pretrain_lines = ["step,critic_loss"]
        pretrain_lines.extend(
            f"{i},{format_float(loss)}"
            for i, loss in enumerate(result.pretrain_losses)
        )
        with open(
            os.path.join(out_dir, f"pretrain_{algo}_{seed}.csv"),
            "w", encoding="utf-8", newline="\n",
        ) as fh:
            fh.write("\n".join(pretrain_lines) + "\n")
        write_params(
            result.actor.params,
            os.path.join(out_dir, f"actor_{algo}_{seed}.txt"),
            step=config.train.total_steps,
        )
        write_params(
            result.critic.params,
            os.path.join(out_dir, f"critic_{algo}_{seed}.txt"),
            step=config.train.total_steps,
        )
        final = (
            format_float(result.metrics[-1].mean_return)
            if result.metrics
            else "n/a"
        )
        print(f"trained {algo} seed {seed}: {len(result.metrics)} steps, "
              f"final mean return {final}")
    return 0


def cmd_eval(args) -> int:
    config = _load_app_config(args)
    out_dir = _require_out(args.out)
    corpus = read_corpus(args.corpus)
    algo = config.train.algorithm
    if args.queries:
        query_ids = parse_query_spec(args.queries, corpus.n_queries)
    else:
        query_ids = list(range(corpus.n_queries))
    seeds = args.seed or []
    if len(seeds) > 1:
        raise ConfigError("eval takes at most one --seed (omit for greedy decoding)")

    write_manifest(
        out_dir, "eval", config, args.config, seeds, ["eval.csv", "efficiency.csv"]
    )

    policy = SequencePolicy(
        config.env, corpus.dim, (config.train.hidden,), config.train.n_search
    )
    params, _step = read_params(args.checkpoint)
    if params.shapes != policy.init_params(0).shapes:
        raise ConfigError(
            f"checkpoint {args.checkpoint} does not match the configured "
            f"policy architecture"
        )
    actor = Actor(policy, params)
    rng = np.random.default_rng(seeds[0]) if seeds else None
    rows, logs = evaluate_queries(corpus, query_ids, actor, config.env, algo, rng)
    write_eval_csv(rows, os.path.join(out_dir, "eval.csv"))
    write_efficiency_csv(logs, algo, os.path.join(out_dir, "efficiency.csv"))
    mean_recall = sum(r.recall_at_all for r in rows) / len(rows)
    print(f"evaluated {len(rows)} queries with {algo}: "
          f"mean recall@all {mean_recall:.4f}")
    return 0


def cmd_plot(args) -> int:
    if not args.metrics and not args.efficiency:
        raise ConfigError("plot needs --metrics and/or --efficiency CSVs")
    out_dir = _require_out(args.out)
    outputs = []
    if args.metrics:
        outputs.append("training_curves.svg")
    if args.efficiency:
        outputs.append("recall_vs_calls.svg")
    write_manifest(out_dir, "plot", None, None, [], outputs)
    if args.metrics:
        rows = []
        for path in args.metrics:
            rows.extend(read_metrics_csv(path))
        plot_training_curves(rows, os.path.join(out_dir, "training_curves.svg"))
        print(f"wrote {os.path.join(out_dir, 'training_curves.svg')}")
    if args.efficiency:
        records = []
        for path in args.efficiency:
            records.extend(read_efficiency_csv(path))
        plot_recall_curves(records, os.path.join(out_dir, "recall_vs_calls.svg"))
        print(f"wrote {os.path.join(out_dir, 'recall_vs_calls.svg')}")
    return 0


def cmd_compare(args) -> int:
    if len(args.metrics) < 2:
        raise ConfigError("compare needs at least two --metrics CSVs")
    runs = [read_metrics_csv(path) for path in args.metrics]
    rows = compare_runs(runs, final_window=args.window)
    print(comparison_table(rows))
    if args.out:
        out_dir = _require_out(args.out)
        write_manifest(out_dir, "compare", None, None, [], ["compare.csv"])
        lines = [",".join(COMPARE_COLUMNS)]
        lines.extend(
            f"{r.algorithm},{r.n_seeds},{format_float(r.final_window_return)},"
            f"{format_float(r.auc)},{r.wins}"
            for r in rows
        )
        with open(
            os.path.join(out_dir, "compare.csv"), "w", encoding="utf-8", newline="\n"
        ) as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoutsim",
        description="Synthetic scholarly-search agent: corpus generation, "
                    "sequence-level RL training, evaluation, and charts.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, action="append", default=None,
                       help="seed (repeatable)")
        p.add_argument("--algo", default=None,
                       help="algorithm: pspo, ppo_token, gspo, pspo_star")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                       help="hyperparameter preset")

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus file")
    common(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train one algorithm over seeds")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus file from gen-corpus")
    p.add_argument("--train-queries", type=int, default=0,
                   help="use only the first N query ids for training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate an actor checkpoint")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus file")
    p.add_argument("--checkpoint", required=True, help="actor checkpoint file")
    p.add_argument("--queries", default=None,
                   help="query ids, e.g. '50-59' (default: all)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render charts from CSVs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metrics", action="append", default=None,
                   help="metrics CSV (repeatable)")
    p.add_argument("--efficiency", action="append", default=None,
                   help="efficiency CSV (repeatable)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("compare", help="summarize runs across algorithms")
    p.add_argument("--metrics", action="append", default=[], required=True,
                   help="metrics CSV (repeatable, >= 2)")
    p.add_argument("--window", type=int, default=50,
                   help="final-window size in steps")
    p.add_argument("--out", default=None, help="also write compare.csv here")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_threads_var()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to a distinct exit code
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Retrieval-quality metrics over finished episodes.

An episode's final pool is ranked by relevance score into a RetrievalResult;
metrics are fractions of the query's ground-truth set recovered (recall at a
cutoff, precision/recall/F1 after a score threshold) plus efficiency curves
of recall against cumulative tool calls. Run comparison summarizes training
metrics CSVs into final-window means, area under the return curve, and
per-seed win counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .env import EnvConfig, Environment
from .errors import AlignmentError, ConfigError, InvariantError, MetricError
from .policy import DecodeContext, featurize
from .training import Actor, MetricsRow, format_float

EVAL_COLUMNS = (
    "query_id", "algorithm", "precision", "recall", "f1",
    "recall@5", "recall@10", "recall@25", "recall@all", "total_calls",
)
EFFICIENCY_COLUMNS = ("query_id", "algorithm", "turn", "cumulative_calls", "recall")
THRESHOLD = 0.5
RECALL_CUTOFFS = (5, 10, 25)


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked pool of a finished episode plus the query's truth set."""

    ranked: tuple[tuple[int, float], ...]   # (paper id, score), best first
    truth: frozenset[int]
    calls_per_turn: tuple[int, ...]

    def __post_init__(self):
        seen = set()
        prev = None
        for pid, score in self.ranked:
            if pid in seen:
                raise InvariantError(f"duplicate paper id {pid} in ranking")
            seen.add(pid)
            key = (-score, pid)
            if prev is not None and key <= prev:
                raise InvariantError("ranking must be sorted by score desc, id asc")
            prev = key

    @property
    def total_calls(self) -> int:
        return int(sum(self.calls_per_turn))


def recall_at_k(result: RetrievalResult, k: int) -> float:
    """Fraction of the truth set among the k best-ranked papers."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not result.truth:
        raise MetricError("recall is undefined for an empty truth set")
    top = {pid for pid, _ in result.ranked[:k]}
    return len(top & result.truth) / len(result.truth)


def post_threshold_prf(
    result: RetrievalResult, threshold: float = THRESHOLD
) -> tuple[float, float, float]:
    """Precision/recall/F1 over papers retained at score >= threshold."""
    if not result.truth:
        raise MetricError("precision/recall are undefined for an empty truth set")
    retained = {pid for pid, score in result.ranked if score >= threshold}
    hits = len(retained & result.truth)
    precision = hits / len(retained) if retained else 0.0
    recall = hits / len(result.truth)
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f1


@dataclass(frozen=True)
class TurnLog:
    n_calls: int                 # calls issued this turn
    pool_ids: frozenset[int]     # pool contents after the turn


@dataclass(frozen=True)
class EpisodeLog:
    query_id: int
    truth: frozenset[int]
    initial_ids: frozenset[int]
    turns: tuple[TurnLog, ...]
    terminal_reason: str


def efficiency_curve(log: EpisodeLog) -> list[tuple[int, float]]:
    """(cumulative calls, recall so far) per turn, collapsing zero-call turns
    onto the previous x so x is strictly increasing and y nondecreasing."""
    if not log.truth:
        raise MetricError("recall is undefined for an empty truth set")

    def recall(ids) -> float:
        return len(ids & log.truth) / len(log.truth)

    points = [(0, recall(log.initial_ids))]
    calls = 0
    for turn in log.turns:
        calls += turn.n_calls
        point = (calls, recall(turn.pool_ids))
        if points[-1][0] == calls:
            points[-1] = point
        else:
            points.append(point)
    return points


def run_retrieval(
    corpus: Corpus,
    query_id: int,
    actor: Actor,
    env_config: EnvConfig,
    rng: np.random.Generator | None = None,
) -> tuple[RetrievalResult, EpisodeLog]:
    """One evaluation episode; greedy decoding unless an rng is supplied."""
    env = Environment(corpus, query_id, env_config)
    obs = env.observe()
    initial_ids = frozenset(env.pool.entries)
    turns: list[TurnLog] = []
    while not env.done:
        feats = featurize(obs, env_config)
        ctx = DecodeContext.from_observation(env.query, obs)
        if rng is None:
            sample = actor.policy.greedy_turn(actor.params, feats, ctx)
        else:
            sample = actor.policy.sample_turn(actor.params, feats, ctx, rng)
        result = env.step(list(sample.calls))
        turns.append(
            TurnLog(n_calls=len(sample.calls), pool_ids=frozenset(env.pool.entries))
        )
        obs = result.observation
    ranked = tuple(
        (pid, entry.score)
        for pid, entry in sorted(
            env.pool.entries.items(), key=lambda kv: (-kv[1].score, kv[0])
        )
    )
    retrieval = RetrievalResult(
        ranked=ranked,
        truth=env.query.truth,
        calls_per_turn=tuple(t.n_calls for t in turns),
    )
    log = EpisodeLog(
        query_id=query_id,
        truth=env.query.truth,
        initial_ids=initial_ids,
        turns=tuple(turns),
        terminal_reason=env.terminal_reason or "",
    )
    return retrieval, log


@dataclass(frozen=True)
class EvalRow:
    query_id: int
    algorithm: str
    precision: float
    recall: float
    f1: float
    recall_at_5: float
    recall_at_10: float
    recall_at_25: float
    recall_at_all: float
    total_calls: int


def summarize_result(result: RetrievalResult, query_id: int, algorithm: str) -> EvalRow:
    precision, recall, f1 = post_threshold_prf(result)
    cutoffs = {}
    for k in RECALL_CUTOFFS:
        cutoffs[k] = recall_at_k(result, k)
    n = len(result.ranked)
    recall_all = recall_at_k(result, n) if n else 0.0
    return EvalRow(
        query_id=query_id,
        algorithm=algorithm,
        precision=precision,
        recall=recall,
        f1=f1,
        recall_at_5=cutoffs[5],
        recall_at_10=cutoffs[10],
        recall_at_25=cutoffs[25],
        recall_at_all=recall_all,
        total_calls=result.total_calls,
    )


def evaluate_queries(
    corpus: Corpus,
    query_ids,
    actor: Actor,
    env_config: EnvConfig,
    algorithm: str,
    rng: np.random.Generator | None = None,
) -> tuple[list[EvalRow], list[EpisodeLog]]:
    rows, logs = [], []
    for qid in query_ids:
        result, log = run_retrieval(corpus, qid, actor, env_config, rng)
        rows.append(summarize_result(result, qid, algorithm))
        logs.append(log)
    return rows, logs


def write_eval_csv(rows: list[EvalRow], path) -> None:
    lines = [",".join(EVAL_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                (
                    str(r.query_id), r.algorithm,
                    format_float(r.precision), format_float(r.recall),
                    format_float(r.f1), format_float(r.recall_at_5),
                    format_float(r.recall_at_10), format_float(r.recall_at_25),
                    format_float(r.recall_at_all), str(r.total_calls),
                )
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_efficiency_csv(logs: list[EpisodeLog], algorithm: str, path) -> None:
    lines = [",".join(EFFICIENCY_COLUMNS)]
    for log in logs:
        for turn, (calls, recall) in enumerate(efficiency_curve(log)):
            lines.append(
                f"{log.query_id},{algorithm},{turn},{calls},{format_float(recall)}"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_efficiency_csv(path) -> list[tuple[int, str, int, int, float]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if lines[0] != ",".join(EFFICIENCY_COLUMNS):
        raise InvariantError(f"unexpected efficiency header in {path}")
    out = []
    for ln in lines[1:]:
        qid, algo, turn, calls, recall = ln.split(",")
        out.append((int(qid), algo, int(turn), int(calls), float(recall)))
    return out


@dataclass(frozen=True)
class ComparisonRow:
    algorithm: str
    n_seeds: int
    final_window_return: float   # mean over seeds of the final-window mean
    auc: float                   # mean over seeds of summed per-step return
    wins: int                    # seeds where this algorithm's window mean is best


def compare_runs(
    runs: list[list[MetricsRow]], final_window: int = 50
) -> list[ComparisonRow]:
    """Summarize per-algorithm training curves from ≥ 2 metrics logs.

    All (algorithm, seed) series must share one step grid; win counts are
    awarded per seed to the strict best final-window mean among algorithms
    that ran that seed.
    """
    if final_window < 1:
        raise ConfigError(f"final_window must be >= 1, got {final_window}")
    series: dict[tuple[str, int], list[MetricsRow]] = {}
    for rows in runs:
        for row in rows:
            series.setdefault((row.algorithm, row.seed), []).append(row)
    if len({algo for algo, _ in series}) < 2:
        raise ConfigError("comparison needs metrics from at least two algorithms")
    grids = {tuple(r.step for r in rows) for rows in series.values()}
    if len(grids) != 1:
        raise AlignmentError(
            f"metrics logs disagree on the step grid: {sorted(len(g) for g in grids)}"
        )

    window_mean: dict[tuple[str, int], float] = {}
    auc: dict[tuple[str, int], float] = {}
    for key, rows in series.items():
        returns = [r.mean_return for r in rows]
        window_mean[key] = float(np.mean(returns[-final_window:]))
        auc[key] = float(np.sum(returns))

    algorithms = sorted({algo for algo, _ in series})
    wins = {algo: 0 for algo in algorithms}
    for seed in sorted({seed for _, seed in series}):
        present = [a for a in algorithms if (a, seed) in window_mean]
        if len(present) < 2:
            continue
        best = max(present, key=lambda a: window_mean[(a, seed)])
        top = window_mean[(best, seed)]
        if sum(1 for a in present if window_mean[(a, seed)] == top) == 1:
            wins[best] += 1

    out = []
    for algo in algorithms:
        seeds = [s for a, s in series if a == algo]
        out.append(
            ComparisonRow(
                algorithm=algo,
                n_seeds=len(seeds),
                final_window_return=float(
                    np.mean([window_mean[(algo, s)] for s in seeds])
                ),
                auc=float(np.mean([auc[(algo, s)] for s in seeds])),
                wins=wins[algo],
            )
        )
    return out


def comparison_table(rows: list[ComparisonRow]) -> str:
    header = f"{'algorithm':<12} {'seeds':>5} {'final_return':>14} {'auc':>14} {'wins':>5}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.algorithm:<12} {r.n_seeds:>5} {r.final_window_return:>14.6g} "
            f"{r.auc:>14.6g} {r.wins:>5}"
        )
    return "\n".join(lines)


def macro_average(values) -> float:
    values = list(values)
    if not values:
        raise MetricError("macro average over an empty set")
    return float(sum(values) / len(values))

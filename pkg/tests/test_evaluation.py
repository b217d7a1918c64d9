import numpy as np
import pytest

from scoutsim.corpus import build_corpus
from scoutsim.env import EnvConfig
from scoutsim.errors import AlignmentError, ConfigError, InvariantError, MetricError
from scoutsim.evaluation import (
    ComparisonRow,
    EpisodeLog,
    RetrievalResult,
    TurnLog,
    compare_runs,
    comparison_table,
    efficiency_curve,
    evaluate_queries,
    macro_average,
    post_threshold_prf,
    read_efficiency_csv,
    recall_at_k,
    run_retrieval,
    summarize_result,
    write_efficiency_csv,
    write_eval_csv,
)
from scoutsim.policy import SequencePolicy
from scoutsim.training import Actor, MetricsRow


def ranked_result(scores_by_id, truth, calls=(1,)):
    ranked = tuple(sorted(scores_by_id.items(), key=lambda kv: (-kv[1], kv[0])))
    return RetrievalResult(ranked=ranked, truth=frozenset(truth),
                           calls_per_turn=tuple(calls))


def metrics_rows(algorithm, seed, returns):
    return [
        MetricsRow(step=i, algorithm=algorithm, seed=seed, mean_return=float(v),
                   actor_grad_norm=0.0, critic_loss=0.0, clip_fraction=0.0,
                   kl=0.0, wall_ms=0.0)
        for i, v in enumerate(returns)
    ]


def toy_actor(corpus):
    policy = SequencePolicy(EnvConfig(), corpus.dim, hidden=(8,), n_search=8)
    return Actor(policy, policy.init_params(0))


def test_retrieval_result_validation():
    with pytest.raises(InvariantError, match="duplicate"):
        RetrievalResult(ranked=((1, 0.9), (1, 0.8)), truth=frozenset({1}),
                        calls_per_turn=(1,))
    with pytest.raises(InvariantError, match="sorted"):
        RetrievalResult(ranked=((1, 0.5), (2, 0.9)), truth=frozenset({1}),
                        calls_per_turn=(1,))
    with pytest.raises(InvariantError, match="sorted"):
        # Equal scores must run in ascending id order.
        RetrievalResult(ranked=((3, 0.7), (2, 0.7)), truth=frozenset({2}),
                        calls_per_turn=(1,))
    r = ranked_result({2: 0.7, 3: 0.7, 1: 0.9}, {1})
    assert [pid for pid, _ in r.ranked] == [1, 2, 3]
    assert r.total_calls == 1


def test_recall_at_k_cases():
    r = ranked_result({i: 1.0 - 0.01 * i for i in range(10)}, truth={0, 1, 2})
    assert recall_at_k(r, 5) == 1.0
    disjoint = ranked_result({i: 1.0 - 0.01 * i for i in range(10)}, truth={50, 51})
    assert recall_at_k(disjoint, 10) == 0.0
    # 3 of 5 truth ids inside the top 10.
    partial = ranked_result({i: 1.0 - 0.01 * i for i in range(10)},
                            truth={0, 1, 2, 100, 101})
    assert recall_at_k(partial, 10) == pytest.approx(0.6)
    # k beyond the list length falls back to the whole list.
    assert recall_at_k(partial, 500) == pytest.approx(0.6)
    with pytest.raises(ConfigError):
        recall_at_k(r, 0)
    with pytest.raises(MetricError):
        recall_at_k(RetrievalResult(ranked=((1, 0.9),), truth=frozenset(),
                                    calls_per_turn=(1,)), 5)


def test_recall_at_k_nondecreasing():
    rng = np.random.default_rng(6)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        scores = {i: float(rng.uniform(0, 1)) for i in range(n)}
        truth = set(rng.choice(60, size=rng.integers(1, 10), replace=False))
        r = ranked_result(scores, truth or {0})
        values = [recall_at_k(r, k) for k in range(1, n + 5)]
        assert all(b >= a for a, b in zip(values, values[1:]))


def test_prf_cases():
    exact = ranked_result({1: 0.9, 2: 0.8}, truth={1, 2})
    assert post_threshold_prf(exact) == (1.0, 1.0, 1.0)
    none_retained = ranked_result({1: 0.4}, truth={1})
    assert post_threshold_prf(none_retained) == (0.0, 0.0, 0.0)
    scores = {0: 0.9, 1: 0.8, 2: 0.7, 3: 0.6, 4: 0.3}
    truth = {0, 1, 10, 11, 12, 13, 14, 15}
    p, r, f1 = post_threshold_prf(ranked_result(scores, truth))
    assert (p, r) == (0.5, 0.25)
    assert f1 == pytest.approx(1.0 / 3.0)
    # Scores sitting exactly on the threshold are retained.
    boundary = ranked_result({5: 0.5}, truth={5})
    assert post_threshold_prf(boundary) == (1.0, 1.0, 1.0)


def test_prf_counts_are_integers():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 25))
        scores = {i: float(rng.uniform(0, 1)) for i in range(n)}
        truth = set(int(x) for x in rng.choice(40, size=rng.integers(1, 12), replace=False))
        r = ranked_result(scores, truth)
        precision, recall, _ = post_threshold_prf(r)
        retained = sum(1 for _, s in r.ranked if s >= 0.5)
        np.testing.assert_allclose(precision * retained, round(precision * retained), atol=1e-9)
        np.testing.assert_allclose(recall * len(truth), round(recall * len(truth)), atol=1e-9)


def test_efficiency_curve_zero_calls():
    log = EpisodeLog(query_id=0, truth=frozenset({1, 2}),
                     initial_ids=frozenset({1, 5}),
                     turns=tuple(TurnLog(0, frozenset({1, 5})) for _ in range(3)),
                     terminal_reason="stagnation")
    assert efficiency_curve(log) == [(0, 0.5)]


def test_efficiency_curve_monotone():
    log = EpisodeLog(
        query_id=0, truth=frozenset({1, 2, 3, 4}),
        initial_ids=frozenset({1}),
        turns=(
            TurnLog(2, frozenset({1, 2})),
            TurnLog(0, frozenset({1, 2})),       # collapses onto x=2
            TurnLog(3, frozenset({1, 2, 3, 9})),
        ),
        terminal_reason="max_turns",
    )
    curve = efficiency_curve(log)
    assert curve == [(0, 0.25), (2, 0.5), (5, 0.75)]
    xs = [x for x, _ in curve]
    ys = [y for _, y in curve]
    assert xs == sorted(set(xs))
    assert all(b >= a for a, b in zip(ys, ys[1:]))


def test_run_retrieval_greedy_deterministic():
    c = build_corpus(seed=5, n_papers=120, n_queries=3, dim=4, avg_refs=4)
    actor = toy_actor(c)
    r1, log1 = run_retrieval(c, 0, actor, EnvConfig())
    r2, log2 = run_retrieval(c, 0, actor, EnvConfig())
    assert r1.ranked == r2.ranked
    assert log1 == log2
    # The curve's final recall equals recall over the whole final pool.
    final_recall = efficiency_curve(log1)[-1][1]
    assert final_recall == recall_at_k(r1, len(r1.ranked))


def test_run_retrieval_sampled_reproducible():
    c = build_corpus(seed=5, n_papers=120, n_queries=3, dim=4, avg_refs=4)
    actor = toy_actor(c)
    r1, _ = run_retrieval(c, 1, actor, EnvConfig(), np.random.default_rng(3))
    r2, _ = run_retrieval(c, 1, actor, EnvConfig(), np.random.default_rng(3))
    assert r1.ranked == r2.ranked


def test_summarize_result():
    scores = {i: 1.0 - 0.02 * i for i in range(30)}
    truth = {0, 1, 2, 3, 40}
    row = summarize_result(ranked_result(scores, truth, calls=(2, 3)), 7, "pspo")
    assert row.query_id == 7 and row.algorithm == "pspo"
    assert row.recall_at_5 == pytest.approx(4 / 5)
    assert row.recall_at_all == pytest.approx(4 / 5)
    assert row.total_calls == 5


def test_eval_csv_round_trip(tmp_path):
    c = build_corpus(seed=5, n_papers=120, n_queries=3, dim=4, avg_refs=4)
    actor = toy_actor(c)
    rows, logs = evaluate_queries(c, range(3), actor, EnvConfig(), "pspo")
    assert len(rows) == 3
    p1, p2 = tmp_path / "eval.csv", tmp_path / "eval2.csv"
    write_eval_csv(rows, p1)
    write_eval_csv(rows, p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == ("query_id,algorithm,precision,recall,f1,recall@5,"
                      "recall@10,recall@25,recall@all,total_calls")
    e1 = tmp_path / "eff.csv"
    write_efficiency_csv(logs, "pspo", e1)
    back = read_efficiency_csv(e1)
    assert back[0][:2] == (0, "pspo")
    assert all(y >= 0 for *_, y in back)


def test_compare_identical_runs_tie():
    a = metrics_rows("pspo", 0, [1.0, 2.0, 3.0])
    b = metrics_rows("gspo", 0, [1.0, 2.0, 3.0])
    rows = compare_runs([a, b], final_window=2)
    by_algo = {r.algorithm: r for r in rows}
    assert by_algo["pspo"].final_window_return == by_algo["gspo"].final_window_return
    assert by_algo["pspo"].auc == by_algo["gspo"].auc
    # A tie awards no win to anyone.
    assert by_algo["pspo"].wins == 0 and by_algo["gspo"].wins == 0


def test_compare_dominating_algorithm_wins_every_seed():
    runs = []
    for seed in range(3):
        runs.append(metrics_rows("pspo", seed, [2.0, 3.0, 4.0]))
        runs.append(metrics_rows("ppo_token", seed, [1.0, 1.5, 2.0]))
    rows = compare_runs(runs, final_window=2)
    by_algo = {r.algorithm: r for r in rows}
    assert by_algo["pspo"].wins == 3
    assert by_algo["ppo_token"].wins == 0
    assert by_algo["pspo"].n_seeds == 3


def test_compare_auc_constant_curve():
    steps = 7
    a = metrics_rows("pspo", 0, [1.5] * steps)
    b = metrics_rows("gspo", 0, [0.5] * steps)
    rows = compare_runs([a, b], final_window=3)
    by_algo = {r.algorithm: r for r in rows}
    assert by_algo["pspo"].auc == pytest.approx(1.5 * steps)
    assert by_algo["gspo"].auc == pytest.approx(0.5 * steps)


def test_compare_errors():
    only_one = metrics_rows("pspo", 0, [1.0, 2.0])
    with pytest.raises(ConfigError):
        compare_runs([only_one])
    mismatched = metrics_rows("gspo", 0, [1.0, 2.0, 3.0])
    with pytest.raises(AlignmentError):
        compare_runs([only_one, mismatched])
    with pytest.raises(ConfigError):
        compare_runs([only_one, metrics_rows("gspo", 0, [1.0, 2.0])], final_window=0)


def test_comparison_table_layout():
    rows = [ComparisonRow("pspo", 5, 2.25, 640.0, 4),
            ComparisonRow("ppo_token", 5, 1.5, 500.0, 1)]
    text = comparison_table(rows)
    lines = text.splitlines()
    assert len(lines) == 4
    assert "pspo" in lines[2] and "ppo_token" in lines[3]


def test_macro_average():
    assert macro_average([0.2, 0.4, 0.9]) == pytest.approx(0.5)
    with pytest.raises(MetricError):
        macro_average([])

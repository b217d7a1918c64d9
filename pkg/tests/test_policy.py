import itertools

import numpy as np
import pytest

from scoutsim.corpus import Query, build_corpus
from scoutsim.env import (
    Environment,
    EnvConfig,
    History,
    Observation,
    PaperPool,
    PoolEntry,
    SlotSummary,
    ToolKind,
    build_observation,
    search_call,
)
from scoutsim.errors import ConfigError, InvariantError
from scoutsim.policy import (
    EMPTY_SLOT,
    ActionVocab,
    DecodeContext,
    SequencePolicy,
    ValueHead,
    decode_token,
    feature_dim,
    featurize,
    log_softmax,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def empty_obs():
    return Observation(expanded=(), unexpanded=(), pool_size=0, turn=0,
                       stagnant_turns=0, last_reward=0.0, n_searches=0, n_expands=0)


def small_policy(max_calls=2, n_search=2, n_slots=3, hidden=(4,), dim=2):
    cfg = EnvConfig(l_unexpanded=n_slots, l_expanded=2, max_calls=max_calls)
    return cfg, SequencePolicy(cfg, dim, hidden=hidden, n_search=n_search)


def test_feature_dim_default():
    assert feature_dim(EnvConfig()) == 4 + 3 * 10 + 3 * 10 + 2


def test_featurize_empty_observation():
    feats = featurize(empty_obs(), EnvConfig())
    np.testing.assert_array_equal(feats, np.zeros(66))


def test_featurize_slot_echo():
    slot = SlotSummary(paper_id=7, score=0.8, out_degree=0, arrival_turn=0)
    obs = Observation(expanded=(), unexpanded=(slot,), pool_size=1, turn=0,
                      stagnant_turns=0, last_reward=0.0, n_searches=0, n_expands=0)
    feats = featurize(obs, EnvConfig())
    assert feats[4] == pytest.approx(0.8)
    assert feats[5] == 0.0            # degree 0
    assert feats[6] == pytest.approx(1.0)  # arrived this turn


def test_featurize_bounded():
    c = build_corpus(seed=4, n_papers=120, n_queries=2, dim=5, avg_refs=4)
    rng = np.random.default_rng(2)
    env = Environment(c, 0, EnvConfig())
    cfg = env.config
    while not env.done:
        obs = env.observe()
        feats = featurize(obs, cfg)
        assert feats.shape == (feature_dim(cfg),)
        assert np.all(feats >= -1.0) and np.all(feats <= 1.0)
        env.step([search_call(unit(rng.standard_normal(c.dim)))])
    feats = featurize(env.observe(), cfg)
    assert np.all(np.isfinite(feats))


def test_featurize_insertion_order_invariant():
    c = build_corpus(seed=4, n_papers=30, n_queries=1, dim=4, avg_refs=3)
    entries = {
        i: PoolEntry(score=0.1 * i + 0.05, expanded=(i % 2 == 0), arrival_turn=0)
        for i in range(8)
    }
    fwd = PaperPool(entries=dict(entries), query_id=0)
    rev = PaperPool(entries=dict(reversed(entries.items())), query_id=0)
    cfg = EnvConfig()
    a = build_observation(fwd, History(), c, (cfg.l_expanded, cfg.l_unexpanded))
    b = build_observation(rev, History(), c, (cfg.l_expanded, cfg.l_unexpanded))
    assert a == b
    np.testing.assert_array_equal(featurize(a, cfg), featurize(b, cfg))


def test_vocab_layout():
    v = ActionVocab(n_search=8, n_slots=10, dim=8)
    assert v.size == 19
    assert v.end_token == 18
    assert v.is_end(18) and not v.is_end(0)
    with pytest.raises(ConfigError):
        ActionVocab(n_search=9, n_slots=10, dim=4)  # exceeds 2*dim
    with pytest.raises(ConfigError):
        ActionVocab(n_search=0, n_slots=10, dim=4)


def test_decode_token_search_directions():
    v = ActionVocab(n_search=8, n_slots=2, dim=4)
    q = unit([1.0, 1.0, 1.0, 1.0])
    ctx = DecodeContext(query_topic=q, slot_ids=(5, 9))
    for token in range(8):
        call = decode_token(v, ctx, token)
        assert call.kind is ToolKind.SEARCH
        axis, sign = token % 4, (1.0 if token < 4 else -1.0)
        want = q.copy()
        want[axis] += sign * 0.5
        np.testing.assert_allclose(call.probe, want / np.linalg.norm(want))
        np.testing.assert_allclose(np.linalg.norm(call.probe), 1.0)


def test_decode_token_expand_and_end():
    v = ActionVocab(n_search=2, n_slots=3, dim=2)
    ctx = DecodeContext(query_topic=unit([1.0, 0.0]), slot_ids=(42, 7))
    assert decode_token(v, ctx, v.end_token) is None
    assert decode_token(v, ctx, 2).paper_id == 42
    assert decode_token(v, ctx, 3).paper_id == 7
    # Expand over an empty slot decodes to the sentinel the env rejects.
    assert decode_token(v, ctx, 4).paper_id == EMPTY_SLOT
    with pytest.raises(InvariantError):
        decode_token(v, ctx, v.size)


def test_log_softmax_normalizes():
    rng = np.random.default_rng(0)
    for _ in range(50):
        logits = rng.standard_normal(7) * rng.uniform(0.1, 30)
        lp = log_softmax(logits)
        np.testing.assert_allclose(np.exp(lp).sum(), 1.0, atol=1e-12)
        np.testing.assert_allclose(lp, logits - np.log(np.exp(logits - logits.max()).sum()) - logits.max(), atol=1e-9)


def forced_bias_params(policy, end_bias):
    """Zero all weights, then pin the terminator's output bias."""
    params = policy.init_params(0).with_values(np.zeros(policy.init_params(0).size))
    bias = params.view(len(policy.net.shapes) - 1)
    bias[policy.vocab.end_token] = end_bias
    return params


def test_sample_turn_immediate_end():
    cfg, policy = small_policy()
    params = forced_bias_params(policy, end_bias=500.0)
    ctx = DecodeContext(query_topic=unit([1.0, 0.0]), slot_ids=())
    s = policy.sample_turn(params, np.zeros(policy.n_features), ctx,
                           np.random.default_rng(0))
    assert s.tokens == (policy.vocab.end_token,)
    assert s.calls == ()
    assert s.logprob == pytest.approx(0.0, abs=1e-12)


def test_sample_turn_forced_end_at_budget():
    cfg, policy = small_policy(max_calls=2)
    params = forced_bias_params(policy, end_bias=-500.0)
    ctx = DecodeContext(query_topic=unit([1.0, 0.0]), slot_ids=(1, 2, 3))
    s = policy.sample_turn(params, np.zeros(policy.n_features), ctx,
                           np.random.default_rng(1))
    assert len(s.tokens) == 3
    assert s.tokens[-1] == policy.vocab.end_token
    assert s.token_logprobs[-1] == 0.0
    assert len(s.calls) == 2
    assert s.logprob == pytest.approx(sum(s.token_logprobs))


def test_sample_turn_deterministic():
    cfg, policy = small_policy()
    params = policy.init_params(3)
    ctx = DecodeContext(query_topic=unit([1.0, 2.0]), slot_ids=(4, 5))
    feats = np.full(policy.n_features, 0.1)
    a = policy.sample_turn(params, feats, ctx, np.random.default_rng(9))
    b = policy.sample_turn(params, feats, ctx, np.random.default_rng(9))
    assert a.tokens == b.tokens
    assert a.token_logprobs == b.token_logprobs


def test_token_logprobs_match_sampling():
    cfg, policy = small_policy(max_calls=3, hidden=(6,))
    params = policy.init_params(5)
    ctx = DecodeContext(query_topic=unit([0.3, -0.4]), slot_ids=(1,))
    rng = np.random.default_rng(11)
    for _ in range(50):
        feats = rng.uniform(-1, 1, policy.n_features)
        s = policy.sample_turn(params, feats, ctx, rng)
        again = policy.token_logprobs(params, feats, s.tokens)
        np.testing.assert_allclose(again, s.token_logprobs, atol=1e-12)
        total = policy.sequence_logprob(params, feats, s.tokens)
        assert total == sum(again)  # factorization is an identity, not approx


def test_sequence_probabilities_sum_to_one():
    # Brute-force enumeration over a 6-token vocabulary, length <= 3.
    cfg, policy = small_policy(max_calls=2, n_search=2, n_slots=3)
    assert policy.vocab.size == 6
    rng = np.random.default_rng(13)
    for seed in range(5):
        params = policy.init_params(seed)
        feats = rng.uniform(-1, 1, policy.n_features)
        end = policy.vocab.end_token
        tools = [t for t in range(policy.vocab.size) if t != end]
        total = 0.0
        for n_tools in range(cfg.max_calls + 1):
            for combo in itertools.product(tools, repeat=n_tools):
                seq = combo + (end,)
                total += np.exp(policy.sequence_logprob(params, feats, seq))
        np.testing.assert_allclose(total, 1.0, atol=1e-9)


def test_check_tokens_rejects_malformed():
    cfg, policy = small_policy(max_calls=2)
    params = policy.init_params(0)
    feats = np.zeros(policy.n_features)
    end = policy.vocab.end_token
    with pytest.raises(InvariantError):
        policy.token_logprobs(params, feats, (0, 1))  # no terminator
    with pytest.raises(InvariantError):
        policy.token_logprobs(params, feats, (0, 0, 0, end))  # over budget
    with pytest.raises(InvariantError):
        policy.token_logprobs(params, feats, (end, end))  # end not final
    with pytest.raises(InvariantError):
        policy.token_logprobs(params, feats, (99, end))  # out of vocab


def test_greedy_turn_rescaling_invariance():
    cfg, policy = small_policy(hidden=(5,))
    ctx = DecodeContext(query_topic=unit([1.0, -1.0]), slot_ids=(0, 1, 2))
    rng = np.random.default_rng(17)
    for seed in range(10):
        params = policy.init_params(seed)
        feats = rng.uniform(-1, 1, policy.n_features)
        base = policy.greedy_turn(params, feats, ctx)
        scaled = params.copy()
        w_idx = 2 * (policy.net.n_layers - 1)
        scaled.view(w_idx)[:] *= 3.7
        scaled.view(w_idx + 1)[:] *= 3.7
        again = policy.greedy_turn(scaled, feats, ctx)
        assert base.tokens == again.tokens


def test_logprob_grads_finite_differences():
    h = 1e-5
    cfg, policy = small_policy(max_calls=3, hidden=(5,))
    rng = np.random.default_rng(23)
    for seed in range(3):
        params = policy.init_params(seed)
        feats = rng.uniform(-1, 1, policy.n_features)
        ctx = DecodeContext(query_topic=unit([1.0, 0.5]), slot_ids=(1, 2))
        s = policy.sample_turn(params, feats, ctx, rng)
        weights = rng.standard_normal(len(s.tokens))
        grads = policy.logprob_grads(params, feats, s.tokens, weights)
        idx = rng.choice(params.size, size=25, replace=False)
        for i in idx:
            vp, vm = params.values.copy(), params.values.copy()
            vp[i] += h
            vm[i] -= h
            fp = np.dot(weights, policy.token_logprobs(params.with_values(vp), feats, s.tokens))
            fm = np.dot(weights, policy.token_logprobs(params.with_values(vm), feats, s.tokens))
            fd = (fp - fm) / (2 * h)
            assert abs(fd - grads[i]) <= 1e-4 * max(1.0, abs(fd))


def test_value_head():
    head = ValueHead(n_features=6, hidden=(4,))
    zero = head.init_params(0).with_values(np.zeros(head.init_params(0).size))
    v, _ = head.value(zero, np.array([1.0, -1.0, 0.5, 0.2, 0.0, 0.3]))
    assert v == 0.0
    params = head.init_params(1)
    feats = np.array([0.1, 0.2, 0.3, -0.4, 0.5, -0.6])
    a, _ = head.value(params, feats)
    b, _ = head.value(params, feats)
    assert a == b and np.isfinite(a)


def test_value_grads_finite_differences():
    h = 1e-5
    head = ValueHead(n_features=5, hidden=(6,))
    rng = np.random.default_rng(31)
    for seed in range(5):
        params = head.init_params(seed)
        feats = rng.uniform(-1, 1, 5)
        _, cache = head.value(params, feats)
        grads = head.value_grads(params, cache, 1.0)
        idx = rng.choice(params.size, size=20, replace=False)
        for i in idx:
            vp, vm = params.values.copy(), params.values.copy()
            vp[i] += h
            vm[i] -= h
            fp, _ = head.value(params.with_values(vp), feats)
            fm, _ = head.value(params.with_values(vm), feats)
            fd = (fp - fm) / (2 * h)
            assert abs(fd - grads[i]) <= 1e-4 * max(1.0, abs(fd))

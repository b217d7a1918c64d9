"""Action language, observation featurization, and the turn-level policy.

A turn is a short token sequence: up to `max_calls` tool tokens followed by a
terminator. Tokens decode against the current observation — search tokens
pick a perturbation direction of the query topic, expand tokens pick a slot
of the unexpanded list. The policy is autoregressive: each position's logits
come from the shared feature vector plus learned embeddings of the tokens
already emitted this turn. Once `max_calls` tool tokens are out, the
terminator is forced with probability one, so the distribution over token
sequences sums to exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Query
from .env import EnvConfig, Observation, ToolCall, expand_call, search_call
from .errors import ConfigError, InvariantError
from .nets import Mlp, ParamSet

SLOT_FEATURES = 3          # score, out-degree squash, recency
STAT_FEATURES = 4          # pool size, turn, stagnation, last reward
DIGEST_FEATURES = 2        # search / expand call counts
DEGREE_SCALE = 5.0
POOL_SCALE = 25.0
DIGEST_SCALE = 5.0
DEFAULT_PROBE_STEP = 0.5
EMPTY_SLOT = -1


def feature_dim(config: EnvConfig) -> int:
    return (
        STAT_FEATURES
        + SLOT_FEATURES * config.l_unexpanded
        + SLOT_FEATURES * config.l_expanded
        + DIGEST_FEATURES
    )


def featurize(obs: Observation, config: EnvConfig) -> np.ndarray:
    """Bounded feature vector; every entry lands in [-1, 1]."""
    feats = np.zeros(feature_dim(config))
    feats[0] = obs.pool_size / (obs.pool_size + POOL_SCALE)
    feats[1] = obs.turn / config.max_turns
    feats[2] = obs.stagnant_turns / config.stagnation_limit
    feats[3] = obs.last_reward / config.k
    base = STAT_FEATURES
    for slots, cap in ((obs.unexpanded, config.l_unexpanded),
                       (obs.expanded, config.l_expanded)):
        for i, slot in enumerate(slots[:cap]):
            j = base + SLOT_FEATURES * i
            feats[j] = slot.score
            feats[j + 1] = slot.out_degree / (slot.out_degree + DEGREE_SCALE)
            feats[j + 2] = 1.0 / (1.0 + max(obs.turn - slot.arrival_turn, 0))
        base += SLOT_FEATURES * cap
    feats[base] = obs.n_searches / (obs.n_searches + DIGEST_SCALE)
    feats[base + 1] = obs.n_expands / (obs.n_expands + DIGEST_SCALE)
    return np.clip(feats, -1.0, 1.0)


@dataclass(frozen=True)
class ActionVocab:
    """Token codec: [search directions][expand slots][terminator].

    Search direction d perturbs the query topic along axis d % dim, positive
    for d < dim and negative beyond, so n_search may not exceed 2 * dim.
    """

    n_search: int          # number of search-direction tokens
    n_slots: int           # expand slots = length of the unexpanded list
    dim: int               # topic dimension

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.n_slots < 0:
            raise ConfigError(f"n_slots must be >= 0, got {self.n_slots}")
        if not 1 <= self.n_search <= 2 * self.dim:
            raise ConfigError(
                f"n_search must be in 1..{2 * self.dim} for dim={self.dim}, "
                f"got {self.n_search}"
            )

    @property
    def size(self) -> int:
        return self.n_search + self.n_slots + 1

    @property
    def end_token(self) -> int:
        return self.size - 1

    def is_end(self, token: int) -> bool:
        return token == self.end_token


@dataclass(frozen=True)
class DecodeContext:
    """Observation-dependent data the codec needs: query topic and the paper
    ids currently shown in the unexpanded list, in display order."""

    query_topic: np.ndarray
    slot_ids: tuple[int, ...]

    @classmethod
    def from_observation(cls, query: Query, obs: Observation) -> "DecodeContext":
        return cls(
            query_topic=query.topic,
            slot_ids=tuple(s.paper_id for s in obs.unexpanded),
        )


def decode_token(vocab: ActionVocab, ctx: DecodeContext, token: int) -> ToolCall | None:
    """Token -> tool call; the terminator decodes to None. Expand tokens over
    an empty slot decode to a sentinel paper id the environment rejects."""
    if not 0 <= token < vocab.size:
        raise InvariantError(f"token {token} outside vocab of size {vocab.size}")
    if vocab.is_end(token):
        return None
    if token < vocab.n_search:
        axis = token % vocab.dim
        sign = 1.0 if token < vocab.dim else -1.0
        probe = np.array(ctx.query_topic, dtype=float)
        probe[axis] += sign * DEFAULT_PROBE_STEP
        norm = np.linalg.norm(probe)
        if norm == 0.0:
            probe = np.array(ctx.query_topic, dtype=float)
            norm = np.linalg.norm(probe)
        return search_call(probe / norm)
    slot = token - vocab.n_search
    if slot < len(ctx.slot_ids):
        return expand_call(ctx.slot_ids[slot])
    return expand_call(EMPTY_SLOT)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


@dataclass(frozen=True)
class TurnSample:
    """One sampled turn: tokens (terminator included), their log-probs, and
    the decoded tool calls."""

    tokens: tuple[int, ...]
    token_logprobs: tuple[float, ...]
    calls: tuple[ToolCall, ...]

    @property
    def logprob(self) -> float:
        return float(sum(self.token_logprobs))


class SequencePolicy:
    """Autoregressive policy over turn token sequences.

    Parameters hold the MLP trunk plus a token embedding table appended as an
    extra block; prefix conditioning sums embeddings of emitted tokens into
    the feature vector before the trunk.
    """

    def __init__(self, config: EnvConfig, dim: int,
                 hidden: tuple[int, ...] = (64,), n_search: int = 8):
        self.config = config
        self.vocab = ActionVocab(
            n_search=n_search, n_slots=config.l_unexpanded, dim=dim
        )
        self.n_features = feature_dim(config)
        self.net = Mlp((self.n_features, *hidden, self.vocab.size))
        self.embed_shape = (self.vocab.size, self.n_features)
        self.embed_index = len(self.net.shapes)

    def init_params(self, seed: int) -> ParamSet:
        return self.net.init_params(seed, extra_shapes=(self.embed_shape,))

    def _prefix_input(self, params: ParamSet, feats: np.ndarray,
                      prefix: tuple[int, ...]) -> np.ndarray:
        x = np.array(feats, dtype=float)
        if prefix:
            embed = params.view(self.embed_index)
            x += embed[list(prefix)].sum(axis=0)
        return x

    def _position_logprobs(self, params: ParamSet, feats: np.ndarray,
                           prefix: tuple[int, ...]) -> tuple[np.ndarray, list, np.ndarray]:
        x = self._prefix_input(params, feats, prefix)
        logits, cache = self.net.forward(params, x)
        return log_softmax(logits), cache, logits

    def sample_turn(self, params: ParamSet, feats: np.ndarray,
                    ctx: DecodeContext, rng: np.random.Generator) -> TurnSample:
        tokens: list[int] = []
        logprobs: list[float] = []
        calls: list[ToolCall] = []
        for _ in range(self.config.max_calls):
            logp, _, _ = self._position_logprobs(params, feats, tuple(tokens))
            token = int(rng.choice(self.vocab.size, p=np.exp(logp)))
            tokens.append(token)
            logprobs.append(float(logp[token]))
            if self.vocab.is_end(token):
                break
            calls.append(decode_token(self.vocab, ctx, token))
        if not tokens or not self.vocab.is_end(tokens[-1]):
            # Call budget exhausted: terminator is forced, probability one.
            tokens.append(self.vocab.end_token)
            logprobs.append(0.0)
        return TurnSample(tuple(tokens), tuple(logprobs), tuple(calls))

    def greedy_turn(self, params: ParamSet, feats: np.ndarray,
                    ctx: DecodeContext) -> TurnSample:
        """Argmax decoding (ties to the lowest token index): the
        zero-temperature limit of sample_turn."""
        tokens: list[int] = []
        logprobs: list[float] = []
        calls: list[ToolCall] = []
        for _ in range(self.config.max_calls):
            logp, _, _ = self._position_logprobs(params, feats, tuple(tokens))
            token = int(np.argmax(logp))
            tokens.append(token)
            logprobs.append(float(logp[token]))
            if self.vocab.is_end(token):
                break
            calls.append(decode_token(self.vocab, ctx, token))
        if not tokens or not self.vocab.is_end(tokens[-1]):
            tokens.append(self.vocab.end_token)
            logprobs.append(0.0)
        return TurnSample(tuple(tokens), tuple(logprobs), tuple(calls))

    def _check_tokens(self, tokens: tuple[int, ...]) -> None:
        if not tokens or not self.vocab.is_end(tokens[-1]):
            raise InvariantError("turn token sequence must end with the terminator")
        if len(tokens) - 1 > self.config.max_calls:
            raise InvariantError(
                f"{len(tokens) - 1} tool tokens exceed max_calls="
                f"{self.config.max_calls}"
            )
        for t in tokens[:-1]:
            if self.vocab.is_end(t) or not 0 <= t < self.vocab.size:
                raise InvariantError(f"invalid tool token {t}")

    def _forced_end(self, tokens: tuple[int, ...]) -> bool:
        return len(tokens) - 1 == self.config.max_calls

    def token_logprobs(self, params: ParamSet, feats: np.ndarray,
                       tokens: tuple[int, ...]) -> np.ndarray:
        """Per-position log-probs under the given parameters; a forced
        terminator contributes exactly zero."""
        self._check_tokens(tokens)
        out = np.zeros(len(tokens))
        last = len(tokens) - 1
        for pos, token in enumerate(tokens):
            if pos == last and self._forced_end(tokens):
                break
            logp, _, _ = self._position_logprobs(params, feats, tokens[:pos])
            out[pos] = logp[token]
        return out

    def sequence_logprob(self, params: ParamSet, feats: np.ndarray,
                         tokens: tuple[int, ...]) -> float:
        return float(self.token_logprobs(params, feats, tokens).sum())

    def logprob_grads(self, params: ParamSet, feats: np.ndarray,
                      tokens: tuple[int, ...], weights) -> np.ndarray:
        """Gradient of sum_i weights[i] * logprob(token_i) w.r.t. all
        parameters. `weights` is a scalar or one weight per position; the
        forced-terminator position has no gradient."""
        self._check_tokens(tokens)
        w = np.broadcast_to(np.asarray(weights, dtype=float), (len(tokens),))
        grads = np.zeros(params.values.size)
        embed_off = params.offset(self.embed_index)
        embed_grad = grads[embed_off:embed_off + self.embed_shape[0] * self.embed_shape[1]]
        embed_grad = embed_grad.reshape(self.embed_shape)
        last = len(tokens) - 1
        for pos, token in enumerate(tokens):
            if pos == last and self._forced_end(tokens):
                break
            if w[pos] == 0.0:
                continue
            logp, cache, _ = self._position_logprobs(params, feats, tokens[:pos])
            dlogits = -np.exp(logp) * w[pos]
            dlogits[token] += w[pos]
            g, gx = self.net.backward(params, cache, dlogits)
            grads += g
            for t in tokens[:pos]:
                embed_grad[t] += gx
        return grads


class ValueHead:
    """Scalar state value from the shared feature vector."""

    def __init__(self, n_features: int, hidden: tuple[int, ...] = (32,)):
        self.net = Mlp((n_features, *hidden, 1))

    def init_params(self, seed: int) -> ParamSet:
        return self.net.init_params(seed)

    def value(self, params: ParamSet, feats: np.ndarray) -> tuple[float, list]:
        y, cache = self.net.forward(params, feats)
        return float(y[0]), cache

    def value_grads(self, params: ParamSet, cache: list, dvalue: float) -> np.ndarray:
        g, _ = self.net.backward(params, cache, np.array([dvalue]))
        return g

"""Multi-turn retrieval environment.

The latent state is a paper pool accumulated over turns. Each turn the agent
issues up to `max_calls` tool calls (similarity search or reference
expansion); results are filtered for novelty and minimum relevance before
entering the pool, and the reward is the relevance gain of the top-k accepted
papers minus a penalty for repeated calls. The episode ends when the pool is
unchanged for `stagnation_limit` consecutive turns or the turn budget runs
out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .corpus import Corpus, references, relevance, search_backend
from .errors import ConfigError, EpisodeAbortError, InvalidProbeError, NotFoundError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvConfig:
    tau: float = 0.01            # minimum relevance for pool admission
    k: int = 3                   # reward counts the k best accepted papers
    eta: float = 0.5             # penalty per repeated call
    l_expanded: int = 10         # observation list caps
    l_unexpanded: int = 10
    stagnation_limit: int = 3
    max_turns: int = 12
    max_calls: int = 3           # calls per turn
    search_limit: int = 5        # hits returned per search call
    n_seed: int = 5              # pool size after reset

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        for name in ("l_expanded", "l_unexpanded", "n_seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("stagnation_limit", "max_turns", "max_calls", "search_limit"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


class ToolKind(str, Enum):
    SEARCH = "search"
    EXPAND = "expand"


@dataclass(frozen=True)
class ToolCall:
    kind: ToolKind
    probe: np.ndarray | None = None   # SEARCH only
    paper_id: int | None = None       # EXPAND only

    def key(self) -> tuple:
        """Identity used for repetition checks: exact probe bytes or paper id."""
        if self.kind is ToolKind.SEARCH:
            return (self.kind.value, np.asarray(self.probe, dtype=float).tobytes())
        return (self.kind.value, self.paper_id)


def search_call(probe: np.ndarray) -> ToolCall:
    return ToolCall(ToolKind.SEARCH, probe=np.asarray(probe, dtype=float))


def expand_call(paper_id: int) -> ToolCall:
    return ToolCall(ToolKind.EXPAND, paper_id=int(paper_id))


@dataclass
class History:
    """Append-only record of executed calls."""

    past_search_probes: list[np.ndarray] = field(default_factory=list)
    expanded_ids: set[int] = field(default_factory=set)
    _probe_keys: set[bytes] = field(default_factory=set, repr=False)

    def contains(self, call: ToolCall) -> bool:
        if call.kind is ToolKind.SEARCH:
            return call.key()[1] in self._probe_keys
        return call.paper_id in self.expanded_ids

    def add(self, call: ToolCall) -> None:
        if call.kind is ToolKind.SEARCH:
            probe = np.asarray(call.probe, dtype=float)
            self.past_search_probes.append(probe)
            self._probe_keys.add(probe.tobytes())
        else:
            self.expanded_ids.add(int(call.paper_id))

    @property
    def n_searches(self) -> int:
        return len(self.past_search_probes)

    @property
    def n_expands(self) -> int:
        return len(self.expanded_ids)


@dataclass
class PoolEntry:
    score: float
    expanded: bool
    arrival_turn: int


@dataclass
class PaperPool:
    entries: dict[int, PoolEntry]
    query_id: int
    turn: int = 0
    stagnant_turns: int = 0
    last_reward: float = 0.0


@dataclass(frozen=True)
class SlotSummary:
    paper_id: int
    score: float
    out_degree: int
    arrival_turn: int


@dataclass(frozen=True)
class Observation:
    """Dual-list view of the pool plus summary stats and a history digest."""

    expanded: tuple[SlotSummary, ...]
    unexpanded: tuple[SlotSummary, ...]
    pool_size: int
    turn: int
    stagnant_turns: int
    last_reward: float
    n_searches: int
    n_expands: int


@dataclass(frozen=True)
class CallOutcome:
    kind: ToolKind
    n_results: int
    repeated: bool
    invalid: bool


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    accepted: frozenset[int]
    done: bool
    info: tuple[CallOutcome, ...]


def count_repetitions(
    calls: list[ToolCall], history: History
) -> tuple[int, list[bool]]:
    """Repetition flags per call; the history view updates after each call."""
    probes = set(history._probe_keys)
    expanded = set(history.expanded_ids)
    flags = []
    for call in calls:
        if call.kind is ToolKind.SEARCH:
            k = call.key()[1]
            flags.append(k in probes)
            probes.add(k)
        else:
            flags.append(call.paper_id in expanded)
            expanded.add(call.paper_id)
    return sum(flags), flags


def filter_candidates(
    raw: list[int], pool: PaperPool, corpus: Corpus, tau: float
) -> set[int]:
    """Novel candidates with relevance >= tau; duplicates and unknown ids drop."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must be in [0, 1], got {tau}")
    query = corpus.queries[pool.query_id]
    accepted = set()
    for pid in raw:
        if not 0 <= pid < corpus.n_papers:
            log.debug("filter_candidates: dropping unknown id %s", pid)
            continue
        if pid in pool.entries or pid in accepted:
            continue
        if relevance(corpus.papers[pid], query) >= tau:
            accepted.add(pid)
    return accepted


def compute_reward(
    accepted_scores: Mapping[int, float],
    calls: list[ToolCall],
    history: History,
    k: int,
    eta: float,
) -> float:
    """Relevance gain of the k best accepted papers minus the repetition penalty."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if eta < 0:
        raise ConfigError(f"eta must be >= 0, got {eta}")
    ranked = sorted(accepted_scores.items(), key=lambda kv: (-kv[1], kv[0]))
    gain = sum(score for _, score in ranked[:k])
    n_repeats, _ = count_repetitions(calls, history)
    return gain - eta * n_repeats


def build_observation(
    pool: PaperPool, history: History, corpus: Corpus, limits: tuple[int, int]
) -> Observation:
    l_expanded, l_unexpanded = limits

    def summaries(expanded_flag: bool, cap: int) -> tuple[SlotSummary, ...]:
        items = [
            (pid, e)
            for pid, e in pool.entries.items()
            if e.expanded == expanded_flag
        ]
        items.sort(key=lambda kv: (-kv[1].score, kv[0]))
        return tuple(
            SlotSummary(
                paper_id=pid,
                score=e.score,
                out_degree=len(corpus.papers[pid].refs),
                arrival_turn=e.arrival_turn,
            )
            for pid, e in items[:cap]
        )

    return Observation(
        expanded=summaries(True, l_expanded),
        unexpanded=summaries(False, l_unexpanded),
        pool_size=len(pool.entries),
        turn=pool.turn,
        stagnant_turns=pool.stagnant_turns,
        last_reward=pool.last_reward,
        n_searches=history.n_searches,
        n_expands=history.n_expands,
    )


class Environment:
    """One episode over a shared read-only corpus.

    Instances are single-owner: a rollout drives exactly one Environment, but
    any number of environments may read the same Corpus concurrently.
    """

    def __init__(self, corpus: Corpus, query_id: int, config: EnvConfig, seed: int = 0):
        if not 0 <= query_id < corpus.n_queries:
            raise NotFoundError(f"query id {query_id} not in corpus")
        self.corpus = corpus
        self.query = corpus.queries[query_id]
        self.config = config
        self.seed = seed
        self.reset()

    def reset(self) -> Observation:
        """Seed the pool with the top n_seed search hits for the query topic."""
        cfg = self.config
        entries: dict[int, PoolEntry] = {}
        if cfg.n_seed > 0:
            for pid in search_backend(self.corpus, self.query.topic, cfg.n_seed):
                score = relevance(self.corpus.papers[pid], self.query)
                entries[pid] = PoolEntry(score=score, expanded=False, arrival_turn=0)
        self.pool = PaperPool(entries=entries, query_id=self.query.id)
        self.history = History()
        self._done = False
        self._terminal_reason: str | None = None
        return self.observe()

    @property
    def done(self) -> bool:
        return self._done

    @property
    def terminal_reason(self) -> str | None:
        return self._terminal_reason

    def observe(self) -> Observation:
        cfg = self.config
        return build_observation(
            self.pool, self.history, self.corpus, (cfg.l_expanded, cfg.l_unexpanded)
        )

    def step(self, calls: list[ToolCall]) -> StepResult:
        if self._done:
            raise EpisodeAbortError("episode already terminated")
        cfg = self.config
        if len(calls) > cfg.max_calls:
            raise EpisodeAbortError(
                f"{len(calls)} calls exceed max_calls={cfg.max_calls}"
            )

        raw: list[int] = []
        valid_calls: list[ToolCall] = []
        results_per_call: list[int] = []
        invalid_flags: list[bool] = []
        n_invalid = 0
        for call in calls:
            if call.kind is ToolKind.SEARCH:
                try:
                    ids = search_backend(self.corpus, call.probe, cfg.search_limit)
                except InvalidProbeError as exc:
                    raise EpisodeAbortError(f"malformed search call: {exc}") from exc
                raw.extend(ids)
                valid_calls.append(call)
                results_per_call.append(len(ids))
                invalid_flags.append(False)
            elif call.kind is ToolKind.EXPAND:
                pid = call.paper_id
                if pid is None or pid not in self.pool.entries:
                    log.debug("skipping expand of %s: not in pool", pid)
                    n_invalid += 1
                    results_per_call.append(0)
                    invalid_flags.append(True)
                    continue
                refs = references(self.corpus, pid)
                self.pool.entries[pid].expanded = True
                raw.extend(refs)
                valid_calls.append(call)
                results_per_call.append(len(refs))
                invalid_flags.append(False)
            else:
                raise EpisodeAbortError(f"unknown tool kind {call.kind!r}")

        accepted = filter_candidates(raw, self.pool, self.corpus, cfg.tau)
        scores = {
            pid: relevance(self.corpus.papers[pid], self.query) for pid in accepted
        }
        # Invalid expands are skipped but penalized like a repeated no-op call.
        reward = (
            compute_reward(scores, valid_calls, self.history, cfg.k, cfg.eta)
            - cfg.eta * n_invalid
        )

        _, repeat_flags = count_repetitions(valid_calls, self.history)
        repeat_iter = iter(repeat_flags)
        outcomes = tuple(
            CallOutcome(
                kind=call.kind,
                n_results=results_per_call[i],
                repeated=False if invalid_flags[i] else next(repeat_iter),
                invalid=invalid_flags[i],
            )
            for i, call in enumerate(calls)
        )

        for call in valid_calls:
            self.history.add(call)

        self.pool.turn += 1
        for pid in sorted(accepted):
            self.pool.entries[pid] = PoolEntry(
                score=scores[pid], expanded=False, arrival_turn=self.pool.turn
            )
        self.pool.stagnant_turns = 0 if accepted else self.pool.stagnant_turns + 1
        self.pool.last_reward = reward

        if self.pool.stagnant_turns >= cfg.stagnation_limit:
            self._done, self._terminal_reason = True, "stagnation"
        elif self.pool.turn >= cfg.max_turns:
            self._done, self._terminal_reason = True, "max_turns"

        return StepResult(
            observation=self.observe(),
            reward=reward,
            accepted=frozenset(accepted),
            done=self._done,
            info=outcomes,
        )

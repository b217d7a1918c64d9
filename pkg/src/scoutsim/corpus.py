"""Synthetic scholarly universe.

Papers carry unit topic vectors drawn around cluster centers, citation edges
form a DAG biased toward topically similar earlier papers, and queries come
with ground-truth relevant sets defined by a relevance threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidProbeError, NotFoundError, InvariantError

log = logging.getLogger(__name__)

UNIT_TOL = 1e-9

# Generation defaults; overridable per build. Calibrated so that at 2000
# papers a query's ground-truth set typically lands between 5 and 50 papers.
DEFAULT_CLUSTERS = 16
DEFAULT_TRUTH_THRESHOLD = 0.90
DEFAULT_PAPER_SPREAD = 0.45
DEFAULT_QUERY_SPREAD = 0.20
DEFAULT_REF_POWER = 8.0
_QUERY_ATTEMPTS = 500


@dataclass(frozen=True)
class Paper:
    id: int
    topic: np.ndarray
    refs: tuple[int, ...]
    year_rank: int


@dataclass(frozen=True)
class Query:
    id: int
    topic: np.ndarray
    truth: frozenset[int]


class Corpus:
    """Immutable bundle of papers and queries; safe for concurrent reads."""

    def __init__(self, papers: list[Paper], queries: list[Query], dim: int, seed: int):
        self.papers = tuple(papers)
        self.queries = tuple(queries)
        self.dim = dim
        self.seed = seed
        self.topics = np.stack([p.topic for p in papers]) if papers else np.zeros((0, dim))
        self._check()

    def _check(self) -> None:
        for p in self.papers:
            if p.topic.shape != (self.dim,):
                raise InvariantError(f"paper {p.id}: topic dim {p.topic.shape} != {self.dim}")
            if abs(np.linalg.norm(p.topic) - 1.0) > UNIT_TOL:
                raise InvariantError(f"paper {p.id}: topic is not unit norm")
            if p.id in p.refs or len(set(p.refs)) != len(p.refs):
                raise InvariantError(f"paper {p.id}: self-reference or duplicate refs")
            for r in p.refs:
                if not 0 <= r < len(self.papers):
                    raise InvariantError(f"paper {p.id}: ref {r} out of range")
        for q in self.queries:
            if abs(np.linalg.norm(q.topic) - 1.0) > UNIT_TOL:
                raise InvariantError(f"query {q.id}: topic is not unit norm")

    @property
    def n_papers(self) -> int:
        return len(self.papers)

    @property
    def n_queries(self) -> int:
        return len(self.queries)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def relevance(paper: Paper, query: Query) -> float:
    """Relevance of a paper to a query: cosine of topics mapped to [0, 1]."""
    if paper.topic.shape != query.topic.shape:
        raise InvariantError(
            f"topic dims differ: {paper.topic.shape} vs {query.topic.shape}"
        )
    denom = np.linalg.norm(paper.topic) * np.linalg.norm(query.topic)
    cos = float(np.dot(paper.topic, query.topic) / denom)
    return float(np.clip((cos + 1.0) / 2.0, 0.0, 1.0))


def search_backend(corpus: Corpus, probe: np.ndarray, limit: int) -> list[int]:
    """Exact top-`limit` paper ids by cosine to the probe, ties by ascending id."""
    if limit < 1:
        raise ConfigError(f"limit must be >= 1, got {limit}")
    probe = np.asarray(probe, dtype=float)
    if probe.shape != (corpus.dim,):
        raise InvalidProbeError(f"probe shape {probe.shape} != ({corpus.dim},)")
    norm = np.linalg.norm(probe)
    if norm == 0.0:
        raise InvalidProbeError("probe has zero norm")
    scores = corpus.topics @ (probe / norm)
    order = np.lexsort((np.arange(corpus.n_papers), -scores))
    return [int(i) for i in order[: min(limit, corpus.n_papers)]]


def references(corpus: Corpus, paper_id: int) -> list[int]:
    """Outgoing citations of a paper, order preserved."""
    if not 0 <= paper_id < corpus.n_papers:
        raise NotFoundError(f"paper id {paper_id} not in corpus")
    return list(corpus.papers[paper_id].refs)


def build_corpus(
    seed: int,
    n_papers: int,
    n_queries: int,
    dim: int,
    avg_refs: float,
    n_clusters: int = DEFAULT_CLUSTERS,
    truth_threshold: float = DEFAULT_TRUTH_THRESHOLD,
    paper_spread: float = DEFAULT_PAPER_SPREAD,
    query_spread: float = DEFAULT_QUERY_SPREAD,
    ref_power: float = DEFAULT_REF_POWER,
) -> Corpus:
    """Deterministically generate a corpus from a seed.

    Citation edges only point to papers with a lower year_rank, so the graph is
    acyclic. Query truth sets collect every paper whose relevance reaches
    `truth_threshold`; query topics are re-sampled until that set is nonempty.
    """
    if n_papers < 2:
        raise ConfigError(f"n_papers must be >= 2, got {n_papers}")
    if dim < 2:
        raise ConfigError(f"dim must be >= 2, got {dim}")
    if n_queries < 1:
        raise ConfigError(f"n_queries must be >= 1, got {n_queries}")
    if not 0 <= avg_refs < n_papers:
        raise ConfigError(f"avg_refs must be in [0, n_papers), got {avg_refs}")
    if n_clusters < 1:
        raise ConfigError(f"n_clusters must be >= 1, got {n_clusters}")
    if not 0.0 < truth_threshold <= 1.0:
        raise ConfigError(f"truth_threshold must be in (0, 1], got {truth_threshold}")

    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_clusters, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    assignment = rng.integers(0, n_clusters, size=n_papers)
    topics = centers[assignment] + paper_spread * rng.normal(size=(n_papers, dim))
    topics /= np.linalg.norm(topics, axis=1, keepdims=True)

    year_rank = rng.permutation(n_papers)
    by_rank = np.argsort(year_rank)  # by_rank[k] = paper id with year_rank k

    refs: list[tuple[int, ...]] = [()] * n_papers
    for k in range(1, n_papers):
        pid = int(by_rank[k])
        n_refs = min(k, int(rng.poisson(avg_refs)))
        if n_refs == 0:
            continue
        earlier = by_rank[:k]
        sims = (topics[earlier] @ topics[pid] + 1.0) / 2.0
        weights = np.maximum(sims, 1e-12) ** ref_power
        chosen = rng.choice(earlier, size=n_refs, replace=False, p=weights / weights.sum())
        refs[pid] = tuple(int(c) for c in sorted(chosen))

    papers = [
        Paper(id=i, topic=topics[i], refs=refs[i], year_rank=int(year_rank[i]))
        for i in range(n_papers)
    ]

    queries: list[Query] = []
    min_cos = 2.0 * truth_threshold - 1.0
    for qid in range(n_queries):
        qtopic = None
        truth: frozenset[int] = frozenset()
        for _ in range(_QUERY_ATTEMPTS):
            g = int(rng.integers(0, n_clusters))
            cand = _unit(centers[g] + query_spread * rng.normal(size=dim))
            hits = np.nonzero(topics @ cand >= min_cos)[0]
            if hits.size > 0:
                qtopic, truth = cand, frozenset(int(i) for i in hits)
                break
        if qtopic is None:
            # Anchor on a random paper's own topic; guarantees a nonempty truth set.
            anchor = int(rng.integers(0, n_papers))
            qtopic = topics[anchor].copy()
            hits = np.nonzero(topics @ qtopic >= min_cos)[0]
            truth = frozenset(int(i) for i in hits)
        queries.append(Query(id=qid, topic=qtopic, truth=truth))

    return Corpus(papers, queries, dim, seed)


def write_corpus(corpus: Corpus, path) -> None:
    """Line-delimited text format; floats use 17 significant digits."""
    lines = [f"{corpus.dim} {corpus.n_papers} {corpus.n_queries} {corpus.seed}"]
    for p in corpus.papers:
        floats = " ".join(f"{x:.17g}" for x in p.topic)
        tail = (" " + " ".join(str(r) for r in p.refs)) if p.refs else ""
        lines.append(f"{p.id} {p.year_rank} {floats}{tail}")
    for q in corpus.queries:
        floats = " ".join(f"{x:.17g}" for x in q.topic)
        tail = " " + " ".join(str(t) for t in sorted(q.truth))
        lines.append(f"{q.id} {floats}{tail}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_corpus(path) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if not lines:
        raise NotFoundError(f"corpus file {path} is empty")
    dim, n_papers, n_queries, seed = (int(x) for x in lines[0].split())
    if len(lines) != 1 + n_papers + n_queries:
        raise InvariantError(
            f"corpus file {path}: expected {1 + n_papers + n_queries} lines, got {len(lines)}"
        )
    papers = []
    for ln in lines[1 : 1 + n_papers]:
        parts = ln.split()
        pid, rank = int(parts[0]), int(parts[1])
        topic = np.array([float(x) for x in parts[2 : 2 + dim]])
        refs = tuple(int(x) for x in parts[2 + dim :])
        papers.append(Paper(id=pid, topic=topic, refs=refs, year_rank=rank))
    queries = []
    for ln in lines[1 + n_papers :]:
        parts = ln.split()
        qid = int(parts[0])
        topic = np.array([float(x) for x in parts[1 : 1 + dim]])
        truth = frozenset(int(x) for x in parts[1 + dim :])
        queries.append(Query(id=qid, topic=topic, truth=truth))
    return Corpus(papers, queries, dim, seed)

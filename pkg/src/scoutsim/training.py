"""Sequence-level policy optimization over retrieval episodes.

Four interchangeable update rules share one collection pipeline:

* ``pspo``       — per-turn process rewards, GAE advantages, one importance
                   ratio per turn sequence, asymmetric clipping, critic.
* ``ppo_token``  — same rewards and critic, but ratios and clipping applied
                   per token with the turn advantage broadcast to its tokens.
* ``gspo``       — episode outcome reward only, group-mean baseline instead
                   of a critic, length-normalized sequence ratios.
* ``pspo_star``  — pspo machinery with each episode's rewards collapsed to
                   (0, ..., 0, sum): the total is preserved, the shaping lost.

Returns are normalized by running mean/variance statistics; the critic
regresses normalized returns, and advantages are computed in the same
normalized space.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus
from .env import EnvConfig, Environment
from .errors import ConfigError, InvariantError, NumericError
from .nets import (
    OptimizerState,
    ParamSet,
    init_optimizer,
    optimizer_step,
)
from .policy import (
    DecodeContext,
    SequencePolicy,
    TurnSample,
    ValueHead,
    feature_dim,
    featurize,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("pspo", "ppo_token", "gspo", "pspo_star")
EPS_NORM = 1e-8
RATIO_CLAMP = 20.0           # |log ratio| bound before exponentiation
METRICS_COLUMNS = (
    "step", "algorithm", "seed", "mean_return", "actor_grad_norm",
    "critic_loss", "clip_fraction", "kl", "wall_ms",
)


class ClampCounter:
    """Counts importance-ratio exponent clamps instead of failing the run."""

    def __init__(self):
        self.count = 0

    def bump(self) -> None:
        self.count += 1

    def reset(self) -> None:
        self.count = 0


ratio_clamp_events = ClampCounter()


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "pspo"
    gamma: float = 0.99
    lam: float = 0.95
    eps_low: float = 3e-4
    eps_high: float = 4e-4
    kl_coef: float = 0.001
    actor_lr: float = 1e-6
    critic_lr: float = 1e-5
    batch_episodes: int = 16
    group_size: int = 8          # episodes per query group (gspo only)
    pretrain_steps: int = 100
    total_steps: int = 300
    update_passes: int = 1       # gradient passes per collected batch
    hidden: int = 64
    n_search: int = 8            # search-direction tokens in the action vocab
    ratio_clamp: float = RATIO_CLAMP
    timing: bool = False         # real wall_ms per step vs constant 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        if self.eps_low <= 0 or self.eps_high <= 0:
            raise ConfigError("clip bounds eps_low and eps_high must be > 0")
        if self.eps_low >= 1.0:
            raise ConfigError(f"eps_low must be < 1, got {self.eps_low}")
        if self.kl_coef < 0:
            raise ConfigError(f"kl_coef must be >= 0, got {self.kl_coef}")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        for name in ("batch_episodes", "group_size", "update_passes", "hidden",
                     "n_search"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("pretrain_steps", "total_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.ratio_clamp <= 0:
            raise ConfigError(f"ratio_clamp must be > 0, got {self.ratio_clamp}")
        if self.algorithm == "gspo" and self.batch_episodes % self.group_size:
            raise ConfigError(
                f"batch_episodes={self.batch_episodes} must be a multiple of "
                f"group_size={self.group_size} for gspo"
            )


@dataclass(frozen=True)
class RunningStats:
    """Welford accumulator; population variance."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @property
    def variance(self) -> float:
        if self.count == 0:
            return 0.0
        return max(self.m2 / self.count, 0.0)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def update(self, values) -> "RunningStats":
        count, mean, m2 = self.count, self.mean, self.m2
        for x in np.asarray(values, dtype=float).ravel():
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += delta * (x - mean)
        return RunningStats(count, mean, m2)

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / count
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / count
        return RunningStats(count, mean, m2)


def compute_returns(rewards, gamma: float) -> np.ndarray:
    """Discounted suffix sums: R_t = r_t + gamma * R_{t+1}."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise InvariantError("rewards must be nonempty")
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def normalize_returns(
    stats: RunningStats, returns
) -> tuple[np.ndarray, RunningStats]:
    """Update the running stats with all values, then standardize with them."""
    returns = np.asarray(returns, dtype=float)
    stats = stats.update(returns)
    return (returns - stats.mean) / (stats.std + EPS_NORM), stats


def compute_gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates from one episode.

    `values` carries one more entry than `rewards`; the last entry is the
    terminal value (zero when the episode ended).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.size != rewards.size + 1:
        raise InvariantError(
            f"need len(values) == len(rewards) + 1, got {values.size} and "
            f"{rewards.size}"
        )
    adv = np.zeros_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


def sequence_ratio(
    new_logprob: float, old_logprob: float, clamp: float = RATIO_CLAMP
) -> float:
    """Importance ratio exp(new - old); the exponent is clamped to +-clamp
    and each clamp is counted rather than raised."""
    if not (math.isfinite(new_logprob) and math.isfinite(old_logprob)):
        raise NumericError(
            f"non-finite log-probs in ratio: new={new_logprob}, old={old_logprob}"
        )
    diff = new_logprob - old_logprob
    if abs(diff) > clamp:
        ratio_clamp_events.bump()
        log.warning("importance ratio exponent %.3g clamped to %.3g", diff, clamp)
        diff = math.copysign(clamp, diff)
    return math.exp(diff)


def actor_loss(
    ratios, advantages, eps_low: float, eps_high: float,
    kl_coef: float, kl_estimates,
) -> tuple[float, np.ndarray]:
    """Clipped surrogate plus KL penalty, with its exact gradient contract.

    Returns (loss, d loss / d new_logprob) per element, where each ratio is
    exp(new_logprob - old_logprob) and advantages are constants. In the
    regions where the clipped branch is active and binding the gradient is
    exactly zero.
    """
    ratios = np.asarray(ratios, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    kl_estimates = np.asarray(kl_estimates, dtype=float)
    if not ratios.shape == advantages.shape == kl_estimates.shape:
        raise InvariantError("ratios, advantages, kl_estimates must align")
    if ratios.size == 0:
        raise InvariantError("actor loss needs at least one element")
    if eps_low <= 0 or eps_high <= 0:
        raise ConfigError("clip bounds eps_low and eps_high must be > 0")
    n = ratios.size
    lo, hi = 1.0 - eps_low, 1.0 + eps_high
    total = 0.0
    grad = np.zeros(n)
    for i in range(n):
        w, a = ratios[i], advantages[i]
        surr = w * a
        surr_clip = min(max(w, lo), hi) * a
        if surr <= surr_clip:
            total += -surr
            grad[i] = -a * w / n
        else:
            total += -surr_clip
            grad[i] = 0.0
    loss = total / n + kl_coef * float(kl_estimates.mean())
    grad -= kl_coef / n
    return loss, grad


def clip_fraction(ratios, eps_low: float, eps_high: float) -> float:
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size == 0:
        return 0.0
    out = (ratios < 1.0 - eps_low) | (ratios > 1.0 + eps_high)
    return float(out.mean())


def critic_loss(values, targets) -> tuple[float, np.ndarray]:
    """Mean squared error and d loss / d value = 2(V - R)/n."""
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if values.shape != targets.shape:
        raise InvariantError("values and targets must align")
    if values.size == 0:
        raise InvariantError("critic loss needs at least one element")
    diff = values - targets
    return float(np.mean(diff * diff)), 2.0 * diff / values.size


def reshape_rewards_terminal(rewards) -> np.ndarray:
    """All reward mass moved to the final turn; the sum is bit-preserved."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    out[-1] = rewards.sum()
    return out


@dataclass(frozen=True)
class Actor:
    policy: SequencePolicy
    params: ParamSet


@dataclass(frozen=True)
class Critic:
    head: ValueHead
    params: ParamSet


@dataclass(frozen=True)
class TurnRecord:
    feats: np.ndarray
    sample: TurnSample
    reward: float
    value: float          # critic estimate at collection time


@dataclass(frozen=True)
class Trajectory:
    query_id: int
    turns: tuple[TurnRecord, ...]
    terminal_reason: str

    def __post_init__(self):
        if not self.turns:
            raise InvariantError("trajectory must contain at least one turn")
        if not all(math.isfinite(t.reward) for t in self.turns):
            raise InvariantError("trajectory rewards must be finite")

    @property
    def length(self) -> int:
        return len(self.turns)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.turns])

    @property
    def total_reward(self) -> float:
        return float(sum(t.reward for t in self.turns))


class EnvFactory:
    """Builds one fresh episode environment per call over a fixed query set."""

    def __init__(self, corpus: Corpus, query_ids, env_config: EnvConfig):
        self.corpus = corpus
        self.query_ids = tuple(query_ids)
        self.env_config = env_config
        if not self.query_ids:
            raise ConfigError("EnvFactory needs at least one query id")

    def sample(self, rng: np.random.Generator) -> Environment:
        qid = self.query_ids[int(rng.integers(len(self.query_ids)))]
        return Environment(self.corpus, qid, self.env_config)

    def for_query(self, query_id: int) -> Environment:
        return Environment(self.corpus, query_id, self.env_config)


def run_episode(
    env: Environment, actor: Actor, critic: Critic, rng: np.random.Generator
) -> Trajectory:
    obs = env.observe()
    turns: list[TurnRecord] = []
    while not env.done:
        feats = featurize(obs, env.config)
        ctx = DecodeContext.from_observation(env.query, obs)
        sample = actor.policy.sample_turn(actor.params, feats, ctx, rng)
        value, _ = critic.head.value(critic.params, feats)
        result = env.step(list(sample.calls))
        turns.append(TurnRecord(feats, sample, result.reward, value))
        obs = result.observation
    return Trajectory(
        query_id=env.query.id,
        turns=tuple(turns),
        terminal_reason=env.terminal_reason or "",
    )


def collect_batch(
    factory: EnvFactory,
    actor: Actor,
    critic: Critic,
    n_episodes: int,
    rng: np.random.Generator,
    group_size: int = 1,
) -> list[Trajectory]:
    """Roll out `n_episodes` full episodes with frozen actor/critic snapshots.

    With group_size > 1 the batch is organized as groups of that many
    episodes sharing one sampled query (outcome-baseline training needs
    groups; everything else uses group_size 1).
    """
    if n_episodes < 1:
        raise ConfigError(f"n_episodes must be >= 1, got {n_episodes}")
    if group_size < 1 or n_episodes % group_size:
        raise ConfigError(
            f"n_episodes={n_episodes} must be a positive multiple of "
            f"group_size={group_size}"
        )
    out: list[Trajectory] = []
    for _ in range(n_episodes // group_size):
        env = factory.sample(rng)
        out.append(run_episode(env, actor, critic, rng))
        for _ in range(group_size - 1):
            out.append(run_episode(factory.for_query(env.query.id), actor, critic, rng))
    return out


@dataclass(frozen=True)
class TurnBatchEntry:
    """One turn flattened out of its trajectory for the update phase."""

    feats: np.ndarray
    tokens: tuple[int, ...]
    old_token_logprobs: tuple[float, ...]
    advantage: float
    target: float               # critic regression target (normalized return)

    @property
    def old_logprob(self) -> float:
        return float(sum(self.old_token_logprobs))


def sequence_objective(
    policy: SequencePolicy, params: ParamSet, entries: list[TurnBatchEntry],
    cfg: TrainConfig,
) -> tuple[float, np.ndarray, dict]:
    """Turn-level clipped objective: one importance ratio per turn sequence."""
    ratios, advs, kls, new_lps = [], [], [], []
    for e in entries:
        new_lp = policy.sequence_logprob(params, e.feats, e.tokens)
        new_lps.append(new_lp)
        ratios.append(sequence_ratio(new_lp, e.old_logprob, cfg.ratio_clamp))
        advs.append(e.advantage)
        kls.append(e.old_logprob - new_lp)
    loss, dnew = actor_loss(
        ratios, advs, cfg.eps_low, cfg.eps_high, cfg.kl_coef, kls
    )
    grads = np.zeros(params.values.size)
    for e, w in zip(entries, dnew):
        if w != 0.0:
            grads += policy.logprob_grads(params, e.feats, e.tokens, w)
    info = {
        "clip_fraction": clip_fraction(ratios, cfg.eps_low, cfg.eps_high),
        "kl": float(np.mean(kls)),
    }
    return loss, grads, info


def token_objective(
    policy: SequencePolicy, params: ParamSet, entries: list[TurnBatchEntry],
    cfg: TrainConfig,
) -> tuple[float, np.ndarray, dict]:
    """Token-level clipped objective: the turn advantage is broadcast to
    every token of the turn and ratios/clipping apply per token."""
    ratios, advs, kls = [], [], []
    per_entry_new = []
    for e in entries:
        new_lp = policy.token_logprobs(params, e.feats, e.tokens)
        per_entry_new.append(new_lp)
        for i in range(len(e.tokens)):
            ratios.append(
                sequence_ratio(
                    float(new_lp[i]), e.old_token_logprobs[i], cfg.ratio_clamp
                )
            )
            advs.append(e.advantage)
            kls.append(e.old_token_logprobs[i] - float(new_lp[i]))
    loss, dnew = actor_loss(
        ratios, advs, cfg.eps_low, cfg.eps_high, cfg.kl_coef, kls
    )
    grads = np.zeros(params.values.size)
    pos = 0
    for e in entries:
        weights = dnew[pos:pos + len(e.tokens)]
        pos += len(e.tokens)
        if np.any(weights != 0.0):
            grads += policy.logprob_grads(params, e.feats, e.tokens, weights)
    info = {
        "clip_fraction": clip_fraction(ratios, cfg.eps_low, cfg.eps_high),
        "kl": float(np.mean(kls)),
    }
    return loss, grads, info


def length_normalized_objective(
    policy: SequencePolicy, params: ParamSet, entries: list[TurnBatchEntry],
    cfg: TrainConfig,
) -> tuple[float, np.ndarray, dict]:
    """Sequence objective with length-normalized ratios: the ratio is the
    geometric mean of the turn's token ratios, exp((new - old) / n_tokens)."""
    ratios, advs, kls, lengths = [], [], [], []
    for e in entries:
        new_lp = policy.sequence_logprob(params, e.feats, e.tokens)
        n_tok = len(e.tokens)
        ratios.append(
            sequence_ratio(new_lp / n_tok, e.old_logprob / n_tok, cfg.ratio_clamp)
        )
        advs.append(e.advantage)
        kls.append(e.old_logprob - new_lp)
        lengths.append(n_tok)
    # The KL estimate lives on unnormalized log-probs, so take the clipped
    # part's gradient alone (w.r.t. the normalized log-ratio), chain it
    # through the 1/n_tok, and add the KL penalty's own gradient unscaled.
    n = len(entries)
    loss_pol, dnorm = actor_loss(
        ratios, advs, cfg.eps_low, cfg.eps_high, 0.0, np.zeros(n)
    )
    loss = loss_pol + cfg.kl_coef * float(np.mean(kls))
    grads = np.zeros(params.values.size)
    for e, g, n_tok in zip(entries, dnorm, lengths):
        w = g / n_tok - cfg.kl_coef / n
        if w != 0.0:
            grads += policy.logprob_grads(params, e.feats, e.tokens, w)
    info = {
        "clip_fraction": clip_fraction(ratios, cfg.eps_low, cfg.eps_high),
        "kl": float(np.mean(kls)),
    }
    return loss, grads, info


def critic_objective(
    head: ValueHead, params: ParamSet, entries: list[TurnBatchEntry]
) -> tuple[float, np.ndarray]:
    values, caches = [], []
    for e in entries:
        v, cache = head.value(params, e.feats)
        values.append(v)
        caches.append(cache)
    loss, dvalues = critic_loss(values, [e.target for e in entries])
    grads = np.zeros(params.values.size)
    for cache, dv in zip(caches, dvalues):
        grads += head.value_grads(params, cache, float(dv))
    return loss, grads


@dataclass
class MetricsRow:
    step: int
    algorithm: str
    seed: int
    mean_return: float
    actor_grad_norm: float
    critic_loss: float
    clip_fraction: float
    kl: float
    wall_ms: float


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                (
                    str(r.step), r.algorithm, str(r.seed),
                    format_float(r.mean_return), format_float(r.actor_grad_norm),
                    format_float(r.critic_loss), format_float(r.clip_fraction),
                    format_float(r.kl), format_float(r.wall_ms),
                )
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if lines[0] != ",".join(METRICS_COLUMNS):
        raise InvariantError(f"unexpected metrics header in {path}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append(
            MetricsRow(
                step=int(parts[0]), algorithm=parts[1], seed=int(parts[2]),
                mean_return=float(parts[3]), actor_grad_norm=float(parts[4]),
                critic_loss=float(parts[5]), clip_fraction=float(parts[6]),
                kl=float(parts[7]), wall_ms=float(parts[8]),
            )
        )
    return rows


def value_pretrain(
    factory: EnvFactory,
    actor: Actor,
    critic: Critic,
    optimizer: OptimizerState,
    steps: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    stats: RunningStats,
) -> tuple[Critic, OptimizerState, RunningStats, list[float]]:
    """Fit the critic to normalized returns under the frozen actor.

    The actor is only sampled from, never updated; its parameters are
    bit-identical before and after.
    """
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    losses: list[float] = []
    for _ in range(steps):
        batch = collect_batch(factory, actor, critic, cfg.batch_episodes, rng)
        flat_returns = []
        spans = []
        for traj in batch:
            r = compute_returns(traj.rewards, cfg.gamma)
            spans.append((len(flat_returns), len(flat_returns) + traj.length))
            flat_returns.extend(r)
        normalized, stats = normalize_returns(stats, flat_returns)
        entries = []
        for traj, (a, b) in zip(batch, spans):
            for turn, target in zip(traj.turns, normalized[a:b]):
                entries.append(
                    TurnBatchEntry(
                        feats=turn.feats,
                        tokens=turn.sample.tokens,
                        old_token_logprobs=turn.sample.token_logprobs,
                        advantage=0.0,
                        target=float(target),
                    )
                )
        loss, grads = critic_objective(critic.head, critic.params, entries)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite critic loss {loss} during pretraining")
        new_params, optimizer = optimizer_step(critic.params, grads, optimizer)
        critic = replace(critic, params=new_params)
        losses.append(loss)
    return critic, optimizer, stats, losses


@dataclass
class TrainResult:
    actor: Actor
    critic: Critic
    metrics: list[MetricsRow]
    pretrain_losses: list[float]
    stats: RunningStats
    config: TrainConfig


class Trainer:
    """Owns parameters, optimizers, and running statistics for one run."""

    OBJECTIVES = {
        "pspo": sequence_objective,
        "ppo_token": token_objective,
        "gspo": length_normalized_objective,
        "pspo_star": sequence_objective,
    }

    def __init__(
        self,
        corpus: Corpus,
        query_ids,
        train_config: TrainConfig,
        env_config: EnvConfig | None = None,
        seed: int = 0,
    ):
        self.cfg = train_config
        self.env_config = env_config or EnvConfig()
        self.seed = seed
        self.factory = EnvFactory(corpus, query_ids, self.env_config)
        hidden = (train_config.hidden,)
        policy = SequencePolicy(
            self.env_config, corpus.dim, hidden, train_config.n_search
        )
        head = ValueHead(feature_dim(self.env_config), hidden)
        self.actor = Actor(policy, policy.init_params(seed))
        self.critic = Critic(head, head.init_params(seed + 10_000))
        self.actor_opt = init_optimizer(self.actor.params, train_config.actor_lr)
        self.critic_opt = init_optimizer(self.critic.params, train_config.critic_lr)
        self.stats = RunningStats()
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.metrics: list[MetricsRow] = []
        self.pretrain_losses: list[float] = []
        self.diagnostic: dict | None = None

    def pretrain(self) -> list[float]:
        before = self.actor.params.checksum()
        self.critic, self.critic_opt, self.stats, losses = value_pretrain(
            self.factory, self.actor, self.critic, self.critic_opt,
            self.cfg.pretrain_steps, self.cfg, self.rng, self.stats,
        )
        if self.actor.params.checksum() != before:
            raise InvariantError("value pretraining mutated actor parameters")
        self.pretrain_losses = losses
        return losses

    def _episode_rewards(self, traj: Trajectory) -> np.ndarray:
        if self.cfg.algorithm == "pspo_star":
            return reshape_rewards_terminal(traj.rewards)
        return traj.rewards

    def _entries_with_critic(self, batch: list[Trajectory]) -> list[TurnBatchEntry]:
        """Advantage/target assembly for the critic-based algorithms."""
        flat_returns: list[float] = []
        spans = []
        for traj in batch:
            rewards = self._episode_rewards(traj)
            r = compute_returns(rewards, self.cfg.gamma)
            spans.append((len(flat_returns), len(flat_returns) + traj.length))
            flat_returns.extend(r)
        normalized, self.stats = normalize_returns(self.stats, flat_returns)
        entries: list[TurnBatchEntry] = []
        for traj, (a, b) in zip(batch, spans):
            norm_ret = normalized[a:b]
            # Per-turn rewards consistent with the normalized return space:
            # r'_t = G'_t - gamma * G'_{t+1}, so their discounted sums are
            # exactly the normalized returns the critic regresses.
            shifted = np.append(norm_ret[1:], 0.0)
            norm_rewards = norm_ret - self.cfg.gamma * shifted
            values = np.append([t.value for t in traj.turns], 0.0)
            advantages = compute_gae(
                norm_rewards, values, self.cfg.gamma, self.cfg.lam
            )
            for turn, adv, target in zip(traj.turns, advantages, norm_ret):
                entries.append(
                    TurnBatchEntry(
                        feats=turn.feats,
                        tokens=turn.sample.tokens,
                        old_token_logprobs=turn.sample.token_logprobs,
                        advantage=float(adv),
                        target=float(target),
                    )
                )
        return entries

    def _entries_group_baseline(self, batch: list[Trajectory]) -> list[TurnBatchEntry]:
        """Outcome reward with a per-query group-mean baseline; no critic."""
        g = self.cfg.group_size
        entries: list[TurnBatchEntry] = []
        for start in range(0, len(batch), g):
            group = batch[start:start + g]
            outcomes = np.array([t.total_reward for t in group])
            baselined = outcomes - outcomes.mean()
            for traj, adv in zip(group, baselined):
                for turn in traj.turns:
                    entries.append(
                        TurnBatchEntry(
                            feats=turn.feats,
                            tokens=turn.sample.tokens,
                            old_token_logprobs=turn.sample.token_logprobs,
                            advantage=float(adv),
                            target=0.0,
                        )
                    )
        return entries

    def train_step(self, step: int) -> MetricsRow:
        cfg = self.cfg
        t0 = time.perf_counter()
        group = cfg.group_size if cfg.algorithm == "gspo" else 1
        batch = collect_batch(
            self.factory, self.actor, self.critic, cfg.batch_episodes,
            self.rng, group_size=group,
        )
        if cfg.algorithm == "gspo":
            entries = self._entries_group_baseline(batch)
        else:
            entries = self._entries_with_critic(batch)

        objective = self.OBJECTIVES[cfg.algorithm]
        a_loss = c_loss = 0.0
        grad_norm = 0.0
        info = {"clip_fraction": 0.0, "kl": 0.0}
        # Re-use passes apply to the actor only: importance ratios correct the
        # actor for off-policy drift, while the critic regresses fixed targets
        # and gets exactly one fit per collected batch.
        for _ in range(cfg.update_passes):
            a_loss, grads, info = objective(
                self.actor.policy, self.actor.params, entries, cfg
            )
            if not math.isfinite(a_loss):
                self._halt(step, "actor", a_loss)
            grad_norm = float(np.linalg.norm(grads))
            new_params, self.actor_opt = optimizer_step(
                self.actor.params, grads, self.actor_opt
            )
            self.actor = replace(self.actor, params=new_params)
        if cfg.algorithm != "gspo":
            c_loss, c_grads = critic_objective(
                self.critic.head, self.critic.params, entries
            )
            if not math.isfinite(c_loss):
                self._halt(step, "critic", c_loss)
            new_cparams, self.critic_opt = optimizer_step(
                self.critic.params, c_grads, self.critic_opt
            )
            self.critic = replace(self.critic, params=new_cparams)

        wall_ms = (time.perf_counter() - t0) * 1000.0 if cfg.timing else 0.0
        row = MetricsRow(
            step=step,
            algorithm=cfg.algorithm,
            seed=self.seed,
            mean_return=float(np.mean([t.total_reward for t in batch])),
            actor_grad_norm=grad_norm,
            critic_loss=c_loss,
            clip_fraction=info["clip_fraction"],
            kl=info["kl"],
            wall_ms=wall_ms,
        )
        self.metrics.append(row)
        return row

    def _halt(self, step: int, which: str, loss: float):
        self.diagnostic = {
            "step": step,
            "loss": loss,
            "which": which,
            "algorithm": self.cfg.algorithm,
            "seed": self.seed,
            "actor_checksum": self.actor.params.checksum(),
            "critic_checksum": self.critic.params.checksum(),
            "ratio_clamps": ratio_clamp_events.count,
        }
        raise NumericError(
            f"non-finite {which} loss {loss} at step {step}; diagnostic "
            f"snapshot retained on the trainer"
        )

    def run(self) -> TrainResult:
        if self.cfg.algorithm != "gspo":
            self.pretrain()
        for step in range(self.cfg.total_steps):
            self.train_step(step)
        return TrainResult(
            actor=self.actor,
            critic=self.critic,
            metrics=self.metrics,
            pretrain_losses=self.pretrain_losses,
            stats=self.stats,
            config=self.cfg,
        )


def train(
    corpus: Corpus,
    config: TrainConfig,
    seed: int = 0,
    query_ids=None,
    env_config: EnvConfig | None = None,
) -> TrainResult:
    """Full run: value pretraining (critic algorithms) then training steps."""
    if query_ids is None:
        query_ids = range(corpus.n_queries)
    trainer = Trainer(corpus, query_ids, config, env_config, seed)
    return trainer.run()

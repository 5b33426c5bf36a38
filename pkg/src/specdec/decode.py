"""Distribution warping, sampling, and the two generation loops.

All probability and acceptance math runs in float64 regardless of model
precision; acceptance ratios are numerically sensitive. Sampling is inverse
CDF in ascending token-id order, so a token choice is a pure function of
(distribution, uniform draw) and runs reproduce bit-for-bit from a seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .kv_cache import KVCache
from .models import Model
from .rng import Rng

_DEGENERATE_SUM = 1.0 - 1e-6
_RESIDUAL_FLOOR = 1e-12


def softmax_with_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax; temperature 0 is a one-hot at the argmax.

    Ties at the maximum resolve to the lowest token id.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        dist = np.zeros_like(logits)
        dist[int(np.argmax(logits))] = 1.0
        return dist
    shifted = (logits - logits.max()) / temperature
    dist = np.exp(shifted)
    dist /= dist.sum()
    return dist


def top_p_filter(dist: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest probability-mass-p prefix of tokens and renormalize.

    Tokens sort by descending probability, ties by ascending id; the token
    that crosses the threshold is always kept. p = 1 is the identity.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"top-p must be in (0, 1], got {p}")
    dist = np.asarray(dist, dtype=np.float64)
    if p == 1.0:
        return dist.copy()
    order = np.lexsort((np.arange(dist.shape[0]), -dist))
    cumulative = np.cumsum(dist[order])
    crossing = np.nonzero(cumulative >= p)[0]
    keep = crossing[0] + 1 if crossing.size else dist.shape[0]
    out = np.zeros_like(dist)
    kept = order[:keep]
    out[kept] = dist[kept]
    out /= out.sum()
    return out


def sample_from_dist(dist: np.ndarray, rng: Rng) -> int:
    """Inverse-CDF sample: smallest id whose cumulative mass exceeds the draw."""
    dist = np.asarray(dist, dtype=np.float64)
    cumulative = np.cumsum(dist)
    if cumulative[-1] < _DEGENERATE_SUM:
        raise ValueError(f"degenerate distribution: mass {cumulative[-1]} < 1")
    u = rng.next_uniform()
    idx = int(np.searchsorted(cumulative, u, side="right"))
    if idx >= dist.shape[0]:
        idx = int(np.flatnonzero(dist)[-1])
    return idx


def accept_probability(q_target: np.ndarray, p_draft: np.ndarray, token: int) -> float:
    """min(1, q/p) at the proposed token: the chance the target keeps it."""
    p = float(p_draft[token])
    if p <= 0.0:
        raise ValueError(
            f"token {token} has zero draft probability; it cannot have been proposed"
        )
    return min(1.0, float(q_target[token]) / p)


def residual_distribution(q_target: np.ndarray, p_draft: np.ndarray) -> np.ndarray:
    """Replacement distribution after a rejection: normalize(max(0, q - p)).

    Sampling a rejected position from this residual makes the overall
    emission marginal exactly the target distribution. When q and p are
    effectively identical the residual mass vanishes; return q (rejection
    there has probability zero, the fallback only absorbs float residue).
    """
    q = np.asarray(q_target, dtype=np.float64)
    residual = np.maximum(0.0, q - np.asarray(p_draft, dtype=np.float64))
    mass = residual.sum()
    if mass < _RESIDUAL_FLOOR:
        return q.copy()
    return residual / mass


@dataclass
class GenerationConfig:
    mode: str = "autoregressive"
    k: int = 5
    max_new_tokens: int = 40
    temperature: float = 0.8
    top_p: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("autoregressive", "speculative"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if not (np.isfinite(self.temperature) and self.temperature >= 0):
            raise ValueError(f"temperature must be finite and >= 0, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top-p must be in (0, 1], got {self.top_p}")


@dataclass
class GenerationStats:
    draft_forward_calls: int = 0
    target_forward_calls: int = 0
    tokens_proposed: int = 0
    tokens_accepted: int = 0
    tokens_rejected: int = 0
    bonus_tokens: int = 0
    wall_time_total: float = 0.0
    wall_time_draft: float = 0.0
    wall_time_target: float = 0.0

    @property
    def acceptance_rate(self) -> float | None:
        if self.tokens_proposed == 0:
            return None
        return self.tokens_accepted / self.tokens_proposed

    def as_lines(self) -> list[str]:
        return [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]


def _warp(logits_row: np.ndarray, cfg: GenerationConfig) -> np.ndarray:
    return top_p_filter(softmax_with_temperature(logits_row, cfg.temperature), cfg.top_p)


def _check_prompt(prompt: Sequence[int]) -> None:
    if len(prompt) == 0:
        raise ValueError("prompt must be non-empty (at least the BOS token)")


def autoregressive_generate(
    model: Model,
    prompt: Sequence[int],
    cfg: GenerationConfig,
    rng: Rng | None = None,
) -> tuple[list[int], GenerationStats]:
    """Generate one token per forward pass, reusing the cache for the prefix.

    The prompt is absorbed in a single batched pass; each emitted token is
    then fed back as a one-token forward. Exactly max_new_tokens tokens come
    out and the model sees max_new_tokens + 1 forward calls.
    """
    _check_prompt(prompt)
    if len(prompt) + cfg.max_new_tokens > model.max_context:
        raise ValueError(
            f"prompt ({len(prompt)}) plus max_new_tokens ({cfg.max_new_tokens}) "
            f"exceeds max_context {model.max_context}"
        )
    if rng is None:
        rng = Rng(cfg.seed)
    stats = GenerationStats()
    started = time.perf_counter()
    cache = model.new_cache()
    greedy = cfg.temperature == 0.0

    def forward(tokens: Sequence[int]) -> np.ndarray:
        t0 = time.perf_counter()
        rows = model.forward(cache, tokens)
        stats.wall_time_target += time.perf_counter() - t0
        stats.target_forward_calls += 1
        return rows

    last_row = forward(prompt)[-1]
    out: list[int] = []
    for _ in range(cfg.max_new_tokens):
        dist = _warp(last_row, cfg)
        token = int(np.argmax(dist)) if greedy else sample_from_dist(dist, rng)
        out.append(token)
        last_row = forward([token])[0]
    stats.wall_time_total = time.perf_counter() - started
    return out, stats


def speculative_generate(
    target: Model,
    draft: Model,
    prompt: Sequence[int],
    cfg: GenerationConfig,
    rng: Rng | None = None,
    target_cache: KVCache | None = None,
    draft_cache: KVCache | None = None,
) -> tuple[list[int], GenerationStats]:
    """Draft-and-verify generation recovering the target's warped distribution.

    Each cycle drafts up to k tokens one at a time, verifies them with a
    single batched target pass, accepts each proposal with probability
    min(1, q/p), resamples the first rejection from the residual, and takes a
    bonus token from the target's extra row when everything was accepted.
    Both caches then roll back to the last verified position; the newest
    token stays pending and gets its cache entries on the next cycle's
    forward, so a rejected tail never costs an extra pass.

    Draw order per cycle is fixed (k' proposal draws, then acceptance draws,
    then at most one residual or bonus draw). At temperature 0 acceptance is
    exact argmax match and no draws are consumed.

    Fresh empty caches may be supplied by the caller (they are left in their
    final rolled-back state, which callers can inspect or reuse).
    """
    _check_prompt(prompt)
    if target.vocab_size != draft.vocab_size:
        raise ValueError(
            f"vocabulary mismatch: target {target.vocab_size}, draft {draft.vocab_size}"
        )
    budget = len(prompt) + cfg.max_new_tokens + cfg.k + 1
    for name, model in (("target", target), ("draft", draft)):
        if budget > model.max_context:
            raise ValueError(
                f"prompt plus generation budget ({budget}) exceeds "
                f"{name} max_context {model.max_context}"
            )
    if rng is None:
        rng = Rng(cfg.seed)
    stats = GenerationStats()
    started = time.perf_counter()
    if target_cache is None:
        target_cache = target.new_cache()
    if draft_cache is None:
        draft_cache = draft.new_cache()
    if target_cache.cached_len or draft_cache.cached_len:
        raise ValueError("caller-supplied caches must be empty")
    greedy = cfg.temperature == 0.0

    def draft_forward(tokens: Sequence[int]) -> np.ndarray:
        t0 = time.perf_counter()
        rows = draft.forward(draft_cache, tokens)
        stats.wall_time_draft += time.perf_counter() - t0
        stats.draft_forward_calls += 1
        return rows

    def target_forward(tokens: Sequence[int]) -> np.ndarray:
        t0 = time.perf_counter()
        rows = target.forward(target_cache, tokens)
        stats.wall_time_target += time.perf_counter() - t0
        stats.target_forward_calls += 1
        return rows

    # Committed sequence; the final entry is always the pending token whose
    # cache entries have not been computed yet.
    seq = list(prompt)
    if len(seq) > 1:
        draft_forward(seq[:-1])
        target_forward(seq[:-1])

    emitted = 0
    while emitted < cfg.max_new_tokens:
        remaining = cfg.max_new_tokens - emitted
        k_prime = min(cfg.k, remaining)
        base = len(seq) - 1

        # Draft phase: the first forward also absorbs any committed tokens the
        # draft cache is missing after the previous rollback.
        proposals: list[int] = []
        proposal_dists: list[np.ndarray] = []
        row = draft_forward(seq[draft_cache.cached_len :])[-1]
        for i in range(k_prime):
            dist = _warp(row, cfg)
            token = int(np.argmax(dist)) if greedy else sample_from_dist(dist, rng)
            proposals.append(token)
            proposal_dists.append(dist)
            if i + 1 < k_prime:
                row = draft_forward([token])[0]
        stats.tokens_proposed += k_prime

        # Verify phase: one batched target pass over the un-absorbed committed
        # suffix plus every proposal, yielding k' + 1 usable rows.
        absorb = seq[target_cache.cached_len :]
        rows = target_forward(absorb + proposals)
        offset = len(absorb) - 1
        target_dists = [_warp(rows[offset + i], cfg) for i in range(k_prime + 1)]

        accepted = 0
        cycle_tokens: list[int] = []
        rejected = False
        for i in range(k_prime):
            q_i, p_i, token = target_dists[i], proposal_dists[i], proposals[i]
            if greedy:
                keep = token == int(np.argmax(q_i))
            else:
                keep = rng.next_uniform() < accept_probability(q_i, p_i, token)
            if not keep:
                rejected = True
                stats.tokens_rejected += 1
                if greedy:
                    replacement = int(np.argmax(q_i))
                else:
                    replacement = sample_from_dist(residual_distribution(q_i, p_i), rng)
                cycle_tokens.append(replacement)
                break
            accepted += 1
            stats.tokens_accepted += 1
            cycle_tokens.append(token)

        if not rejected and k_prime < remaining:
            bonus_dist = target_dists[k_prime]
            bonus = int(np.argmax(bonus_dist)) if greedy else sample_from_dist(bonus_dist, rng)
            cycle_tokens.append(bonus)
            stats.bonus_tokens += 1

        # Rollback: keep cache entries only up to the last fully verified
        # position; the newest emitted token becomes the pending one.
        new_len = base + accepted
        target_cache.truncate(new_len)
        draft_cache.truncate(new_len)

        seq.extend(cycle_tokens)
        emitted += len(cycle_tokens)

    stats.wall_time_total = time.perf_counter() - started
    return seq[len(prompt) :], stats

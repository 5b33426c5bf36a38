"""Shared fixtures and independent reference oracles."""

import numpy as np
import pytest

from specdec import (
    GenerationConfig,
    Rng,
    TinyTransformerConfig,
    accept_probability,
    bigram_train,
    init_tiny_transformer,
    residual_distribution,
    sample_from_dist,
    softmax_with_temperature,
    top_p_filter,
)

TINY_CFG = TinyTransformerConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, max_context=64)
SMALL_CFG = TinyTransformerConfig(d_model=32, n_layers=2, n_heads=2, d_ff=64, max_context=160)
FOX_CORPUS = b"the quick brown fox jumps over the lazy dog " * 4


@pytest.fixture(scope="session")
def tiny_model():
    return init_tiny_transformer(TINY_CFG, 7)


@pytest.fixture(scope="session")
def small_model():
    return init_tiny_transformer(SMALL_CFG, 3)


@pytest.fixture(scope="session")
def fox_bigram():
    return bigram_train(FOX_CORPUS, 1.0, max_context=256)


def emission_marginal(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Brute-force one-step emission marginal of the accept/resample scheme.

    Enumerates every token: the proposal lands on x with probability p(x) and
    survives with accept_probability; all rejected mass is redistributed by
    the residual. Integrates analytically over the uniform draw, so this is
    an independent check that the marginal equals the target distribution.
    """
    alphas = np.array([accept_probability(q, p, t) for t in range(len(q))])
    reject_mass = float(np.sum(p * (1.0 - alphas)))
    return p * alphas + reject_mass * residual_distribution(q, p)


def no_cache_autoregressive(model, prompt, cfg: GenerationConfig, rng: Rng | None = None):
    """Reference decoder that re-runs the whole prefix on a fresh cache each
    step, consuming the same RNG draws as the cached path."""
    if rng is None:
        rng = Rng(cfg.seed)
    seq = list(prompt)
    out = []
    for _ in range(cfg.max_new_tokens):
        cache = model.new_cache()
        rows = model.forward(cache, seq)
        dist = top_p_filter(softmax_with_temperature(rows[-1], cfg.temperature), cfg.top_p)
        token = int(np.argmax(dist)) if cfg.temperature == 0 else sample_from_dist(dist, rng)
        out.append(token)
        seq.append(token)
    return out

"""Speculative decoding engine with explicit KV-cache management.

A draft model proposes tokens cheaply; a target model verifies a batch of
them in one forward pass, accepting or rejecting each so that the emitted
stream follows the target's own distribution. Both decoding modes share the
same deterministic models, caches, and RNG stream, and a benchmark harness
measures the resulting latency trade-off.
"""

from .bench import (
    BenchRecord,
    CostModelParams,
    Scenario,
    emit_report,
    expected_speedup,
    expected_tokens_per_cycle,
    load_scenarios,
    records_from_json,
    run_scenario,
)
from .decode import (
    GenerationConfig,
    GenerationStats,
    accept_probability,
    autoregressive_generate,
    residual_distribution,
    sample_from_dist,
    softmax_with_temperature,
    speculative_generate,
    top_p_filter,
)
from .kv_cache import KVCache, caches_equal
from .models import (
    BOS_ID,
    VOCAB_SIZE,
    BigramModel,
    ModelFileError,
    TinyTransformer,
    TinyTransformerConfig,
    bigram_train,
    detokenize,
    init_tiny_transformer,
    load_bigram,
    load_model,
    resolve_model_ref,
    save_bigram,
    save_model,
    tokenize,
)
from .plots import render_report_figures
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "BOS_ID",
    "VOCAB_SIZE",
    "BenchRecord",
    "BigramModel",
    "CostModelParams",
    "GenerationConfig",
    "GenerationStats",
    "KVCache",
    "ModelFileError",
    "Rng",
    "Scenario",
    "TinyTransformer",
    "TinyTransformerConfig",
    "accept_probability",
    "autoregressive_generate",
    "bigram_train",
    "caches_equal",
    "detokenize",
    "emit_report",
    "expected_speedup",
    "expected_tokens_per_cycle",
    "init_tiny_transformer",
    "load_bigram",
    "load_model",
    "load_scenarios",
    "records_from_json",
    "render_report_figures",
    "resolve_model_ref",
    "run_scenario",
    "sample_from_dist",
    "save_bigram",
    "save_model",
    "softmax_with_temperature",
    "speculative_generate",
    "tokenize",
    "top_p_filter",
]

"""Token-probability models behind a common forward contract.

Two built-in models share the interface: a tiny decoder-only transformer
with a real per-layer KV cache, and a byte-level bigram model whose "cache"
is length bookkeeping only (its conditionals depend on one token). Both are
deterministic: identical weights, cache state and inputs give bit-identical
logits, which is what makes cache rollback and replay testable.

Weight matrices are stored as (input_dim, output_dim) and applied as
``x @ W``; model arithmetic is float32 throughout the transformer.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .kv_cache import KVCache
from .rng import Rng

VOCAB_SIZE = 257
BOS_ID = 256

_TTWF_MAGIC = b"TTWF"
_TTWF_VERSION = 1
_LN_EPS = np.float32(1e-5)


class ModelFileError(Exception):
    """A model file is missing, malformed, or inconsistent with its header."""


def tokenize(data: bytes) -> list[int]:
    """Byte-level tokens: BOS followed by one token per input byte."""
    return [BOS_ID] + list(data)


def detokenize(tokens: Sequence[int]) -> bytes:
    """Inverse of tokenize; BOS tokens are dropped wherever they occur."""
    out = bytearray()
    for t in tokens:
        if not 0 <= t < VOCAB_SIZE:
            raise ValueError(f"token id {t} outside vocabulary [0, {VOCAB_SIZE})")
        if t != BOS_ID:
            out.append(t)
    return bytes(out)


class Model(Protocol):
    """Contract shared by draft and target models."""

    vocab_size: int
    max_context: int

    def new_cache(self) -> KVCache: ...

    def forward(self, cache: KVCache, new_tokens: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class TinyTransformerConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    max_context: int
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_context"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size must be {VOCAB_SIZE}, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def num_params(self) -> int:
        per_layer = 4 * self.d_model**2 + 2 * self.d_model * self.d_ff + 4 * self.d_model
        return (
            self.vocab_size * self.d_model
            + self.n_layers * per_layer
            + 2 * self.d_model
            + self.d_model * self.vocab_size
        )


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean()
    var = np.square(x - mu).mean()
    return (x - mu) / np.sqrt(var + _LN_EPS) * gain + bias


def _positional_encoding(max_context: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_context, dtype=np.float64)[:, None]
    dims = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(dims / 2.0) / d_model)
    table = np.where(dims % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


class TinyTransformer:
    """Decoder-only transformer: pre-LayerNorm blocks, sinusoidal positions,
    causal attention over cached plus current positions, ReLU MLP.

    forward() processes one position at a time internally so that a token's
    key/value entries are bit-identical no matter how the input sequence was
    chunked across calls; that property is what makes truncate-then-replay an
    exact rollback.
    """

    def __init__(
        self,
        config: TinyTransformerConfig,
        embedding: np.ndarray,
        layers: list[LayerWeights],
        final_gain: np.ndarray,
        final_bias: np.ndarray,
        unembedding: np.ndarray,
    ):
        self.config = config
        self.embedding = embedding
        self.layers = layers
        self.final_gain = final_gain
        self.final_bias = final_bias
        self.unembedding = unembedding
        self.vocab_size = config.vocab_size
        self.max_context = config.max_context
        self._pe = _positional_encoding(config.max_context, config.d_model)
        self._attn_scale = np.float32(1.0 / math.sqrt(config.head_dim))

    def new_cache(self) -> KVCache:
        cfg = self.config
        return KVCache(cfg.n_layers, cfg.n_heads, cfg.head_dim, cfg.max_context)

    def _check_cache(self, cache: KVCache) -> None:
        cfg = self.config
        if (cache.n_layers, cache.n_heads, cache.head_dim) != (
            cfg.n_layers,
            cfg.n_heads,
            cfg.head_dim,
        ):
            raise ValueError(
                "cache shape "
                f"({cache.n_layers}, {cache.n_heads}, {cache.head_dim}) does not "
                f"match model ({cfg.n_layers}, {cfg.n_heads}, {cfg.head_dim})"
            )

    def forward(self, cache: KVCache, new_tokens: Sequence[int]) -> np.ndarray:
        """Extend the cache by the new tokens and return one logits row each.

        Row i holds the logits for the position after the cached prefix plus
        new_tokens[:i + 1].
        """
        if len(new_tokens) == 0:
            raise ValueError("new_tokens must be non-empty")
        self._check_cache(cache)
        cfg = self.config
        if cache.cached_len + len(new_tokens) > cfg.max_context:
            raise ValueError(
                f"context overflow: {cache.cached_len} cached + "
                f"{len(new_tokens)} new tokens exceeds max_context {cfg.max_context}"
            )
        n_heads, head_dim = cfg.n_heads, cfg.head_dim
        out = np.empty((len(new_tokens), cfg.vocab_size), dtype=np.float32)
        for i, token in enumerate(new_tokens):
            if not 0 <= token < cfg.vocab_size:
                raise ValueError(f"token id {token} outside vocabulary")
            pos = cache.cached_len
            h = self.embedding[token] + self._pe[pos]
            for layer_idx, lw in enumerate(self.layers):
                hn = _layer_norm(h, lw.ln1_gain, lw.ln1_bias)
                q = (hn @ lw.wq).reshape(n_heads, head_dim)
                k = (hn @ lw.wk).reshape(n_heads, head_dim)
                v = (hn @ lw.wv).reshape(n_heads, head_dim)
                cache.store(layer_idx, k, v)
                keys = cache.keys[layer_idx][:, : pos + 1, :]
                vals = cache.values[layer_idx][:, : pos + 1, :]
                scores = np.einsum("hd,hpd->hp", q, keys) * self._attn_scale
                scores -= scores.max(axis=1, keepdims=True)
                weights = np.exp(scores)
                weights /= weights.sum(axis=1, keepdims=True)
                ctx = np.einsum("hp,hpd->hd", weights, vals)
                h = h + ctx.reshape(cfg.d_model) @ lw.wo
                hn2 = _layer_norm(h, lw.ln2_gain, lw.ln2_bias)
                h = h + np.maximum(hn2 @ lw.w1, np.float32(0.0)) @ lw.w2
            out[i] = _layer_norm(h, self.final_gain, self.final_bias) @ self.unembedding
            cache.advance(1)
        return out


def _draw_tensor(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    n = int(np.prod(shape))
    u = rng.next_block(n)
    w = (u - 0.5) * (2.0 / math.sqrt(fan_in))
    return w.astype(np.float32).reshape(shape)


def init_tiny_transformer(config: TinyTransformerConfig, seed: int) -> TinyTransformer:
    """Deterministically initialize weights from one SplitMix64 stream.

    Elements are drawn sequentially (row-major, tensors in serialization
    order) as (u - 0.5) * 2 / sqrt(fan_in) with fan_in the input dimension,
    so identical (config, seed) pairs give bit-identical models. LayerNorm
    gains start at 1 and biases at 0; they consume no draws.
    """
    rng = Rng(seed)
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    embedding = _draw_tensor(rng, (v, d), fan_in=v)
    layers = []
    for _ in range(config.n_layers):
        layers.append(
            LayerWeights(
                wq=_draw_tensor(rng, (d, d), fan_in=d),
                wk=_draw_tensor(rng, (d, d), fan_in=d),
                wv=_draw_tensor(rng, (d, d), fan_in=d),
                wo=_draw_tensor(rng, (d, d), fan_in=d),
                w1=_draw_tensor(rng, (d, ff), fan_in=d),
                w2=_draw_tensor(rng, (ff, d), fan_in=ff),
                ln1_gain=np.ones(d, dtype=np.float32),
                ln1_bias=np.zeros(d, dtype=np.float32),
                ln2_gain=np.ones(d, dtype=np.float32),
                ln2_bias=np.zeros(d, dtype=np.float32),
            )
        )
    final_gain = np.ones(d, dtype=np.float32)
    final_bias = np.zeros(d, dtype=np.float32)
    unembedding = _draw_tensor(rng, (d, v), fan_in=d)
    return TinyTransformer(config, embedding, layers, final_gain, final_bias, unembedding)


class BigramModel:
    """Laplace-smoothed byte bigram model: a cheap draft stand-in.

    The cache records sequence length only; logits for a position depend
    solely on the token at that position. Probability math is float64 so the
    conditionals are exact: P(j|i) = (counts[i,j] + s) / (row_i + 257 s).
    """

    def __init__(self, counts: np.ndarray, smoothing: float, max_context: int = 4096):
        if smoothing <= 0:
            raise ValueError(f"smoothing must be positive, got {smoothing}")
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (VOCAB_SIZE, VOCAB_SIZE):
            raise ValueError(f"counts must be {VOCAB_SIZE}x{VOCAB_SIZE}, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        self.counts = counts
        self.smoothing = float(smoothing)
        self.vocab_size = VOCAB_SIZE
        self.max_context = max_context
        row_sums = counts.sum(axis=1, dtype=np.float64)[:, None]
        self._probs = (counts + self.smoothing) / (row_sums + VOCAB_SIZE * self.smoothing)
        self._log_probs = np.log(self._probs)

    def conditional(self, token: int) -> np.ndarray:
        """Next-token distribution given `token`, exact in float64."""
        return self._probs[token].copy()

    def new_cache(self) -> KVCache:
        return KVCache(1, 1, 1, self.max_context)

    def forward(self, cache: KVCache, new_tokens: Sequence[int]) -> np.ndarray:
        if len(new_tokens) == 0:
            raise ValueError("new_tokens must be non-empty")
        if (cache.n_layers, cache.n_heads, cache.head_dim) != (1, 1, 1):
            raise ValueError("cache was not created for a bigram model")
        if cache.cached_len + len(new_tokens) > self.max_context:
            raise ValueError(
                f"context overflow: {cache.cached_len} cached + "
                f"{len(new_tokens)} new tokens exceeds max_context {self.max_context}"
            )
        out = np.empty((len(new_tokens), VOCAB_SIZE), dtype=np.float64)
        for i, token in enumerate(new_tokens):
            if not 0 <= token < VOCAB_SIZE:
                raise ValueError(f"token id {token} outside vocabulary")
            out[i] = self._log_probs[token]
        cache.advance(len(new_tokens))
        return out


def bigram_train(corpus: bytes, smoothing: float = 1.0, max_context: int = 4096) -> BigramModel:
    """Count adjacent token pairs in the tokenized corpus (BOS included)."""
    if smoothing <= 0:
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    counts = np.zeros((VOCAB_SIZE, VOCAB_SIZE), dtype=np.int64)
    toks = tokenize(corpus)
    if len(toks) > 1:
        np.add.at(counts, (toks[:-1], toks[1:]), 1)
    return BigramModel(counts, smoothing, max_context)


def _weight_tensors(model: TinyTransformer) -> list[np.ndarray]:
    tensors = [model.embedding]
    for lw in model.layers:
        tensors += [
            lw.wq, lw.wk, lw.wv, lw.wo, lw.w1, lw.w2,
            lw.ln1_gain, lw.ln1_bias, lw.ln2_gain, lw.ln2_bias,
        ]
    tensors += [model.final_gain, model.final_bias, model.unembedding]
    return tensors


def _tensor_shapes(cfg: TinyTransformerConfig) -> list[tuple[int, ...]]:
    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: list[tuple[int, ...]] = [(v, d)]
    for _ in range(cfg.n_layers):
        shapes += [(d, d)] * 4 + [(d, ff), (ff, d)] + [(d,)] * 4
    shapes += [(d,), (d,), (d, v)]
    return shapes


def save_model(model: TinyTransformer, path: str | Path) -> None:
    """Write the transformer to the binary weight format (little-endian)."""
    cfg = model.config
    header = _TTWF_MAGIC + struct.pack(
        "<7I",
        _TTWF_VERSION,
        cfg.vocab_size,
        cfg.d_model,
        cfg.n_layers,
        cfg.n_heads,
        cfg.d_ff,
        cfg.max_context,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for tensor in _weight_tensors(model):
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_model(path: str | Path) -> TinyTransformer:
    """Read a transformer weight file; inverse of save_model, bit for bit."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    if len(raw) < 4 or raw[:4] != _TTWF_MAGIC:
        raise ModelFileError(f"bad magic in {path}: expected {_TTWF_MAGIC!r}")
    if len(raw) < 32:
        raise ModelFileError(f"truncated header in {path}")
    version, vocab, d_model, n_layers, n_heads, d_ff, max_context = struct.unpack(
        "<7I", raw[4:32]
    )
    if version != _TTWF_VERSION:
        raise ModelFileError(f"unsupported format version {version} in {path}")
    try:
        cfg = TinyTransformerConfig(
            d_model=d_model,
            n_layers=n_layers,
            n_heads=n_heads,
            d_ff=d_ff,
            max_context=max_context,
            vocab_size=vocab,
        )
    except ValueError as exc:
        raise ModelFileError(f"invalid config in {path}: {exc}") from exc
    shapes = _tensor_shapes(cfg)
    expected = 32 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise ModelFileError(
            f"size mismatch in {path}: header implies {expected} bytes, file has {len(raw)}"
        )
    offset = 32
    tensors = []
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        tensors.append(arr.astype(np.float32).reshape(shape))
        offset += 4 * n
    embedding = tensors[0]
    layers = []
    for i in range(cfg.n_layers):
        base = 1 + i * 10
        layers.append(LayerWeights(*tensors[base : base + 10]))
    final_gain, final_bias, unembedding = tensors[-3:]
    return TinyTransformer(cfg, embedding, layers, final_gain, final_bias, unembedding)


def save_bigram(model: BigramModel, path: str | Path) -> None:
    doc = {
        "vocab_size": VOCAB_SIZE,
        "smoothing": model.smoothing,
        "counts": model.counts.reshape(-1).tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_bigram(path: str | Path) -> BigramModel:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ModelFileError(f"cannot read bigram file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"malformed bigram file {path}: {exc}") from exc
    try:
        if doc["vocab_size"] != VOCAB_SIZE:
            raise ModelFileError(
                f"bigram file {path} has vocab_size {doc['vocab_size']}, expected {VOCAB_SIZE}"
            )
        counts = np.asarray(doc["counts"], dtype=np.int64).reshape(VOCAB_SIZE, VOCAB_SIZE)
        return BigramModel(counts, doc["smoothing"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed bigram file {path}: {exc}") from exc


def resolve_model_ref(ref: str) -> TinyTransformer | BigramModel:
    """Load a model from a reference string.

    ``tiny:<path>`` loads a transformer weight file. ``bigram:<path>`` loads
    a saved bigram model if the file parses as one, otherwise treats the file
    as a training corpus (smoothing 1.0). A bare path is sniffed by content.
    """
    if ref.startswith("tiny:"):
        return load_model(ref[len("tiny:") :])
    if ref.startswith("bigram:"):
        path = ref[len("bigram:") :]
        try:
            return load_bigram(path)
        except ModelFileError:
            pass
        try:
            corpus = Path(path).read_bytes()
        except OSError as exc:
            raise ModelFileError(f"cannot read corpus {path}: {exc}") from exc
        return bigram_train(corpus, smoothing=1.0)
    try:
        head = Path(ref).open("rb").read(4)
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {ref}: {exc}") from exc
    if head == _TTWF_MAGIC:
        return load_model(ref)
    return load_bigram(ref)

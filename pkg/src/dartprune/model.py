"""Toy decoder-only transformer with grouped-query attention and a gated FFN.

Single-token (batch-free) forward pass with a per-layer KV cache, written
for observability rather than speed: every step exposes the intermediate
vectors the pruning machinery consumes — the attention-block output, the
gated FFN hidden activations, and the FFN-block output.

Architecture notes:
  * Pre-norm placement: parameter-free RMS normalization before the
    attention and FFN sublayers and before the unembedding. Sensitivity
    statistics are measured on the raw residual-stream values, not the
    normalized ones.
  * No rotary embeddings; position enters only through the causal cache.
  * Greedy decoding only (argmax, lowest index wins ties); sampling,
    if ever wanted, belongs in the harness.
  * FFN masks zero entries of the hidden activation vector. A compacted
    path that physically slices the projection matrices exists for cost
    verification and must agree with the reference path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la

WEIGHT_MAGIC = b"DARTW1"
RMS_EPS = 1e-6


class ConfigError(ValueError):
    """Invalid model dimensions or mismatched weights."""


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden_dim: int
    ffn_dim: int
    num_heads: int
    num_kv_groups: int
    head_dim: int
    vocab_size: int
    max_seq: int

    def __post_init__(self):
        dims = (self.num_layers, self.hidden_dim, self.ffn_dim, self.num_heads,
                self.num_kv_groups, self.head_dim, self.vocab_size, self.max_seq)
        if any(int(v) != v or v < 1 for v in dims):
            raise ConfigError(f"all dimensions must be integers >= 1, got {dims}")
        if self.num_heads % self.num_kv_groups != 0:
            raise ConfigError(
                f"num_heads={self.num_heads} not divisible by num_kv_groups={self.num_kv_groups}")
        if self.num_heads * self.head_dim != self.hidden_dim:
            raise ConfigError(
                f"num_heads*head_dim={self.num_heads * self.head_dim} != hidden_dim={self.hidden_dim}")

    @property
    def heads_per_group(self) -> int:
        return self.num_heads // self.num_kv_groups


@dataclass
class LayerWeights:
    """Per-layer projection matrices.

    Shapes: w_q (num_heads, d, head_dim); w_k/w_v (num_kv_groups, d, head_dim);
    w_o (num_heads*head_dim, d); w_up/w_gate (d, ffn_dim); w_down (ffn_dim, d).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_up: np.ndarray
    w_gate: np.ndarray
    w_down: np.ndarray

    def validate(self, cfg: ModelConfig) -> None:
        d, m, dh = cfg.hidden_dim, cfg.ffn_dim, cfg.head_dim
        expected = {
            "w_q": (cfg.num_heads, d, dh),
            "w_k": (cfg.num_kv_groups, d, dh),
            "w_v": (cfg.num_kv_groups, d, dh),
            "w_o": (cfg.num_heads * dh, d),
            "w_up": (d, m),
            "w_gate": (d, m),
            "w_down": (m, d),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")


@dataclass
class ModelWeights:
    config: ModelConfig
    embedding: np.ndarray  # (vocab_size, hidden_dim); unembedding is tied (E^T)
    layers: list[LayerWeights]

    def validate(self) -> None:
        cfg = self.config
        if self.embedding.shape != (cfg.vocab_size, cfg.hidden_dim):
            raise ConfigError(f"embedding shape {self.embedding.shape} does not match config")
        if len(self.layers) != cfg.num_layers:
            raise ConfigError(f"{len(self.layers)} layer weight sets for {cfg.num_layers} layers")
        for lw in self.layers:
            lw.validate(cfg)


class KvCache:
    """Growable per-layer, per-group key/value store for one stream."""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        shape = (cfg.num_kv_groups, cfg.max_seq, cfg.head_dim)
        self._keys = [np.zeros(shape, dtype=np.float32) for _ in range(cfg.num_layers)]
        self._values = [np.zeros(shape, dtype=np.float32) for _ in range(cfg.num_layers)]
        self._len = [0] * cfg.num_layers

    def length(self, layer: int) -> int:
        return self._len[layer]

    def append(self, layer: int, keys: np.ndarray, values: np.ndarray) -> None:
        t = self._len[layer]
        if t >= self.config.max_seq:
            raise ConfigError(f"cache overflow at layer {layer}: max_seq={self.config.max_seq}")
        self._keys[layer][:, t, :] = keys
        self._values[layer][:, t, :] = values
        self._len[layer] = t + 1

    def keys(self, layer: int, group: int) -> np.ndarray:
        return self._keys[layer][group, : self._len[layer], :]

    def values(self, layer: int, group: int) -> np.ndarray:
        return self._values[layer][group, : self._len[layer], :]


@dataclass
class StepTrace:
    """Intermediate vectors recorded for one generated token.

    attn_out[l]  — attention-block output (residual stream entering the FFN)
    ffn_hidden[l] — gated hidden activations after masking (length ffn_dim)
    block_out[l] — FFN-block output (next layer's input)
    """

    attn_out: list[np.ndarray] = field(default_factory=list)
    ffn_hidden: list[np.ndarray] = field(default_factory=list)
    block_out: list[np.ndarray] = field(default_factory=list)

    @property
    def last_attention_output(self) -> np.ndarray:
        return self.attn_out[-1]


def rms_norm(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float32)
    scale = np.sqrt(np.mean(np.square(v, dtype=np.float32)) + RMS_EPS)
    return v / scale


class TransformerEngine:
    """Forward pass over loaded weights. Weights are immutable and shareable;
    caches are per-stream and single-writer. Masks may only be swapped
    between token steps."""

    def __init__(self, weights: ModelWeights):
        weights.validate()
        self.weights = weights
        self.config = weights.config

    def new_cache(self) -> KvCache:
        return KvCache(self.config)

    def attention_step(self, layer: int, x: np.ndarray, cache: KvCache) -> np.ndarray:
        """Grouped-query attention for one token.

        Projects x to a query per head and one key/value per group, appends
        the key/value to the cache, then attends over the whole cache
        (causal by construction). Returns the output projection, shape (d,).
        """
        cfg = self.config
        lw = self.weights.layers[layer]
        x = np.asarray(x, dtype=np.float32)
        if x.shape != (cfg.hidden_dim,):
            raise ConfigError(f"attention input shape {x.shape}, expected ({cfg.hidden_dim},)")

        new_k = np.stack([la.matmul(x, lw.w_k[g]) for g in range(cfg.num_kv_groups)])
        new_v = np.stack([la.matmul(x, lw.w_v[g]) for g in range(cfg.num_kv_groups)])
        cache.append(layer, new_k, new_v)

        inv_sqrt_dh = np.float32(1.0 / np.sqrt(cfg.head_dim))
        head_outputs = []
        for h in range(cfg.num_heads):
            g = h // cfg.heads_per_group
            q = la.matmul(x, lw.w_q[h])
            scores = la.matmul(cache.keys(layer, g), q) * inv_sqrt_dh
            attn = la.softmax(scores)
            head_outputs.append(la.matmul(attn, cache.values(layer, g)))
        concat = np.concatenate(head_outputs)
        return la.matmul(concat, lw.w_o)

    def ffn_step(self, layer: int, y: np.ndarray, mask: np.ndarray | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
        """Gated FFN block with residual: returns (hidden, block_out).

        The gating is computed on the RMS-normalized input; the residual adds
        the raw input. `mask` is a boolean vector over hidden units; masked
        units contribute nothing (their hidden activation is zeroed before
        the down projection). No mask or an all-ones mask is exactly dense.
        """
        cfg = self.config
        lw = self.weights.layers[layer]
        y = np.asarray(y, dtype=np.float32)
        if mask is not None and mask.shape != (cfg.ffn_dim,):
            raise ConfigError(f"mask length {mask.shape} != ffn_dim {cfg.ffn_dim}")
        x = rms_norm(y)
        hidden = la.matmul(x, lw.w_up) * la.silu(la.matmul(x, lw.w_gate))
        if mask is not None:
            hidden = np.where(mask, hidden, np.float32(0.0))
        return hidden, y + la.matmul(hidden, lw.w_down)

    def ffn_step_compacted(self, layer: int, y: np.ndarray, mask: np.ndarray
                           ) -> tuple[np.ndarray, np.ndarray]:
        """Same contract as ffn_step but with physically sliced matrices.

        This is the execution shape the cost model charges for; it must agree
        with the reference path to float tolerance.
        """
        cfg = self.config
        lw = self.weights.layers[layer]
        if mask.shape != (cfg.ffn_dim,):
            raise ConfigError(f"mask length {mask.shape} != ffn_dim {cfg.ffn_dim}")
        keep = np.flatnonzero(mask)
        x = rms_norm(np.asarray(y, dtype=np.float32))
        kept_hidden = la.matmul(x, lw.w_up[:, keep]) * la.silu(la.matmul(x, lw.w_gate[:, keep]))
        out = y + la.matmul(kept_hidden, lw.w_down[keep, :])
        hidden = np.zeros(cfg.ffn_dim, dtype=np.float32)
        hidden[keep] = kept_hidden
        return hidden, out

    def forward_token(self, token: int, cache: KvCache,
                      masks: list[np.ndarray | None] | None = None,
                      embed_bias: np.ndarray | None = None,
                      ) -> tuple[np.ndarray, StepTrace]:
        """Embed -> L x (attention + FFN) -> unembed, recording a StepTrace.

        `embed_bias`, when given, is added to the token embedding; the
        synthetic workloads use it to steer activations without touching
        the weights.
        """
        cfg = self.config
        if not 0 <= token < cfg.vocab_size:
            raise ConfigError(f"token {token} outside vocab of size {cfg.vocab_size}")
        if masks is not None and len(masks) != cfg.num_layers:
            raise ConfigError(f"{len(masks)} masks for {cfg.num_layers} layers")

        h = self.weights.embedding[token]
        if embed_bias is not None:
            h = (h + embed_bias).astype(np.float32)
        trace = StepTrace()
        for layer in range(cfg.num_layers):
            attn = self.attention_step(layer, rms_norm(h), cache)
            y = h + attn
            mask = masks[layer] if masks is not None else None
            hidden, z = self.ffn_step(layer, y, mask)
            trace.attn_out.append(y)
            trace.ffn_hidden.append(hidden)
            trace.block_out.append(z)
            h = z
        logits = la.matmul(rms_norm(h), self.weights.embedding.T)
        return logits, trace

    @staticmethod
    def greedy_token(logits: np.ndarray) -> int:
        return int(np.argmax(logits))


# ---------------------------------------------------------------------------
# Synthetic weights and the weight-file format
# ---------------------------------------------------------------------------

def synth_model(seed: int, cfg: ModelConfig) -> ModelWeights:
    """Reproducible pseudo-random weights, entries scaled by 1/sqrt(hidden_dim).

    The draw order is fixed (embedding, then per layer in field order), so a
    given seed yields bit-identical weights on every platform numpy supports.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(cfg.hidden_dim)

    def draw(*shape):
        return (rng.standard_normal(shape, dtype=np.float32) * np.float32(scale))

    embedding = draw(cfg.vocab_size, cfg.hidden_dim)
    layers = []
    for _ in range(cfg.num_layers):
        layers.append(LayerWeights(
            w_q=draw(cfg.num_heads, cfg.hidden_dim, cfg.head_dim),
            w_k=draw(cfg.num_kv_groups, cfg.hidden_dim, cfg.head_dim),
            w_v=draw(cfg.num_kv_groups, cfg.hidden_dim, cfg.head_dim),
            w_o=draw(cfg.num_heads * cfg.head_dim, cfg.hidden_dim),
            w_up=draw(cfg.hidden_dim, cfg.ffn_dim),
            w_gate=draw(cfg.hidden_dim, cfg.ffn_dim),
            w_down=draw(cfg.ffn_dim, cfg.hidden_dim),
        ))
    weights = ModelWeights(config=cfg, embedding=embedding, layers=layers)
    weights.validate()
    return weights


_CONFIG_FIELDS = ("num_layers", "hidden_dim", "ffn_dim", "num_heads",
                  "num_kv_groups", "head_dim", "vocab_size", "max_seq")
_LAYER_FIELDS = ("w_q", "w_k", "w_v", "w_o", "w_up", "w_gate", "w_down")


def weight_file_size(cfg: ModelConfig) -> int:
    """Exact byte size of a weight file for this config."""
    per_layer = (cfg.num_heads * cfg.hidden_dim * cfg.head_dim
                 + 2 * cfg.num_kv_groups * cfg.hidden_dim * cfg.head_dim
                 + cfg.num_heads * cfg.head_dim * cfg.hidden_dim
                 + 3 * cfg.hidden_dim * cfg.ffn_dim)
    floats = cfg.vocab_size * cfg.hidden_dim + cfg.num_layers * per_layer
    return len(WEIGHT_MAGIC) + 8 * 4 + 4 * floats


def save_weights(path, weights: ModelWeights) -> None:
    """Write magic, config as little-endian uint32, then every matrix as
    row-major little-endian float32 (embedding first, then layers in field
    order)."""
    weights.validate()
    cfg = weights.config
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<8I", *(getattr(cfg, name) for name in _CONFIG_FIELDS)))
        f.write(np.ascontiguousarray(weights.embedding, dtype="<f4").tobytes())
        for lw in weights.layers:
            for name in _LAYER_FIELDS:
                f.write(np.ascontiguousarray(getattr(lw, name), dtype="<f4").tobytes())


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as f:
        magic = f.read(len(WEIGHT_MAGIC))
        if magic != WEIGHT_MAGIC:
            raise ConfigError(f"bad weight file magic: {magic!r}")
        cfg = ModelConfig(*struct.unpack("<8I", f.read(8 * 4)))

        def read(*shape):
            n = int(np.prod(shape))
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise ConfigError("weight file truncated")
            return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)

        embedding = read(cfg.vocab_size, cfg.hidden_dim)
        layers = []
        for _ in range(cfg.num_layers):
            layers.append(LayerWeights(
                w_q=read(cfg.num_heads, cfg.hidden_dim, cfg.head_dim),
                w_k=read(cfg.num_kv_groups, cfg.hidden_dim, cfg.head_dim),
                w_v=read(cfg.num_kv_groups, cfg.hidden_dim, cfg.head_dim),
                w_o=read(cfg.num_heads * cfg.head_dim, cfg.hidden_dim),
                w_up=read(cfg.hidden_dim, cfg.ffn_dim),
                w_gate=read(cfg.hidden_dim, cfg.ffn_dim),
                w_down=read(cfg.ffn_dim, cfg.hidden_dim),
            ))
        if f.read(1):
            raise ConfigError("trailing bytes in weight file")
    weights = ModelWeights(config=cfg, embedding=embedding, layers=layers)
    weights.validate()
    return weights

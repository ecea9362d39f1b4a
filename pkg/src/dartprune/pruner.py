"""Neuron importance accumulation and top-k mask construction.

Importance of hidden unit i is the sum of squared gated activations over a
token window. Masks keep the k highest-scoring units per layer; k is the
rounded keep fraction, clamped so a layer never goes fully dead.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class NeuronMask:
    layer: int
    bits: np.ndarray  # bool, length ffn_dim

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)

    @property
    def k(self) -> int:
        return int(self.bits.sum())

    @property
    def density(self) -> float:
        return self.k / self.bits.size

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


class ImportanceAccumulator:
    """Windowed per-neuron score accumulation for one (stream, layer).

    Scores accumulate in float64; the window length bounds how many tokens
    may be added before the caller must build a mask and reset.
    """

    def __init__(self, size: int, window: int):
        if size < 1 or window < 1:
            raise ValueError("size and window must be >= 1")
        self.window = window
        self.scores = np.zeros(size, dtype=np.float64)
        self.tokens_seen = 0

    def add(self, hidden: np.ndarray) -> None:
        if self.tokens_seen >= self.window:
            raise RuntimeError(f"importance window already full ({self.window} tokens)")
        hidden = np.asarray(hidden, dtype=np.float64)
        if hidden.shape != self.scores.shape:
            raise ValueError(f"activation length {hidden.shape} != {self.scores.shape}")
        self.scores += np.square(hidden)
        self.tokens_seen += 1

    def reset(self) -> None:
        self.scores[:] = 0.0
        self.tokens_seen = 0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_mask(scores: np.ndarray, keep_ratio: float, layer: int = 0) -> NeuronMask:
    """Top-k mask over scores; k = round(keep_ratio * m), clamped to [1, m].

    Ties break toward the lower neuron index (stable sort), so masks are
    deterministic and nested as keep_ratio grows.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a nonempty vector")
    if not 0.0 <= keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio {keep_ratio} outside [0, 1]")
    m = scores.size
    k = min(m, max(1, round_half_up(keep_ratio * m)))
    order = np.argsort(-scores, kind="stable")
    bits = np.zeros(m, dtype=bool)
    bits[order[:k]] = True
    return NeuronMask(layer=layer, bits=bits)


def mask_for_layer(acc: ImportanceAccumulator, prune_ratio: float, layer: int = 0) -> NeuronMask:
    """Mask from accumulated scores at a given pruning ratio (keep = 1 - ratio)."""
    if acc.tokens_seen < 1:
        raise ValueError("cannot build a mask from an empty accumulator")
    if not 0.0 <= prune_ratio <= 1.0:
        raise ValueError(f"prune_ratio {prune_ratio} outside [0, 1]")
    return build_mask(acc.scores, 1.0 - prune_ratio, layer=layer)


def pack_mask(mask: NeuronMask) -> str:
    """Bit-packed base64 form for trace files."""
    return base64.b64encode(np.packbits(mask.bits).tobytes()).decode("ascii")


def unpack_mask(packed: str, size: int, layer: int = 0) -> NeuronMask:
    raw = np.frombuffer(base64.b64decode(packed), dtype=np.uint8)
    bits = np.unpackbits(raw)[:size].astype(bool)
    return NeuronMask(layer=layer, bits=bits)

"""Minimal dense kernels backing the engine.

Everything operates on float32 numpy arrays (the engine's working
precision). Scalar reductions (norms, cosine) accumulate in float64 so
downstream statistics stay stable at small magnitudes.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32


def as_f32(x) -> np.ndarray:
    a = np.asarray(x, dtype=F32)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix/vector product in float32. Inner dimensions must agree."""
    a = np.asarray(a, dtype=F32)
    b = np.asarray(b, dtype=F32)
    inner_a = a.shape[-1] if a.ndim else 1
    inner_b = b.shape[0] if b.ndim else 1
    if inner_a != inner_b:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max subtraction, so huge scores are fine)."""
    v = np.asarray(v, dtype=F32)
    if v.size == 0:
        raise ValueError("softmax of empty vector")
    shifted = v - v.max()
    e = np.exp(shifted, dtype=F32)
    return e / e.sum(dtype=F32)


def silu(v: np.ndarray) -> np.ndarray:
    """x * sigmoid(x), split by sign to avoid exp overflow."""
    v = np.asarray(v, dtype=F32)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = v[pos] / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = v[~pos] * ev / (1.0 + ev)
    return out


def l2_norm(v: np.ndarray) -> float:
    v64 = np.asarray(v, dtype=np.float64)
    return float(np.sqrt(np.dot(v64, v64)))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1].

    A zero-norm argument is a degenerate input: returns 0.0 rather than
    raising, so streaming statistics stay total on all-zero windows.
    Callers that care can test the norms themselves.
    """
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    if a64.shape != b64.shape:
        raise ValueError(f"cosine length mismatch: {a64.shape} vs {b64.shape}")
    na = np.sqrt(np.dot(a64, a64))
    nb = np.sqrt(np.dot(b64, b64))
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = float(np.dot(a64, b64) / (na * nb))
    # float rounding can nudge |c| past 1 for near-parallel vectors
    return max(-1.0, min(1.0, c))

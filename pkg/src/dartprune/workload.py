"""Synthetic regime workloads.

Multi-topic prompts need a pretrained model; at desk scale the stand-in is
a fixed per-regime bias injected into token embeddings, so each regime
excites its own neuron subset and "topic-specific neurons" become a
constructible ground truth. Regime directions are orthonormal by
construction, which makes a regime switch a hard, measurable event.

The detector benchmarks use raw vector streams instead of engine runs. The
stationary stream recycles a fixed window-sized pool of noise draws, so its
empirical distribution is exactly constant window over window: the detector
sees a zero-deviation reference and must stay silent. Independent per-token
noise is also available (mode "iid"); the threshold rule is scale-free, so
iid noise triggers at a rate set only by the threshold, which the bench
reports rather than hides.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _orthonormal_rows(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if count > dim:
        raise ValueError(f"cannot fit {count} orthonormal directions in dimension {dim}")
    raw = rng.standard_normal((dim, count))
    q, _ = np.linalg.qr(raw)
    return q.T[:count].astype(np.float64)


@dataclass
class RegimeWorkload:
    """Embedding-bias stream with regime switches for engine runs."""

    dim: int
    num_regimes: int = 1
    switch_points: tuple[int, ...] = ()   # absolute token indices, increasing
    bias_scale: float = 1.0
    noise_scale: float = 0.05
    seed: int = 0
    directions: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.num_regimes < 1:
            raise ValueError("need at least one regime")
        if len(self.switch_points) != self.num_regimes - 1:
            raise ValueError(f"{self.num_regimes} regimes need "
                             f"{self.num_regimes - 1} switch points")
        if any(b >= a for a, b in zip(self.switch_points[1:], self.switch_points)):
            raise ValueError("switch points must be strictly increasing")
        rng = np.random.default_rng(self.seed)
        self.directions = _orthonormal_rows(self.num_regimes, self.dim, rng)

    def regime_at(self, t: int) -> int:
        return int(np.searchsorted(np.asarray(self.switch_points), t, side="right"))

    def bias(self, t: int) -> np.ndarray:
        """Deterministic per-token bias: regime direction plus fresh noise."""
        noise_rng = np.random.default_rng((self.seed, t))
        noise = noise_rng.standard_normal(self.dim) * self.noise_scale
        return (self.bias_scale * self.directions[self.regime_at(t)]
                + noise).astype(np.float32)

    def pinned(self, regime: int) -> "RegimeWorkload":
        """Copy that never switches (for building per-regime oracle masks)."""
        if not 0 <= regime < self.num_regimes:
            raise ValueError(f"regime {regime} out of range")
        clone = RegimeWorkload(dim=self.dim, num_regimes=self.num_regimes,
                               switch_points=self.switch_points,
                               bias_scale=self.bias_scale,
                               noise_scale=self.noise_scale, seed=self.seed)
        pinned_regime = regime

        def bias(t: int, _clone=clone, _r=pinned_regime):
            noise_rng = np.random.default_rng((_clone.seed, t))
            noise = noise_rng.standard_normal(_clone.dim) * _clone.noise_scale
            return (_clone.bias_scale * _clone.directions[_r] + noise).astype(np.float32)

        clone.bias = bias  # type: ignore[method-assign]
        return clone


# ---------------------------------------------------------------------------
# Raw vector streams for the detector bench
# ---------------------------------------------------------------------------

def _noise_pool(dim: int, period: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((period, dim)) * scale


def stationary_stream(dim: int, length: int, seed: int, noise_scale: float = 0.05,
                      period: int | None = 10) -> np.ndarray:
    """Constant-direction stream. period=N recycles a pool of N noise draws
    (window-periodic, exactly stationary empirically); period=None draws
    independent noise every token."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    if period is None:
        noise = rng.standard_normal((length, dim)) * noise_scale
    else:
        pool = _noise_pool(dim, period, noise_scale, rng)
        noise = pool[np.arange(length) % period]
    return direction[None, :] + noise


def switch_stream(dim: int, length: int, switch_at: int, seed: int,
                  noise_scale: float = 0.05, period: int | None = 10) -> np.ndarray:
    """Two-regime stream: orthogonal unit directions, switch at switch_at."""
    rng = np.random.default_rng(seed)
    dirs = _orthonormal_rows(2, dim, rng)
    if period is None:
        noise = rng.standard_normal((length, dim)) * noise_scale
    else:
        pool_a = _noise_pool(dim, period, noise_scale, rng)
        pool_b = _noise_pool(dim, period, noise_scale, rng)
        idx = np.arange(length) % period
        noise = np.where((np.arange(length) < switch_at)[:, None],
                         pool_a[idx], pool_b[idx])
    base = np.where((np.arange(length) < switch_at)[:, None], dirs[0], dirs[1])
    return base + noise

"""Layer-wise pruning budget allocation.

Turns per-layer sensitivity measurements into per-layer pruning ratios in
three steps: normalize mean sensitivities into relative importances (more
sensitive layers weigh less), attenuate pruning pressure near the first and
last layers with a piecewise-linear depth factor, then distribute the global
budget (target_sparsity * num_layers) proportionally to importance x depth
with iterative redistribution so every ratio lands inside the clamp bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import cosine, l2_norm


class InfeasibleBudgetError(RuntimeError):
    """The pruning budget cannot be placed within the clamp bounds."""


@dataclass(frozen=True)
class AllocatorParams:
    target_sparsity: float = 0.5
    min_ratio: float = 0.0
    max_ratio: float = 0.95
    early_scale: float = 0.25   # depth attenuation floor at the first layer
    late_scale: float = 0.35    # depth attenuation floor at the last layer
    early_width: float = 0.3    # normalized width of the early ramp
    late_width: float = 0.15    # normalized width of the late ramp
    tolerance: float = 1e-9

    def __post_init__(self):
        if not 0.0 <= self.min_ratio < self.max_ratio <= 1.0:
            raise ValueError(f"need 0 <= min_ratio < max_ratio <= 1, got "
                             f"[{self.min_ratio}, {self.max_ratio}]")
        if not 0.0 <= self.target_sparsity <= 1.0:
            raise ValueError(f"target_sparsity {self.target_sparsity} outside [0, 1]")
        if self.early_width + self.late_width > 1.0 + 1e-12:
            raise ValueError("early_width + late_width must not exceed 1")
        if not (0.0 < self.early_scale < 1.0 and 0.0 < self.late_scale < 1.0):
            raise ValueError("depth scales must lie in (0, 1)")


@dataclass
class LayerBudget:
    layer: int
    mean_sensitivity: float
    importance: float
    depth: float
    ratio: float


def sensitivity(block_in: np.ndarray, block_out: np.ndarray) -> float:
    """Directional-change score of one FFN block application.

    (1 - cos(in, out)) * ||out - in|| / ||in||: zero when the block only
    rescales its input, growing with rotation and with update intensity.
    A zero-norm input is degenerate and scores 0.
    """
    a = np.asarray(block_in, dtype=np.float64)
    b = np.asarray(block_out, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    norm_in = l2_norm(a)
    if norm_in == 0.0:
        return 0.0
    return (1.0 - cosine(a, b)) * l2_norm(b - a) / norm_in


def mean_sensitivity(values) -> float:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean over an empty sensitivity window")
    return float(arr.mean())


def relative_importance(mean_sens) -> np.ndarray:
    """1 - share of total sensitivity, per layer; each value lies in [0, 1].

    All-zero sensitivities fall back to the uniform profile 1 - 1/L (the
    degenerate case where no layer distinguished itself).
    """
    s = np.asarray(mean_sens, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("mean sensitivities must form a nonempty vector")
    if np.any(s < 0):
        raise ValueError("sensitivities must be nonnegative")
    total = s.sum()
    if total == 0.0:
        return np.full(s.size, 1.0 - 1.0 / s.size)
    return 1.0 - s / total


def depth_factor(layer: int, num_layers: int, params: AllocatorParams) -> float:
    """Piecewise-linear attenuation of pruning pressure near both ends.

    min(1, early ramp, late ramp) over the normalized depth l/(L-1);
    a single-layer model gets no attenuation.
    """
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if not 0 <= layer < num_layers:
        raise ValueError(f"layer {layer} outside [0, {num_layers})")
    if num_layers == 1:
        return 1.0
    depth = layer / (num_layers - 1)
    early = params.early_scale + (1.0 - params.early_scale) * depth / params.early_width
    late = params.late_scale + (1.0 - params.late_scale) * (1.0 - depth) / params.late_width
    return min(1.0, early, late)


def depth_profile(num_layers: int, params: AllocatorParams) -> np.ndarray:
    return np.array([depth_factor(l, num_layers, params) for l in range(num_layers)])


def allocate(importance, depth, params: AllocatorParams) -> np.ndarray:
    """Distribute the pruning budget over layers, clamped to bound ratios.

    Each round shares the residual budget proportionally to importance*depth
    among layers that can still move, clips at the bounds, and recomputes the
    residual. Layers pinned at max_ratio leave the positive-residual pool;
    layers pinned at min_ratio leave the negative-residual pool (a residual
    goes negative only when lower clamping forced ratios up). The loop ends
    when the residual is zero to tolerance; the sum of ratios then equals
    target_sparsity * num_layers exactly up to float residue.
    """
    weight = np.asarray(importance, dtype=np.float64) * np.asarray(depth, dtype=np.float64)
    if weight.ndim != 1 or weight.size == 0:
        raise ValueError("importance/depth must form nonempty vectors of equal length")
    if np.any(weight < 0):
        raise ValueError("allocation weights must be nonnegative")
    n = weight.size
    budget = params.target_sparsity * n
    if budget > params.max_ratio * n + 1e-12:
        raise InfeasibleBudgetError(
            f"budget {budget:.6g} exceeds total capacity {params.max_ratio * n:.6g}")
    if budget < params.min_ratio * n - 1e-12:
        raise InfeasibleBudgetError(
            f"budget {budget:.6g} below the floor {params.min_ratio * n:.6g}")

    ratios = np.zeros(n, dtype=np.float64)
    active = np.ones(n, dtype=bool)
    residual = budget
    for _ in range(n + 2):
        if abs(residual) <= params.tolerance:
            break
        pool = weight[active]
        total = pool.sum()
        if total <= 0.0:
            break
        shares = np.zeros(n, dtype=np.float64)
        shares[active] = residual * weight[active] / total
        proposed = np.clip(ratios + shares, params.min_ratio, params.max_ratio)
        placed = (proposed[active] - ratios[active]).sum()
        ratios[active] = proposed[active]
        residual -= placed
        if residual > 0:
            active &= ratios < params.max_ratio - 1e-15
        elif residual < 0:
            active &= ratios > params.min_ratio + 1e-15
        if not active.any():
            break
    if abs(residual) > 1e-6:
        raise InfeasibleBudgetError(
            f"undistributable residual {residual:.3e} (all layers clamped)")
    return ratios


def build_budgets(mean_sens, params: AllocatorParams) -> list[LayerBudget]:
    """Full pipeline: sensitivities -> importance -> depth -> ratios."""
    sens = np.asarray(mean_sens, dtype=np.float64)
    importance = relative_importance(sens)
    depth = depth_profile(sens.size, params)
    ratios = allocate(importance, depth, params)
    return [LayerBudget(layer=l, mean_sensitivity=float(sens[l]),
                        importance=float(importance[l]), depth=float(depth[l]),
                        ratio=float(ratios[l]))
            for l in range(sens.size)]

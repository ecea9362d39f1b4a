"""Analytic FLOP and memory-traffic accounting for dense vs pruned execution.

Conventions
-----------
* A multiply-add counts as 2 FLOPs; the gating nonlinearity and product
  count 2 ops per kept hidden unit. Softmax exponentials and normalization
  divisions are not counted (they are negligible against the GEMMs).
* Memory traffic charges each weight matrix once per measurement span
  (weight_bytes per parameter, the compute precision) and the activation
  vectors once per token (act_bytes per value, the communication precision).
* Table units are binary: GB = 2**30 bytes, TFLOPs = 2**40 FLOPs.
* FFN pruning scales the three FFN projections and their hidden activations
  by the keep fraction; attention costs never depend on the sparsity plan.

The llama70b / llama8b presets reproduce a reference cost table measured at
70% nominal FFN sparsity with FP8 compute and FP16 communication precision.
That table leaves two scenario knobs unstated: the token span behind the
absolute figures and the keep fraction the sparse run actually realized
(its cells are inconsistent with a uniform 0.30). `calibrated_scenario`
therefore solves tokens_per_measure from the dense MLP bytes cell and the
realized keep from the sparse MLP bytes cell; the FLOP cells then act as
cross-checks that the accounting is right.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig

GIB = float(2**30)
TFLOP = float(2**40)

PRESETS: dict[str, ModelConfig] = {
    "toy": ModelConfig(num_layers=4, hidden_dim=64, ffn_dim=256, num_heads=4,
                       num_kv_groups=2, head_dim=16, vocab_size=256, max_seq=4096),
    "llama8b": ModelConfig(num_layers=32, hidden_dim=4096, ffn_dim=14336, num_heads=32,
                           num_kv_groups=8, head_dim=128, vocab_size=128256, max_seq=131072),
    "llama70b": ModelConfig(num_layers=80, hidden_dim=8192, ffn_dim=28672, num_heads=64,
                            num_kv_groups=8, head_dim=128, vocab_size=128256, max_seq=131072),
}


@dataclass(frozen=True)
class CostAnchor:
    """Reference table cells for one model preset (bytes in GB, compute in
    TFLOPs, binary units; 70% nominal FFN sparsity)."""

    dense_mlp_gb: float
    sparse_mlp_gb: float
    dense_mlp_tflop: float
    sparse_mlp_tflop: float
    attn_gb: float
    attn_tflop: float
    nominal_sparsity: float = 0.7


ANCHORS: dict[str, CostAnchor] = {
    "llama70b": CostAnchor(dense_mlp_gb=53.91, sparse_mlp_gb=17.14,
                           dense_mlp_tflop=13.12, sparse_mlp_tflop=4.12,
                           attn_gb=15.08, attn_tflop=2.85),
    "llama8b": CostAnchor(dense_mlp_gb=5.53, sparse_mlp_gb=1.50,
                          dense_mlp_tflop=1.31, sparse_mlp_tflop=0.35,
                          attn_gb=2.53, attn_tflop=0.32),
}


@dataclass
class CostParams:
    config: ModelConfig
    tokens_per_measure: float
    keep: np.ndarray                     # per-layer keep fraction in (0, 1]
    weight_bytes: int = 1                # compute precision
    act_bytes: int = 2                   # communication precision
    context_len: float | None = None     # KV span per decode step

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=np.float64)
        if self.keep.shape != (self.config.num_layers,):
            raise ValueError(f"keep plan length {self.keep.shape} != "
                             f"{self.config.num_layers} layers")
        if np.any(self.keep <= 0) or np.any(self.keep > 1):
            raise ValueError("keep fractions must lie in (0, 1]")
        if self.weight_bytes not in (1, 2, 4) or self.act_bytes not in (1, 2, 4):
            raise ValueError("byte widths must be 1, 2 or 4")
        if self.tokens_per_measure < 0:
            raise ValueError("tokens_per_measure must be nonnegative")
        if self.context_len is None:
            self.context_len = self.tokens_per_measure


def uniform_params(config: ModelConfig, tokens: float, keep: float = 1.0,
                   **kw) -> CostParams:
    return CostParams(config=config, tokens_per_measure=tokens,
                      keep=np.full(config.num_layers, keep), **kw)


@dataclass
class CostReport:
    """Per-layer and total FLOPs / traffic for the configured token span."""

    attention_flops: np.ndarray
    attention_bytes: np.ndarray
    mlp_flops: np.ndarray
    mlp_bytes: np.ndarray

    @property
    def total_attention_flops(self) -> float:
        return float(self.attention_flops.sum())

    @property
    def total_attention_bytes(self) -> float:
        return float(self.attention_bytes.sum())

    @property
    def total_mlp_flops(self) -> float:
        return float(self.mlp_flops.sum())

    @property
    def total_mlp_bytes(self) -> float:
        return float(self.mlp_bytes.sum())


# ---------------------------------------------------------------------------
# Per-layer primitives
# ---------------------------------------------------------------------------

def mlp_flops_per_token(d: int, m: int, keep: float = 1.0) -> float:
    """Three keep-scaled projections plus the elementwise gate."""
    return 3 * 2 * d * m * keep + 2 * m * keep


def mlp_bytes_per_layer(d: int, m: int, tokens: float, keep: float,
                        weight_bytes: int, act_bytes: int) -> float:
    weight_traffic = 3 * d * m * keep * weight_bytes
    act_traffic = (d + 2 * m * keep + d) * act_bytes * tokens
    return weight_traffic + act_traffic


def attention_flops_per_token(cfg: ModelConfig, context_len: float) -> float:
    """QKV/output projections plus score and value contractions."""
    d, dh = cfg.hidden_dim, cfg.head_dim
    proj = 2 * (d * cfg.num_heads * dh          # queries
                + 2 * d * cfg.num_kv_groups * dh  # keys and values
                + cfg.num_heads * dh * d)        # output
    scores = 2 * cfg.num_heads * dh * context_len
    values = 2 * cfg.num_heads * context_len * dh
    return proj + scores + values


def attention_bytes_per_layer(cfg: ModelConfig, tokens: float, context_len: float,
                              weight_bytes: int, act_bytes: int) -> float:
    d, dh = cfg.hidden_dim, cfg.head_dim
    weight_traffic = (2 * d * cfg.num_heads * dh
                      + 2 * d * cfg.num_kv_groups * dh) * weight_bytes
    kv_write = 2 * cfg.num_kv_groups * dh * act_bytes
    kv_read = context_len * 2 * cfg.num_kv_groups * dh * act_bytes
    acts = 2 * d * act_bytes
    return weight_traffic + tokens * (kv_write + kv_read + acts)


# ---------------------------------------------------------------------------
# Aggregate costs
# ---------------------------------------------------------------------------

def mlp_cost(params: CostParams) -> tuple[float, float]:
    """(flops, bytes) of all FFN sublayers for the measurement span."""
    cfg = params.config
    flops = sum(params.tokens_per_measure
                * mlp_flops_per_token(cfg.hidden_dim, cfg.ffn_dim, k)
                for k in params.keep)
    traffic = sum(mlp_bytes_per_layer(cfg.hidden_dim, cfg.ffn_dim,
                                      params.tokens_per_measure, k,
                                      params.weight_bytes, params.act_bytes)
                  for k in params.keep)
    return float(flops), float(traffic)


def attention_cost(params: CostParams) -> tuple[float, float]:
    """(flops, bytes) of all attention sublayers; independent of the keep plan."""
    cfg = params.config
    flops = cfg.num_layers * params.tokens_per_measure * attention_flops_per_token(
        cfg, params.context_len)
    traffic = cfg.num_layers * attention_bytes_per_layer(
        cfg, params.tokens_per_measure, params.context_len,
        params.weight_bytes, params.act_bytes)
    return float(flops), float(traffic)


def cost_report(params: CostParams) -> CostReport:
    cfg = params.config
    attn_f = np.full(cfg.num_layers,
                     params.tokens_per_measure
                     * attention_flops_per_token(cfg, params.context_len))
    attn_b = np.full(cfg.num_layers,
                     attention_bytes_per_layer(cfg, params.tokens_per_measure,
                                               params.context_len,
                                               params.weight_bytes, params.act_bytes))
    mlp_f = np.array([params.tokens_per_measure
                      * mlp_flops_per_token(cfg.hidden_dim, cfg.ffn_dim, k)
                      for k in params.keep])
    mlp_b = np.array([mlp_bytes_per_layer(cfg.hidden_dim, cfg.ffn_dim,
                                          params.tokens_per_measure, k,
                                          params.weight_bytes, params.act_bytes)
                      for k in params.keep])
    return CostReport(attention_flops=attn_f, attention_bytes=attn_b,
                      mlp_flops=mlp_f, mlp_bytes=mlp_b)


# ---------------------------------------------------------------------------
# Exact operation counts for the toy engine (integer domain)
# ---------------------------------------------------------------------------

def exact_attention_flops(cfg: ModelConfig, cache_len: int) -> int:
    """Multiply-add FLOPs of one attention step attending over cache_len
    entries (the current token included)."""
    d, dh = cfg.hidden_dim, cfg.head_dim
    macs = (cfg.num_heads * d * dh
            + 2 * cfg.num_kv_groups * d * dh
            + cfg.num_heads * cache_len * dh * 2
            + cfg.num_heads * dh * d)
    return 2 * macs


def exact_mlp_flops(cfg: ModelConfig, kept_neurons: int) -> int:
    """FLOPs of one compacted FFN step keeping kept_neurons hidden units."""
    d = cfg.hidden_dim
    return 2 * 3 * d * kept_neurons + 2 * kept_neurons


# ---------------------------------------------------------------------------
# Tracing overhead
# ---------------------------------------------------------------------------

def overhead_flops_per_token(cfg: ModelConfig, keep: float = 1.0,
                             window: int = 10) -> float:
    """Analytic per-token cost of the pruning machinery itself.

    Importance accumulation (square + add per kept hidden unit, per layer),
    the per-layer directional-change score (three dot products, a vector
    difference and two norms), and the drift detector (centroid accumulation
    every token plus one cosine per completed window), all amortized per
    token.
    """
    d, m = cfg.hidden_dim, cfg.ffn_dim
    importance = cfg.num_layers * 2 * m * keep
    sens = cfg.num_layers * (3 * 2 * d + 3 * d)
    drift = d + (6 * d) / window
    return float(importance + sens + drift)


def dense_forward_flops_per_token(cfg: ModelConfig, context_len: float) -> float:
    return cfg.num_layers * (attention_flops_per_token(cfg, context_len)
                             + mlp_flops_per_token(cfg.hidden_dim, cfg.ffn_dim))


# ---------------------------------------------------------------------------
# Scenario calibration against the reference table
# ---------------------------------------------------------------------------

def calibrate_tokens(cfg: ModelConfig, dense_mlp_gb: float,
                     weight_bytes: int = 1, act_bytes: int = 2) -> float:
    """Solve the token span that makes dense MLP traffic hit the anchor cell."""
    d, m = cfg.hidden_dim, cfg.ffn_dim
    per_layer = dense_mlp_gb * GIB / cfg.num_layers
    tokens = (per_layer - 3 * d * m * weight_bytes) / ((2 * d + 2 * m) * act_bytes)
    if tokens <= 0:
        raise ValueError("anchor smaller than the weight traffic alone")
    return tokens


def calibrate_keep(cfg: ModelConfig, tokens: float, sparse_mlp_gb: float,
                   weight_bytes: int = 1, act_bytes: int = 2) -> float:
    """Solve the realized keep fraction behind the sparse MLP traffic cell."""
    d, m = cfg.hidden_dim, cfg.ffn_dim
    per_layer = sparse_mlp_gb * GIB / cfg.num_layers
    keep = ((per_layer - tokens * 2 * d * act_bytes)
            / (3 * d * m * weight_bytes + tokens * 2 * m * act_bytes))
    if not 0 < keep <= 1:
        raise ValueError(f"calibrated keep {keep:.4f} outside (0, 1]")
    return keep


@dataclass
class Scenario:
    """A dense/sparse cost comparison plus its summary ratios."""

    preset: str
    dense: CostReport
    sparse: CostReport
    tokens_per_measure: float
    keep: np.ndarray
    sparsity: float

    @property
    def mlp_flop_ratio(self) -> float:
        return self.sparse.total_mlp_flops / self.dense.total_mlp_flops

    @property
    def mlp_byte_ratio(self) -> float:
        return self.sparse.total_mlp_bytes / self.dense.total_mlp_bytes

    def to_dict(self) -> dict:
        def side(rep: CostReport) -> dict:
            return {
                "attention_gb": rep.total_attention_bytes / GIB,
                "attention_tflop": rep.total_attention_flops / TFLOP,
                "mlp_gb": rep.total_mlp_bytes / GIB,
                "mlp_tflop": rep.total_mlp_flops / TFLOP,
            }

        return {
            "preset": self.preset,
            "sparsity": self.sparsity,
            "tokens_per_measure": self.tokens_per_measure,
            "mean_keep": float(self.keep.mean()),
            "dense": side(self.dense),
            "sparse": side(self.sparse),
            "ratios": {
                "mlp_flops": self.mlp_flop_ratio,
                "mlp_bytes": self.mlp_byte_ratio,
                "attention_flops": self.sparse.total_attention_flops
                / self.dense.total_attention_flops,
                "attention_bytes": self.sparse.total_attention_bytes
                / self.dense.total_attention_bytes,
            },
        }

    def table(self) -> str:
        d = self.to_dict()
        rows = [
            ("Attention", "Memory Access (GB)", d["dense"]["attention_gb"],
             d["sparse"]["attention_gb"]),
            ("Attention", "Compute (TFLOPs)", d["dense"]["attention_tflop"],
             d["sparse"]["attention_tflop"]),
            ("MLP", "Memory Access (GB)", d["dense"]["mlp_gb"], d["sparse"]["mlp_gb"]),
            ("MLP", "Compute (TFLOPs)", d["dense"]["mlp_tflop"], d["sparse"]["mlp_tflop"]),
        ]
        pct = int(round(self.sparsity * 100))
        lines = [f"{'Component':<10} {'Metric':<20} {'Dense':>10} {f'Sparse ({pct}%)':>14}"]
        lines.append("-" * len(lines[0]))
        for comp, metric, dense_v, sparse_v in rows:
            lines.append(f"{comp:<10} {metric:<20} {dense_v:>10.2f} {sparse_v:>14.2f}")
        lines.append("-" * len(lines[0]))
        lines.append(f"MLP sparse/dense ratios: bytes {self.mlp_byte_ratio:.4f}, "
                     f"flops {self.mlp_flop_ratio:.4f}")
        return "\n".join(lines)


def build_scenario(preset: str, sparsity: float, tokens: float | None = None,
                   keep: np.ndarray | float | None = None,
                   weight_bytes: int = 1, act_bytes: int = 2,
                   calibrated: bool = False) -> Scenario:
    """Dense/sparse comparison for one preset.

    With calibrated=True (llama presets only) the token span and the realized
    keep fraction are solved from the reference table anchors; otherwise the
    keep plan defaults to a uniform 1 - sparsity and tokens defaults to 128.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset]
    if calibrated:
        if preset not in ANCHORS:
            raise ValueError(f"no reference anchors for preset {preset!r}")
        anchor = ANCHORS[preset]
        tokens = calibrate_tokens(cfg, anchor.dense_mlp_gb, weight_bytes, act_bytes)
        keep = calibrate_keep(cfg, tokens, anchor.sparse_mlp_gb, weight_bytes, act_bytes)
        sparsity = anchor.nominal_sparsity
    if tokens is None:
        tokens = 128.0
    if keep is None:
        keep = 1.0 - sparsity
    keep_plan = np.full(cfg.num_layers, keep) if np.isscalar(keep) else np.asarray(keep)
    # a keep of exactly 0 is not executable (the pruner keeps >= 1 neuron)
    keep_plan = np.maximum(keep_plan, 1.0 / cfg.ffn_dim)
    dense = cost_report(uniform_params(cfg, tokens, 1.0, weight_bytes=weight_bytes,
                                       act_bytes=act_bytes))
    sparse = cost_report(CostParams(config=cfg, tokens_per_measure=tokens,
                                    keep=keep_plan, weight_bytes=weight_bytes,
                                    act_bytes=act_bytes))
    return Scenario(preset=preset, dense=dense, sparse=sparse,
                    tokens_per_measure=float(tokens), keep=keep_plan,
                    sparsity=float(sparsity))


def write_scenario_json(scenario: Scenario, path) -> None:
    with open(path, "w") as f:
        json.dump(scenario.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")

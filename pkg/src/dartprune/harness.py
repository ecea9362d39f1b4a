"""Experiment drivers: configured generation runs, per-layer pruning sweeps,
and drift-detector benchmarks.

Configuration is a flat key = value text file (# comments allowed) with
CLI flag overrides on top; the DART_SEED environment variable outranks
both. Every run derives all of its randomness from the single master seed:
synthetic weights use seed, the workload seed+1, the prompt seed+2.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .allocator import AllocatorParams, sensitivity
from .model import (ConfigError, ModelConfig, TransformerEngine, load_weights,
                    synth_model)
from .pruner import ImportanceAccumulator, build_mask
from .runtime import GenerationRun, RuntimeSettings, TraceWriter
from .tracer import DriftConfig, DriftDetector, drift_check, update_counter
from .workload import RegimeWorkload, stationary_stream, switch_stream

SEED_ENV_VAR = "DART_SEED"


@dataclass
class RunConfig:
    # model source: a weight file, or synthetic weights from the master seed
    model_file: str = ""
    num_layers: int = 4
    hidden_dim: int = 64
    ffn_dim: int = 256
    num_heads: int = 4
    num_kv_groups: int = 2
    head_dim: int = 16
    vocab_size: int = 256
    max_seq: int = 4096

    seed: int = 0
    sparsity: float = 0.5
    window: int = 10
    ref_windows: int = 8
    threshold_scale: float = 0.5
    counter_limit: int = 3

    min_ratio: float = 0.0
    max_ratio: float = 0.95
    early_scale: float = 0.25
    late_scale: float = 0.35
    early_width: float = 0.3
    late_width: float = 0.15

    prompt: str = ""          # comma-separated token ids; empty = random
    prompt_len: int = 16
    gen_len: int = 200

    regimes: int = 1
    switch_points: str = ""   # comma-separated absolute token indices
    bias_scale: float = 1.0
    noise_scale: float = 0.05

    sweep_sparsity: float = 0.7
    eval_len: int = 48

    bench_dim: int = 32
    bench_seeds: int = 20
    bench_windows: int = 50
    bench_switch_at: int = 120
    bench_noise: float = 0.05
    bench_mode: str = "cyclic"   # cyclic | iid noise for the vector streams

    trace: str = "trace.jsonl"
    summary: str = ""

    def validate(self) -> None:
        if self.regimes < 1:
            raise ConfigError("regimes must be >= 1")
        switches = self.switch_list()
        if len(switches) != self.regimes - 1:
            raise ConfigError(f"{self.regimes} regimes need {self.regimes - 1} "
                              f"switch points, got {len(switches)}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ConfigError(f"sparsity {self.sparsity} outside [0, 1]")
        if self.gen_len < 0 or self.prompt_len < 1:
            raise ConfigError("gen_len must be >= 0 and prompt_len >= 1")
        if self.bench_mode not in ("cyclic", "iid"):
            raise ConfigError(f"bench_mode must be cyclic or iid, got {self.bench_mode!r}")
        if self.model_file and not os.path.exists(self.model_file):
            raise ConfigError(f"model file not found: {self.model_file}")
        try:
            self.model_config()
            self.allocator_params()
            self.drift_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived pieces ------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(num_layers=self.num_layers, hidden_dim=self.hidden_dim,
                           ffn_dim=self.ffn_dim, num_heads=self.num_heads,
                           num_kv_groups=self.num_kv_groups, head_dim=self.head_dim,
                           vocab_size=self.vocab_size, max_seq=self.max_seq)

    def allocator_params(self, sparsity: float | None = None) -> AllocatorParams:
        return AllocatorParams(
            target_sparsity=self.sparsity if sparsity is None else sparsity,
            min_ratio=self.min_ratio, max_ratio=self.max_ratio,
            early_scale=self.early_scale, late_scale=self.late_scale,
            early_width=self.early_width, late_width=self.late_width)

    def drift_config(self) -> DriftConfig:
        return DriftConfig(window=self.window, ref_windows=self.ref_windows,
                           threshold_scale=self.threshold_scale,
                           counter_limit=self.counter_limit)

    def runtime_settings(self) -> RuntimeSettings:
        return RuntimeSettings(sparsity=self.sparsity,
                               allocator=self.allocator_params(),
                               drift=self.drift_config())

    def switch_list(self) -> list[int]:
        return [int(x) for x in self.switch_points.split(",") if x.strip()]

    def build_engine(self) -> TransformerEngine:
        if self.model_file:
            weights = load_weights(self.model_file)
        else:
            weights = synth_model(self.seed, self.model_config())
        return TransformerEngine(weights)

    def build_workload(self, engine: TransformerEngine) -> RegimeWorkload:
        return RegimeWorkload(dim=engine.config.hidden_dim, num_regimes=self.regimes,
                              switch_points=tuple(self.switch_list()),
                              bias_scale=self.bias_scale, noise_scale=self.noise_scale,
                              seed=self.seed + 1)

    def prompt_tokens(self, vocab_size: int) -> list[int]:
        if self.prompt.strip():
            tokens = [int(x) for x in self.prompt.split(",") if x.strip()]
            if any(not 0 <= t < vocab_size for t in tokens):
                raise ConfigError("prompt token outside the vocabulary")
            return tokens
        rng = np.random.default_rng(self.seed + 2)
        return [int(t) for t in rng.integers(0, vocab_size, size=self.prompt_len)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replay_dict(self) -> dict:
        """Config as embedded in trace headers: output paths excluded, so
        identical runs to different files produce identical bytes."""
        d = self.to_dict()
        d.pop("trace", None)
        d.pop("summary", None)
        return d


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then explicit overrides, then DART_SEED."""
    values: dict = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = _coerce(key, raw)
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    if os.environ.get(SEED_ENV_VAR):
        try:
            values["seed"] = int(os.environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"bad {SEED_ENV_VAR}: {exc}") from exc
    config = RunConfig(**values)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def run_generate(config: RunConfig, trace_path: str | None = None) -> dict:
    """Full pipeline run; writes the trace and returns the summary."""
    engine = config.build_engine()
    workload = config.build_workload(engine)
    prompt = config.prompt_tokens(engine.config.vocab_size)
    path = trace_path or config.trace
    with open(path, "w") as stream:
        writer = TraceWriter(stream)
        writer.write({"config": config.replay_dict()})
        run = GenerationRun(engine, config.runtime_settings(), workload)
        summary = run.run(prompt, config.gen_len, writer)
    result = summary.to_dict()
    result["trace"] = path
    result["config"] = config.to_dict()
    if config.summary:
        with open(config.summary, "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
            f.write("\n")
    return result


# ---------------------------------------------------------------------------
# layer sweep
# ---------------------------------------------------------------------------

def _teacher_forced_logits(engine: TransformerEngine, tokens: list[int],
                           masks, workload) -> np.ndarray:
    cache = engine.new_cache()
    logits = []
    for t, token in enumerate(tokens):
        bias = workload.bias(t) if workload is not None else None
        out, _ = engine.forward_token(token, cache, masks, bias)
        logits.append(out)
    return np.stack(logits)


def _greedy_continue(engine: TransformerEngine, prompt: list[int], masks,
                     workload, steps: int) -> list[int]:
    cache = engine.new_cache()
    token_stream = list(prompt)
    for t, token in enumerate(token_stream):
        bias = workload.bias(t) if workload is not None else None
        logits, _ = engine.forward_token(token, cache, masks, bias)
    generated = []
    for i in range(steps):
        token = engine.greedy_token(logits)
        generated.append(token)
        t = len(prompt) + i
        bias = workload.bias(t) if workload is not None else None
        logits, _ = engine.forward_token(token, cache, masks, bias)
    return generated


def _kl_divergence(ref_logits: np.ndarray, alt_logits: np.ndarray) -> float:
    """Mean KL(ref || alt) over positions, computed from logits in float64."""
    kls = []
    for ref, alt in zip(ref_logits, alt_logits):
        ref = np.asarray(ref, dtype=np.float64)
        alt = np.asarray(alt, dtype=np.float64)
        ref_log = ref - ref.max()
        ref_log -= np.log(np.exp(ref_log).sum())
        alt_log = alt - alt.max()
        alt_log -= np.log(np.exp(alt_log).sum())
        p = np.exp(ref_log)
        kls.append(float(np.sum(p * (ref_log - alt_log))))
    return float(np.mean(kls))


def _match_length(a: list[int], b: list[int]) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def run_layer_sweep(config: RunConfig, out_csv: str,
                    sweep_sparsity: float | None = None) -> list[dict]:
    """Prune one layer at a time and measure divergence from the dense run.

    Importance scores and sensitivities come from a dense pass over the
    collection span; each layer is then pruned alone (keep = 1 - sweep
    sparsity) and scored by mean KL on teacher-forced logits plus the
    exact-match length of its greedy continuation against the dense one.
    """
    ratio = config.sweep_sparsity if sweep_sparsity is None else sweep_sparsity
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"sweep sparsity {ratio} outside [0, 1]")
    engine = config.build_engine()
    cfg = engine.config
    workload = config.build_workload(engine)
    prompt = config.prompt_tokens(cfg.vocab_size)
    span = config.drift_config().ref_len

    # dense statistics pass over the collection span
    accs = [ImportanceAccumulator(cfg.ffn_dim, span) for _ in range(cfg.num_layers)]
    sens_acc = [[] for _ in range(cfg.num_layers)]
    cache = engine.new_cache()
    stream = list(prompt)
    logits = None
    for t in range(span):
        token = stream[t] if t < len(stream) else engine.greedy_token(logits)
        if t >= len(stream):
            stream.append(token)
        logits, trace = engine.forward_token(token, cache, None, workload.bias(t))
        for layer in range(cfg.num_layers):
            accs[layer].add(trace.ffn_hidden[layer])
            sens_acc[layer].append(sensitivity(trace.attn_out[layer],
                                               trace.block_out[layer]))

    eval_tokens = stream[:span]
    dense_logits = _teacher_forced_logits(engine, eval_tokens, None, workload)
    dense_cont = _greedy_continue(engine, eval_tokens, None, workload, config.eval_len)

    rows = []
    for layer in range(cfg.num_layers):
        masks = [None] * cfg.num_layers
        if ratio > 0:
            masks[layer] = build_mask(accs[layer].scores, 1.0 - ratio, layer=layer).bits
        pruned_logits = _teacher_forced_logits(engine, eval_tokens, masks, workload)
        pruned_cont = _greedy_continue(engine, eval_tokens, masks, workload,
                                       config.eval_len)
        rows.append({
            "layer": layer,
            "mean_kl": _kl_divergence(dense_logits, pruned_logits),
            "match_len": _match_length(dense_cont, pruned_cont),
            "mean_sensitivity": float(np.mean(sens_acc[layer])),
        })

    with open(out_csv, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["layer", "mean_kl", "match_len",
                                               "mean_sensitivity"])
        writer.writeheader()
        writer.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# detector bench
# ---------------------------------------------------------------------------

def _feed_detector(detector: DriftDetector, vectors: np.ndarray) -> list[dict]:
    """Run a vector stream through an initialized detector; one record per
    completed window."""
    records = []
    for i, v in enumerate(vectors):
        result = detector.step(v)
        if result.align is not None:
            records.append({
                "token": i + 1,
                "align": result.align,
                "triggered": bool(result.triggered),
                "counter": result.counter,
                "event": bool(result.reprune_requested),
            })
    return records


def run_detector_bench(config: RunConfig, trajectory_path: str | None = None) -> dict:
    """Detection delay on hard regime switches and false events on
    stationary streams, over bench_seeds seeded vector streams."""
    drift = config.drift_config()
    period = drift.window if config.bench_mode == "cyclic" else None
    ref_len = drift.ref_len
    switch_runs = []
    stationary_runs = []

    for s in range(config.bench_seeds):
        seed = config.seed + s
        # regime switch: reference span, pre-switch padding, then the switch
        total = ref_len + config.bench_switch_at + (drift.counter_limit + 2) * drift.window
        stream = switch_stream(config.bench_dim, total, ref_len + config.bench_switch_at,
                               seed, config.bench_noise, period)
        detector = DriftDetector(drift)
        detector.set_reference(stream[:ref_len])
        records = _feed_detector(detector, stream[ref_len:])
        switch_token = config.bench_switch_at
        event_tokens = [r["token"] for r in records if r["event"]]
        post = [t for t in event_tokens if t > switch_token]
        delay = post[0] - switch_token if post else None
        switch_runs.append({"seed": seed, "delay": delay,
                            "false_events": sum(1 for t in event_tokens
                                                if t <= switch_token),
                            "trajectory": records})

        # stationary stream of bench_windows windows
        length = ref_len + config.bench_windows * drift.window
        stream = stationary_stream(config.bench_dim, length, seed,
                                   config.bench_noise, period)
        detector = DriftDetector(drift)
        detector.set_reference(stream[:ref_len])
        records = _feed_detector(detector, stream[ref_len:])
        stationary_runs.append({
            "seed": seed,
            "events": sum(1 for r in records if r["event"]),
            "triggers": sum(1 for r in records if r["triggered"]),
            "windows": len(records),
            "trajectory": records,
        })

    delays = [r["delay"] for r in switch_runs if r["delay"] is not None]
    metrics = {
        "mode": config.bench_mode,
        "seeds": config.bench_seeds,
        "detected": len(delays),
        "max_delay": max(delays) if delays else None,
        "mean_delay": float(np.mean(delays)) if delays else None,
        "delay_bound": (drift.counter_limit + 1) * drift.window,
        "clean_stationary_seeds": sum(1 for r in stationary_runs if r["events"] == 0),
        "stationary_event_rate_per_window": float(
            np.mean([r["events"] / max(1, r["windows"]) for r in stationary_runs])),
        "switch_runs": switch_runs,
        "stationary_runs": stationary_runs,
        "drift": {"window": drift.window, "ref_windows": drift.ref_windows,
                  "threshold_scale": drift.threshold_scale,
                  "counter_limit": drift.counter_limit},
    }
    if trajectory_path:
        with open(trajectory_path, "w") as f:
            json.dump(metrics, f, indent=2, sort_keys=True)
            f.write("\n")
    return metrics


def replay_trigger_sequence(aligns: list[float], mu: float, sigma: float,
                            scale: float, counter_limit: int) -> list[dict]:
    """Recompute triggers/counters/events from recorded alignments; used to
    prove a trajectory file replays to identical metrics."""
    counter = 0
    out = []
    for align in aligns:
        triggered = drift_check(align, mu, sigma, scale)
        counter = update_counter(counter, triggered)
        event = counter >= counter_limit
        if event:
            counter = 0
        out.append({"align": align, "triggered": triggered,
                    "counter": counter, "event": event})
    return out

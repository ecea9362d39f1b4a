"""End-to-end pruned generation: statistics collection, mask construction,
drift-triggered reconstruction, and trace emission.

A run moves through four phases:

  warmup    — dense execution over the first collect_len tokens (prompt
              first, then greedy continuations) while accumulating neuron
              importance and layer sensitivities. Ends by building the
              initial budgets and masks.
  baseline  — masked execution over the next collect_len tokens, whose
              last-layer attention outputs become the drift reference.
              The detector must baseline on the execution mode it will
              monitor: masking itself shifts attention outputs by around
              a reference deviation at toy scale, so a dense-execution
              baseline would keep the trigger permanently hot.
  decode    — masked execution; the detector inspects each completed
              window and may request reconstruction.
  recollect — after a request: the window that fired is reused as the first
              chunk of a fresh collection span, the remaining tokens run
              dense, then budgets and masks are rebuilt from the full span
              and a new baseline phase starts. If generation ends early the
              rebuild happens from whatever was collected and the trace
              line is flagged partial.

Masks only ever change between token steps. Every token emits one JSON
trace line; lines where masks were (re)built carry the packed masks and
the allocated per-layer ratios, which is enough to replay a run.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .allocator import AllocatorParams, LayerBudget, build_budgets, sensitivity
from .model import TransformerEngine
from .pruner import ImportanceAccumulator, NeuronMask, build_mask, pack_mask
from .tracer import DriftConfig, DriftDetector


@dataclass(frozen=True)
class RuntimeSettings:
    sparsity: float = 0.5
    allocator: AllocatorParams = field(default_factory=AllocatorParams)
    drift: DriftConfig = field(default_factory=DriftConfig)

    def __post_init__(self):
        if self.allocator.target_sparsity != self.sparsity:
            object.__setattr__(self, "allocator",
                               AllocatorParams(**{**self.allocator.__dict__,
                                                  "target_sparsity": self.sparsity}))

    @property
    def collect_len(self) -> int:
        return self.drift.ref_len


class TraceWriter:
    """Append-only JSONL sink with deterministic serialization."""

    def __init__(self, stream):
        self._stream = stream
        self.lines = 0

    def write(self, record: dict) -> None:
        self._stream.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
        self._stream.write("\n")
        self.lines += 1


@dataclass
class RunSummary:
    prompt_len: int
    generated: int
    reprune_events: int
    mask_builds: int
    partial_rebuild: bool
    output_tokens: list[int]
    final_density: list[float]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class GenerationRun:
    """One generation stream through the pruning pipeline (single-writer)."""

    def __init__(self, engine: TransformerEngine, settings: RuntimeSettings,
                 workload=None):
        self.engine = engine
        self.settings = settings
        self.workload = workload
        cfg = engine.config
        span = settings.collect_len
        self.cache = engine.new_cache()
        self.detector = DriftDetector(settings.drift)
        self.masks: list[NeuronMask] | None = None
        self.budgets: list[LayerBudget] | None = None
        self._accs = [ImportanceAccumulator(cfg.ffn_dim, span)
                      for _ in range(cfg.num_layers)]
        self._sens_span: list[list[float]] = [[] for _ in range(cfg.num_layers)]
        self._baseline_span: list[np.ndarray] = []
        # most recent detection window, kept for reseeding after a trigger
        self._recent: deque = deque(maxlen=settings.drift.window)
        self.phase = "warmup"
        self.reprune_events = 0
        self.mask_builds = 0
        self.partial_rebuild = False

    # -- collection helpers -------------------------------------------------

    def _collect(self, step) -> None:
        for layer, hidden in enumerate(step.ffn_hidden):
            self._accs[layer].add(hidden)
        for layer, s in enumerate(step.sens):
            self._sens_span[layer].append(s)

    def _reset_collection(self) -> None:
        for acc in self._accs:
            acc.reset()
        self._sens_span = [[] for _ in self._accs]

    def _collected(self) -> int:
        return self._accs[0].tokens_seen

    def _seed_collection_from_recent(self) -> None:
        for step in self._recent:
            self._collect(step)

    def _rebuild(self) -> list[float]:
        """Budgets and masks from the current collection span."""
        mean_sens = [float(np.mean(s)) for s in self._sens_span]
        self.budgets = build_budgets(mean_sens, self.settings.allocator)
        self.masks = [build_mask(acc.scores, 1.0 - b.ratio, layer=i)
                      for i, (acc, b) in enumerate(zip(self._accs, self.budgets))]
        self.mask_builds += 1
        ratios = [b.ratio for b in self.budgets]
        self._reset_collection()
        return ratios

    # -- main loop ----------------------------------------------------------

    def run(self, prompt: list[int], gen_len: int, writer: TraceWriter | None = None
            ) -> RunSummary:
        if not prompt:
            raise ValueError("prompt must contain at least one token")
        engine, settings = self.engine, self.settings
        total = len(prompt) + gen_len
        output: list[int] = []
        next_token: int | None = None

        for t in range(total):
            token = prompt[t] if t < len(prompt) else next_token
            bias = self.workload.bias(t) if self.workload is not None else None
            phase_at_exec = self.phase
            masked = phase_at_exec in ("baseline", "decode") and self.masks is not None
            mask_arg = [m.bits for m in self.masks] if masked else None
            logits, trace = engine.forward_token(token, self.cache, mask_arg, bias)
            next_token = engine.greedy_token(logits)
            if t >= len(prompt):
                output.append(token)

            sens = [sensitivity(trace.attn_out[l], trace.block_out[l])
                    for l in range(engine.config.num_layers)]
            step = _Step(ffn_hidden=trace.ffn_hidden, sens=sens,
                         attn_out_last=np.asarray(trace.last_attention_output,
                                                  dtype=np.float64))
            self._recent.append(step)

            align = mu = sigma = None
            triggered = None
            event = False
            built_ratios = None

            if phase_at_exec in ("warmup", "recollect"):
                self._collect(step)
                if self._collected() == settings.collect_len:
                    built_ratios = self._rebuild()
                    self._baseline_span = []
                    self.phase = "baseline"
            elif phase_at_exec == "baseline":
                self._baseline_span.append(step.attn_out_last)
                if len(self._baseline_span) == settings.collect_len:
                    self.detector.set_reference(np.stack(self._baseline_span))
                    self._baseline_span = []
                    self.phase = "decode"
            elif phase_at_exec == "decode":
                result = self.detector.step(step.attn_out_last)
                align, triggered = result.align, result.triggered
                mu, sigma = self.detector.mu, self.detector.sigma
                if result.reprune_requested:
                    event = True
                    self.reprune_events += 1
                    self._reset_collection()
                    self._seed_collection_from_recent()
                    self.phase = "recollect"

            last_step = t == total - 1
            if last_step and self.phase == "recollect" and self._collected() > 0:
                # generation ends mid-collection: rebuild from what exists
                built_ratios = self._rebuild()
                self.partial_rebuild = True
                self.phase = "decode"

            if writer is not None:
                record = {
                    "t": t,
                    "token": int(token),
                    "phase": phase_at_exec,
                    "sens": [float(s) for s in sens],
                    "align": align,
                    "mu": mu,
                    "sigma": sigma,
                    "counter": self.detector.counter,
                    "trigger": triggered,
                    "event": event,
                    "density": [m.density for m in self.masks] if self.masks
                    else [1.0] * engine.config.num_layers,
                }
                if built_ratios is not None:
                    record["ratios"] = [float(r) for r in built_ratios]
                    record["masks"] = [pack_mask(m) for m in self.masks]
                    if self.partial_rebuild and last_step:
                        record["partial_rebuild"] = True
                writer.write(record)

        return RunSummary(
            prompt_len=len(prompt),
            generated=gen_len,
            reprune_events=self.reprune_events,
            mask_builds=self.mask_builds,
            partial_rebuild=self.partial_rebuild,
            output_tokens=output,
            final_density=[m.density for m in self.masks] if self.masks
            else [1.0] * engine.config.num_layers,
        )


@dataclass
class _Step:
    ffn_hidden: list[np.ndarray]
    sens: list[float]
    attn_out_last: np.ndarray

"""Context-aware dynamic FFN pruning for autoregressive transformer inference.

The pipeline: accumulate per-neuron importance over a token window, allocate
layer-wise pruning budgets from sensitivity statistics, mask low-importance
FFN neurons, and watch last-layer attention centroids for knowledge drift
that warrants rebuilding the masks mid-generation. An analytic cost model
accounts for the compute and memory-traffic effects.
"""

from .allocator import (AllocatorParams, InfeasibleBudgetError, LayerBudget,
                        allocate, build_budgets, depth_factor, depth_profile,
                        mean_sensitivity, relative_importance, sensitivity)
from .costmodel import (ANCHORS, PRESETS, CostParams, CostReport, Scenario,
                        attention_cost, build_scenario, mlp_cost)
from .model import (ConfigError, KvCache, LayerWeights, ModelConfig, ModelWeights,
                    StepTrace, TransformerEngine, load_weights, save_weights,
                    synth_model, weight_file_size)
from .pruner import (ImportanceAccumulator, NeuronMask, build_mask, mask_for_layer,
                     pack_mask, unpack_mask)
from .runtime import GenerationRun, RunSummary, RuntimeSettings, TraceWriter
from .tracer import (DriftConfig, DriftDetector, alignment, centroid, drift_check,
                     reference_stats, update_counter)
from .workload import RegimeWorkload, stationary_stream, switch_stream

__version__ = "0.1.0"

"""Command-line entry point.

Subcommands: generate, sweep, detect, cost, plot, synth-model.
Exit codes: 0 success, 2 configuration error, 3 infeasible pruning budget.
"""

from __future__ import annotations

import argparse
import json
import sys

from .allocator import InfeasibleBudgetError
from .costmodel import ANCHORS, PRESETS, build_scenario, write_scenario_json
from .harness import (RunConfig, load_config, run_detector_bench, run_generate,
                      run_layer_sweep)
from .model import ConfigError, save_weights, synth_model, weight_file_size

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

_OVERRIDE_FLAGS = [
    ("seed", int), ("sparsity", float), ("gen-len", int), ("prompt-len", int),
    ("window", int), ("ref-windows", int), ("threshold-scale", float),
    ("counter-limit", int), ("regimes", int), ("switch-points", str),
    ("bias-scale", float), ("noise-scale", float), ("model-file", str),
    ("num-layers", int), ("hidden-dim", int), ("ffn-dim", int),
    ("num-heads", int), ("num-kv-groups", int), ("head-dim", int),
    ("vocab-size", int), ("max-seq", int), ("min-ratio", float),
    ("max-ratio", float), ("bench-seeds", int), ("bench-dim", int),
    ("bench-windows", int), ("bench-switch-at", int), ("bench-mode", str),
    ("bench-noise", float), ("sweep-sparsity", float), ("eval-len", int),
]


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    for flag, kind in _OVERRIDE_FLAGS:
        parser.add_argument(f"--{flag}", type=kind, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {flag.replace("-", "_"): getattr(args, flag.replace("-", "_"))
                 for flag, _ in _OVERRIDE_FLAGS}
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dart",
        description="Dynamic FFN pruning engine with drift-triggered mask rebuilds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run pruned generation, emit a trace")
    _add_config_args(p)
    p.add_argument("--trace", help="trace JSONL output path")
    p.add_argument("--summary", help="summary JSON output path")

    p = sub.add_parser("sweep", help="prune one layer at a time, measure divergence")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="CSV output path")

    p = sub.add_parser("detect", help="drift-detector benchmark on vector streams")
    _add_config_args(p)
    p.add_argument("--out", help="metrics JSON output path")

    p = sub.add_parser("cost", help="analytic FLOP / memory-traffic comparison")
    p.add_argument("--preset", default="llama70b", choices=sorted(PRESETS))
    p.add_argument("--sparsity", type=float, default=0.7)
    p.add_argument("--tokens", type=float, default=None)
    p.add_argument("--weight-bytes", type=int, default=1)
    p.add_argument("--act-bytes", type=int, default=2)
    p.add_argument("--calibrated", action="store_true",
                   help="pin the scenario to the preset's reference anchors")
    p.add_argument("--json", dest="json_out", help="machine-readable output path")

    p = sub.add_parser("plot", help="render static images from run artifacts")
    p.add_argument("--trace", help="trace JSONL to plot")
    p.add_argument("--sweep", help="sweep CSV to plot")
    p.add_argument("--detect", help="detector metrics JSON to plot")
    p.add_argument("--out-dir", default=".", help="directory for images")

    p = sub.add_parser("synth-model", help="write reproducible synthetic weights")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="weight file path")
    return parser


def _cmd_generate(args) -> int:
    config = _config_from_args(args)
    if args.summary:
        config.summary = args.summary
    result = run_generate(config, trace_path=args.trace)
    printable = {k: v for k, v in result.items() if k != "config"}
    print(json.dumps(printable, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _config_from_args(args)
    rows = run_layer_sweep(config, args.out)
    for row in rows:
        print(f"layer {row['layer']:3d}  mean_kl {row['mean_kl']:.6f}  "
              f"match_len {row['match_len']:3d}  "
              f"mean_sensitivity {row['mean_sensitivity']:.6f}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    config = _config_from_args(args)
    metrics = run_detector_bench(config, trajectory_path=args.out)
    brief = {k: metrics[k] for k in ("mode", "seeds", "detected", "max_delay",
                                     "mean_delay", "delay_bound",
                                     "clean_stationary_seeds",
                                     "stationary_event_rate_per_window")}
    print(json.dumps(brief, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_cost(args) -> int:
    if args.calibrated and args.preset not in ANCHORS:
        raise ConfigError(f"preset {args.preset!r} has no reference anchors")
    scenario = build_scenario(args.preset, args.sparsity, tokens=args.tokens,
                              weight_bytes=args.weight_bytes,
                              act_bytes=args.act_bytes, calibrated=args.calibrated)
    print(scenario.table())
    if args.json_out:
        write_scenario_json(scenario, args.json_out)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from . import plotting
    import os
    if not (args.trace or args.sweep or args.detect):
        raise ConfigError("plot needs at least one of --trace/--sweep/--detect")
    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    if args.trace:
        out = os.path.join(args.out_dir, "alignment.png")
        plotting.plot_alignment(args.trace, out)
        written.append(out)
        out = os.path.join(args.out_dir, "density.png")
        plotting.plot_density(args.trace, out)
        written.append(out)
    if args.sweep:
        out = os.path.join(args.out_dir, "sweep.png")
        plotting.plot_sweep(args.sweep, out)
        written.append(out)
    if args.detect:
        out = os.path.join(args.out_dir, "trajectories.png")
        plotting.plot_trajectories(args.detect, out)
        written.append(out)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_synth_model(args) -> int:
    config = _config_from_args(args)
    model_cfg = config.model_config()
    weights = synth_model(config.seed, model_cfg)
    save_weights(args.out, weights)
    print(f"{args.out}: {weight_file_size(model_cfg)} bytes "
          f"(seed {config.seed}, {model_cfg.num_layers} layers)")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "sweep": _cmd_sweep,
    "detect": _cmd_detect,
    "cost": _cmd_cost,
    "plot": _cmd_plot,
    "synth-model": _cmd_synth_model,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleBudgetError as exc:
        print(f"infeasible budget: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

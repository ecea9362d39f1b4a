"""Static plots from trace files, sweep tables and detector trajectories."""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_trace(path: str) -> tuple[dict, list[dict]]:
    """Parse a JSONL trace: header config line plus one record per token."""
    records = []
    header = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed trace line: {exc}") from exc
            if lineno == 1 and "config" in obj:
                header = obj["config"]
                continue
            if "t" not in obj:
                raise ValueError(f"{path}:{lineno}: trace line missing token index")
            records.append(obj)
    if not records:
        raise ValueError(f"{path}: no trace records")
    return header or {}, records


def plot_alignment(trace_path: str, out_path: str) -> None:
    """Per-window alignment trajectory with the trigger threshold and events."""
    header, records = read_trace(trace_path)
    ts = [r["t"] for r in records if r.get("align") is not None]
    aligns = [r["align"] for r in records if r.get("align") is not None]
    events = [r["t"] for r in records if r.get("event")]
    fig, ax = plt.subplots(figsize=(8, 4))
    if ts:
        ax.plot(ts, aligns, marker="o", ms=3, lw=1, label="window alignment")
        mus = [r["mu"] for r in records if r.get("align") is not None]
        sigmas = [r["sigma"] for r in records if r.get("align") is not None]
        scale = float(header.get("threshold_scale", 0.5))
        thresh = [m - scale * s for m, s in zip(mus, sigmas)]
        ax.plot(ts, mus, lw=1, ls="--", color="gray", label="reference mean")
        ax.plot(ts, thresh, lw=1, ls=":", color="red", label="trigger threshold")
    for i, t in enumerate(events):
        ax.axvline(t, color="red", alpha=0.5, lw=1,
                   label="mask rebuild" if i == 0 else None)
    ax.set_xlabel("token")
    ax.set_ylabel("cosine alignment")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_density(trace_path: str, out_path: str) -> None:
    """Active-neuron density per layer over time."""
    _, records = read_trace(trace_path)
    density = np.array([r["density"] for r in records]).T
    fig, ax = plt.subplots(figsize=(8, 3))
    im = ax.imshow(density, aspect="auto", origin="lower", cmap="viridis",
                   vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_xlabel("token")
    ax.set_ylabel("layer")
    fig.colorbar(im, ax=ax, label="keep density")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_sweep(csv_path: str, out_path: str) -> None:
    """Per-layer divergence bars from a sweep table."""
    with open(csv_path) as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{csv_path}: empty sweep table")
    layers = [int(r["layer"]) for r in rows]
    kls = [float(r["mean_kl"]) for r in rows]
    sens = [float(r["mean_sensitivity"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.bar(layers, kls, color="steelblue")
    ax1.set_ylabel("mean KL vs dense")
    ax2.bar(layers, sens, color="darkorange")
    ax2.set_ylabel("mean sensitivity")
    ax2.set_xlabel("pruned layer")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_trajectories(metrics_path: str, out_path: str) -> None:
    """Alignment trajectories of the detector bench's switch runs."""
    with open(metrics_path) as f:
        metrics = json.load(f)
    runs = metrics.get("switch_runs", [])
    if not runs:
        raise ValueError(f"{metrics_path}: no switch runs recorded")
    fig, ax = plt.subplots(figsize=(8, 4))
    for run in runs[:8]:
        tokens = [r["token"] for r in run["trajectory"]]
        aligns = [r["align"] for r in run["trajectory"]]
        ax.plot(tokens, aligns, lw=1, alpha=0.7)
    ax.set_xlabel("token")
    ax.set_ylabel("cosine alignment")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)

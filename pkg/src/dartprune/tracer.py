"""Knowledge-drift detection over last-layer attention outputs.

The detector watches the stream of attention-block outputs from the final
layer. A reference span of ref_windows * window tokens defines a semantic
centroid plus the mean/deviation of per-window alignments to it. During
generation, each completed window's centroid is compared against the
reference; alignments falling more than threshold_scale deviations below
the mean count as drift. A counter accumulates evidence (+1 on drift, -1
toward zero otherwise) and requests mask reconstruction once it reaches
counter_limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import cosine


def centroid(vectors) -> np.ndarray:
    """Arithmetic mean vector (float64 accumulation)."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("centroid needs a nonempty list of equal-length vectors")
    return arr.mean(axis=0)


def alignment(window_centroid: np.ndarray, ref_centroid: np.ndarray) -> float:
    return cosine(window_centroid, ref_centroid)


def reference_stats(vectors, window: int) -> tuple[np.ndarray, float, float]:
    """Centroid plus per-window alignment mean/deviation of a reference span.

    The span is partitioned into consecutive non-overlapping windows; the
    deviation uses the window count as divisor. At least two windows are
    required, otherwise the deviation is meaningless for thresholding.
    """
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("reference span must be a list of equal-length vectors")
    total = arr.shape[0]
    if window < 1 or total % window != 0:
        raise ValueError(f"span length {total} not divisible by window {window}")
    count = total // window
    if count < 2:
        raise ValueError(f"need at least 2 windows in the reference span, got {count}")
    ref = centroid(arr)
    aligns = np.array([alignment(centroid(arr[i * window:(i + 1) * window]), ref)
                       for i in range(count)])
    mu = float(aligns.mean())
    sigma = float(np.sqrt(np.mean((aligns - mu) ** 2)))
    return ref, mu, sigma


def drift_check(align: float, mu: float, sigma: float, scale: float) -> bool:
    """True when the alignment sits scale*sigma or more below the mean.

    With sigma == 0 (a perfectly stationary reference) any strict decrease
    counts; equality does not, so exactly-repeating streams never trigger.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return align < mu
    return align - mu <= -scale * sigma


def update_counter(count: int, triggered: bool) -> int:
    if count < 0:
        raise ValueError("counter must be nonnegative")
    return count + 1 if triggered else max(0, count - 1)


@dataclass(frozen=True)
class DriftConfig:
    window: int = 10          # tokens per detection window
    ref_windows: int = 8      # windows in the reference span
    threshold_scale: float = 0.5
    counter_limit: int = 3

    def __post_init__(self):
        if self.window < 1 or self.ref_windows < 2:
            raise ValueError("window must be >= 1 and ref_windows >= 2")
        if self.threshold_scale < 0 or self.counter_limit < 1:
            raise ValueError("threshold_scale must be >= 0 and counter_limit >= 1")

    @property
    def ref_len(self) -> int:
        return self.window * self.ref_windows


@dataclass
class WindowResult:
    """Outcome of feeding one attention vector to the detector."""

    align: float | None = None      # set on window boundaries
    triggered: bool | None = None
    counter: int = 0
    reprune_requested: bool = False


class DriftDetector:
    """Single-stream drift state: reference stats, window buffer, counter."""

    def __init__(self, config: DriftConfig):
        self.config = config
        self.ref_centroid: np.ndarray | None = None
        self.mu = 0.0
        self.sigma = 0.0
        self.counter = 0
        self._buffer: list[np.ndarray] = []

    @property
    def initialized(self) -> bool:
        return self.ref_centroid is not None

    def set_reference(self, vectors) -> None:
        """(Re)baseline from a span of ref_len attention outputs."""
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.shape[0] != self.config.ref_len:
            raise ValueError(f"reference span must hold {self.config.ref_len} vectors, "
                             f"got {arr.shape[0]}")
        self.ref_centroid, self.mu, self.sigma = reference_stats(arr, self.config.window)
        self.counter = 0
        self._buffer.clear()

    def step(self, attn_out: np.ndarray) -> WindowResult:
        """Buffer one attention output; evaluate drift when a window completes.

        A reprune request resets the counter; the caller is expected to
        rebaseline via set_reference once new masks exist.
        """
        if not self.initialized:
            raise RuntimeError("detector not initialized with reference stats")
        self._buffer.append(np.asarray(attn_out, dtype=np.float64))
        if len(self._buffer) < self.config.window:
            return WindowResult(counter=self.counter)
        window_centroid = centroid(self._buffer)
        self._buffer.clear()
        align = alignment(window_centroid, self.ref_centroid)
        triggered = drift_check(align, self.mu, self.sigma, self.config.threshold_scale)
        self.counter = update_counter(self.counter, triggered)
        requested = self.counter >= self.config.counter_limit
        if requested:
            self.counter = 0
        return WindowResult(align=align, triggered=triggered,
                            counter=self.counter, reprune_requested=requested)

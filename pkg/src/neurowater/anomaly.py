"""Streaming mean + k-sigma anomaly detection, anomaly injection and scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .series import TimeSeries

NORMAL = "normal"
ANOMALY = "anomaly"
WARMUP = "warmup"

ZERO_STD = 1e-9


@dataclass(frozen=True, eq=False)
class SigmaDetector:
    """Trailing-window detector for consumption excesses.

    ``values`` holds the most recent accepted samples as a read-only array.
    Values flagged as anomalous are never added to it, so a burst or leak
    cannot inflate the baseline statistics and hide itself.
    """

    window: int = 168
    k: float = 3.0
    min_samples: int | None = None
    values: np.ndarray = ()

    def __post_init__(self):
        if self.window < 2:
            raise ConfigurationError("window must be >= 2")
        if self.k <= 0:
            raise ConfigurationError("k must be > 0")
        if self.min_samples is None:
            object.__setattr__(self, "min_samples", self.window)
        if not 2 <= self.min_samples <= self.window:
            raise ConfigurationError("min_samples must lie in [2, window]")
        v = np.array(self.values, dtype=np.float64).reshape(-1)[-self.window:]
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, SigmaDetector):
            return NotImplemented
        return ((self.window, self.k, self.min_samples) == (other.window, other.k, other.min_samples)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def count(self) -> int:
        return len(self.values)

    @cached_property
    def mean(self) -> float:
        return float(np.mean(self.values)) if len(self.values) else 0.0

    @cached_property
    def std(self) -> float:
        # sample standard deviation of the window
        if len(self.values) < 2:
            return 0.0
        return float(np.std(self.values, ddof=1))

    def threshold(self) -> float:
        return self.mean + self.k * self.std

    def push(self, value: float) -> "SigmaDetector":
        """Detector with ``value`` appended to the window (oldest sample dropped)."""
        v = self.values
        keep = v[1:] if len(v) >= self.window else v
        out = object.__new__(SigmaDetector)
        arr = np.append(keep, float(value))
        arr.setflags(write=False)
        for name, val in (("window", self.window), ("k", self.k),
                          ("min_samples", self.min_samples), ("values", arr)):
            object.__setattr__(out, name, val)
        return out


def classify(det: SigmaDetector, value: float) -> str:
    """Verdict for ``value`` against the detector's current window."""
    if det.count < det.min_samples:
        return WARMUP
    mu, sd = det.mean, det.std
    if sd < ZERO_STD:
        return ANOMALY if value - mu > ZERO_STD else NORMAL
    return ANOMALY if value > mu + det.k * sd else NORMAL


def update_and_classify(det: SigmaDetector, value: float) -> tuple[SigmaDetector, str]:
    if not math.isfinite(value):
        raise ConfigurationError(f"non-finite value {value!r}")
    verdict = classify(det, value)
    if verdict == ANOMALY:
        return det, verdict
    return det.push(value), verdict


def run_detector(det: SigmaDetector, stream: Iterable[float]) -> tuple[SigmaDetector, list[str]]:
    verdicts = []
    for v in stream:
        det, verdict = update_and_classify(det, float(v))
        verdicts.append(verdict)
    return det, verdicts


# ---------------------------------------------------------------------------
# Injection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    start_tick: int
    duration_ticks: int
    magnitude: float

    def __post_init__(self):
        if self.kind not in ("burst", "leak"):
            raise ConfigurationError(f"anomaly kind must be burst or leak, got {self.kind!r}")
        if self.start_tick < 0:
            raise ConfigurationError("start_tick must be >= 0")
        if self.duration_ticks < 1:
            raise ConfigurationError("duration_ticks must be >= 1")
        if self.magnitude <= 0:
            raise ConfigurationError("magnitude must be > 0")

    @property
    def stop_tick(self) -> int:
        return self.start_tick + self.duration_ticks

    def to_dict(self):
        return {"kind": self.kind, "start_tick": self.start_tick,
                "duration_ticks": self.duration_ticks, "magnitude": self.magnitude}


def inject(s: TimeSeries, spec: AnomalySpec) -> tuple[TimeSeries, list[int]]:
    """Add ``spec.magnitude`` over ``[start, start + duration)``.

    Bursts and leaks share the arithmetic; the kind only labels the event.
    """
    if spec.stop_tick > len(s):
        raise ConfigurationError(
            f"anomaly [{spec.start_tick}, {spec.stop_tick}) exceeds series length {len(s)}"
        )
    sl = slice(spec.start_tick, spec.stop_tick)
    if not s.present[sl].all():
        raise PreconditionError("anomaly interval contains MISSING samples")
    values = np.array(s.values)
    values[sl] += spec.magnitude
    return s.with_values(values, s.present), list(range(spec.start_tick, spec.stop_tick))


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionReport:
    true_positives: int
    false_positives: int
    misses: int
    latencies: tuple
    false_positive_rate: float

    @property
    def mean_latency(self) -> float | None:
        return float(np.mean(self.latencies)) if self.latencies else None

    def to_dict(self):
        return {
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "misses": self.misses,
            "latencies": list(self.latencies),
            "false_positive_rate": self.false_positive_rate,
        }


def evaluate(verdicts: Sequence[str], events: Sequence) -> DetectionReport:
    """Score a verdict stream against ground-truth intervals.

    ``events`` holds :class:`AnomalySpec` objects or ``(start, stop)`` pairs
    with ``stop`` exclusive.
    """
    intervals = [(e.start_tick, e.stop_tick) if isinstance(e, AnomalySpec) else tuple(e)
                 for e in events]
    inside = np.zeros(len(verdicts), dtype=bool)
    tp = 0
    latencies = []
    for start, stop in intervals:
        inside[start:stop] = True
        hits = [t for t in range(start, min(stop, len(verdicts))) if verdicts[t] == ANOMALY]
        if hits:
            tp += 1
            latencies.append(hits[0] - start)
    fp = 0
    scored_outside = 0
    for t, v in enumerate(verdicts):
        if inside[t] or v == WARMUP:
            continue
        scored_outside += 1
        fp += v == ANOMALY
    rate = fp / scored_outside if scored_outside else 0.0
    return DetectionReport(tp, fp, len(intervals) - tp, tuple(latencies), rate)

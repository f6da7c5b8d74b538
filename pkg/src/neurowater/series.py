"""Consumption time series: data model, synthetic generation, lossy sampling
and preprocessing.

Missing samples are carried in an explicit boolean ``present`` mask next to
the value array. Values at missing positions are kept at 0.0 and never read.
Use :data:`MISSING` when building a series from a Python list.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    ConfigurationError,
    PreconditionError,
    UnrecoverableDataError,
)

SECONDS_PER_DAY = 86_400
SECONDS_PER_WEEK = 7 * SECONDS_PER_DAY
# 2024-01-01T00:00:00Z, a midnight, so daily phase 0 is the start of a day.
DEFAULT_START = 1_704_067_200
ZERO_STD = 1e-9


class _Missing:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled consumption (liters per interval).

    Sample ``k`` is taken at ``start_time + k * step``.
    """

    start_time: int
    step: int
    values: np.ndarray
    present: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ConfigurationError("values must be one-dimensional")
        if len(values) < 1:
            raise ConfigurationError("a series needs at least one sample")
        if int(self.step) != self.step or self.step <= 0:
            raise ConfigurationError(f"step must be a positive integer, got {self.step!r}")
        if self.present is None:
            present = np.ones(len(values), dtype=bool)
        else:
            present = np.asarray(self.present, dtype=bool)
            if present.shape != values.shape:
                raise ConfigurationError("present mask must match values in length")
        values = np.where(present, values, 0.0)
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("present samples must be finite")
        if np.any(values < 0):
            raise ConfigurationError("consumption samples must be nonnegative")
        object.__setattr__(self, "start_time", int(self.start_time))
        object.__setattr__(self, "step", int(self.step))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "present", _readonly(present))

    @classmethod
    def from_samples(cls, samples: Iterable, start_time: int = DEFAULT_START, step: int = 3600):
        """Build a series from floats and :data:`MISSING` markers."""
        samples = list(samples)
        present = [s is not MISSING for s in samples]
        values = [float(s) if p else 0.0 for s, p in zip(samples, present)]
        return cls(start_time, step, np.array(values), np.array(present))

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.start_time == other.start_time
            and self.step == other.step
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @property
    def timestamps(self) -> np.ndarray:
        return self.start_time + self.step * np.arange(len(self), dtype=np.int64)

    @property
    def n_missing(self) -> int:
        return int(len(self) - np.count_nonzero(self.present))

    @property
    def complete(self) -> bool:
        return bool(self.present.all())

    def samples(self) -> list:
        """Values as a list with :data:`MISSING` at absent positions."""
        return [float(v) if p else MISSING for v, p in zip(self.values, self.present)]

    def require_complete(self, what: str = "operation"):
        if not self.complete:
            raise PreconditionError(
                f"{what} needs a series without MISSING samples "
                f"({self.n_missing} missing); fill gaps first"
            )

    def slice(self, start: int, stop: int | None = None) -> "TimeSeries":
        stop = len(self) if stop is None else stop
        return TimeSeries(
            self.start_time + start * self.step,
            self.step,
            self.values[start:stop],
            self.present[start:stop],
        )

    def with_values(self, values, present=None) -> "TimeSeries":
        return TimeSeries(self.start_time, self.step, values, present)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    days: int = 60
    step: int = 3600
    base_level: float = 100.0
    daily_amplitude: float = 30.0
    weekly_amplitude: float = 10.0
    weather_coupling: float = 0.0
    noise_std: float = 10.0
    seed: int = 0
    start_time: int = DEFAULT_START

    def __post_init__(self):
        if self.days < 1:
            raise ConfigurationError("days must be >= 1")
        if self.step <= 0 or SECONDS_PER_DAY % self.step:
            raise ConfigurationError("step must be a positive divisor of one day")
        if self.base_level < 0:
            raise ConfigurationError("base_level must be >= 0")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")

    @property
    def n_samples(self) -> int:
        return self.days * SECONDS_PER_DAY // self.step


@dataclass(frozen=True)
class Weather:
    temperature: TimeSeries
    reference_temp: float = 15.0

    def __post_init__(self):
        if not self.temperature.complete:
            raise ConfigurationError("temperature series may not have MISSING samples")


def make_weather(n: int, step: int = 3600, start_time: int = DEFAULT_START,
                 mean_temp: float = 15.0, daily_swing: float = 5.0,
                 noise_std: float = 0.0, reference_temp: float = 15.0,
                 seed: int = 0) -> Weather:
    """Synthetic temperature: daily cycle peaking mid-afternoon plus noise.

    Temperatures may be negative in principle, so the series is stored as an
    offset from a floor far below any realistic value.
    """
    rng = np.random.default_rng(seed)
    t = start_time + step * np.arange(n, dtype=np.int64)
    phase = 2 * np.pi * ((t - 9 * 3600) % SECONDS_PER_DAY) / SECONDS_PER_DAY
    temp = mean_temp + daily_swing * np.sin(phase) + noise_std * rng.standard_normal(n)
    return Weather(_TempSeries(start_time, step, temp), reference_temp)


class _TempSeries(TimeSeries):
    """Temperature series; unlike consumption it may go below zero."""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "start_time", int(self.start_time))
        object.__setattr__(self, "step", int(self.step))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "present", _readonly(np.ones(len(values), dtype=bool)))


def constant_weather(n: int, step: int = 3600, start_time: int = DEFAULT_START,
                     temp: float = 15.0) -> Weather:
    return Weather(_TempSeries(start_time, step, np.full(n, temp)), temp)


def seasonal_profile(cfg: GeneratorConfig, weather: Weather) -> np.ndarray:
    """Noise-free consumption for ``cfg`` (may be negative if misconfigured)."""
    n = cfg.n_samples
    if len(weather.temperature) != n:
        raise ConfigurationError(
            f"weather has {len(weather.temperature)} samples, horizon needs {n}"
        )
    if weather.temperature.step != cfg.step or weather.temperature.start_time != cfg.start_time:
        raise ConfigurationError("weather must share start_time and step with the generator")
    t = cfg.start_time + cfg.step * np.arange(n, dtype=np.int64)
    daily = np.sin(2 * np.pi * (t % SECONDS_PER_DAY) / SECONDS_PER_DAY)
    weekly = np.sin(2 * np.pi * (t % SECONDS_PER_WEEK) / SECONDS_PER_WEEK)
    temp = np.asarray(weather.temperature.values)
    return (
        cfg.base_level
        + cfg.daily_amplitude * daily
        + cfg.weekly_amplitude * weekly
        + cfg.weather_coupling * (temp - weather.reference_temp)
    )


def generate_consumption(cfg: GeneratorConfig, weather: Weather | None = None) -> TimeSeries:
    """Deterministic synthetic hourly (or finer) consumption for one meter."""
    if weather is None:
        weather = constant_weather(cfg.n_samples, cfg.step, cfg.start_time)
    clean = seasonal_profile(cfg, weather)
    if clean.min() < -1e-9:
        raise ConfigurationError(
            "amplitudes/weather coupling drive the noiseless signal below zero "
            f"(min {clean.min():.3f}); lower amplitudes or raise base_level"
        )
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal(cfg.n_samples) * cfg.noise_std
    return TimeSeries(cfg.start_time, cfg.step, np.maximum(0.0, clean + noise))


# ---------------------------------------------------------------------------
# Lossy uplink and preprocessing
# ---------------------------------------------------------------------------


def apply_loss(s: TimeSeries, loss_prob: float, seed: int) -> TimeSeries:
    """Drop each sample independently with probability ``loss_prob``."""
    if not 0.0 <= loss_prob <= 1.0:
        raise ConfigurationError(f"loss_prob must lie in [0, 1], got {loss_prob}")
    s.require_complete("apply_loss")
    rng = np.random.default_rng(seed)
    lost = rng.random(len(s)) < loss_prob
    return s.with_values(s.values, ~lost)


def fill_gaps(s: TimeSeries, method: str = "linear") -> TimeSeries:
    """Reconstruct MISSING samples.

    ``linear`` interpolates between the nearest present neighbours,
    ``hold_last`` repeats the previous present value. Leading gaps take the
    first present value and trailing gaps the last one under both methods.
    """
    if method not in ("linear", "hold_last"):
        raise ConfigurationError(f"unknown fill method {method!r}")
    idx = np.flatnonzero(s.present)
    if len(idx) == 0:
        raise UnrecoverableDataError("every sample is MISSING; nothing to fill from")
    if len(idx) == len(s):
        return s
    values = np.array(s.values)
    gaps = np.flatnonzero(~s.present)
    if method == "linear":
        values[gaps] = np.interp(gaps, idx, values[idx])
    else:
        # index of the last present sample at or before each gap
        prev = np.searchsorted(idx, gaps, side="right") - 1
        values[gaps] = values[idx[np.maximum(prev, 0)]]
    return s.with_values(values)


def remove_outliers(s: TimeSeries, window: int = 24, k: float = 3.0) -> TimeSeries:
    """Mark samples far from their trailing statistics as MISSING.

    A present sample is an outlier when it deviates from the mean of the
    previous ``window`` accepted samples by more than ``k`` standard
    deviations. Samples without a full trailing window are kept. Flagged
    samples do not enter later windows. Against a zero-spread window any
    deviation beyond ``1e-9`` counts, so constant stretches pass unchanged.
    """
    if window < 2:
        raise ConfigurationError("window must be >= 2")
    if k <= 0:
        raise ConfigurationError("k must be > 0")
    present = np.array(s.present)
    accepted: list[float] = []
    for i, (v, p) in enumerate(zip(s.values, s.present)):
        if not p:
            continue
        if len(accepted) >= window:
            w = np.asarray(accepted[-window:])
            mu = w.mean()
            sd = w.std()
            # zero spread: any deviation at all is an outlier, a repeat is not
            limit = k * sd if sd > ZERO_STD else ZERO_STD
            if abs(v - mu) > limit:
                present[i] = False
                continue
        accepted.append(float(v))
    return s.with_values(s.values, present)


def aggregate(s: TimeSeries, factor: int) -> TimeSeries:
    """Sum consecutive blocks of ``factor`` samples (e.g. hourly -> daily)."""
    if int(factor) != factor or factor < 1:
        raise ConfigurationError("factor must be a positive integer")
    s.require_complete("aggregate")
    n_out = len(s) // factor
    if n_out < 1:
        raise PreconditionError(f"series of length {len(s)} is shorter than factor {factor}")
    if factor == 1:
        return s
    blocks = np.asarray(s.values[: n_out * factor]).reshape(n_out, factor)
    sums = np.array([math.fsum(b) for b in blocks])
    return TimeSeries(s.start_time, s.step * factor, sums)


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

CSV_HEADER = ("timestamp", "meter_id", "value")


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def write_csv(target, series: Mapping[str, TimeSeries]):
    """Write one or more meters' series in ``timestamp,meter_id,value`` form.

    ``target`` is a path or a text stream. Values are written with ``repr``
    so that reading them back is bit-exact.
    """
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="") as fh:
            return write_csv(fh, series)
    w = csv.writer(target, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for meter_id, s in series.items():
        for t, v, p in zip(s.timestamps, s.values, s.present):
            w.writerow([int(t), meter_id, repr(float(v)) if p else ""])


def read_csv(source, default_step: int = 3600) -> dict[str, TimeSeries]:
    """Parse ``timestamp,meter_id,value`` rows into one series per meter.

    Empty value fields, and timestamps absent from an otherwise regular grid,
    become MISSING. The step is the smallest spacing seen for the meter.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_csv(fh, default_step)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ConfigurationError(f"expected CSV header {','.join(CSV_HEADER)}, got {header}")
    rows: dict[str, dict[int, float | None]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ConfigurationError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            ts = _parse_timestamp(row[0])
            value = float(row[2]) if row[2].strip() else None
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: {exc}") from None
        rows.setdefault(row[1], {})[ts] = value
    out = {}
    for meter_id, samples in rows.items():
        times = sorted(samples)
        diffs = np.diff(times)
        step = int(diffs.min()) if len(diffs) else default_step
        if step <= 0 or any(d % step for d in diffs):
            raise ConfigurationError(f"meter {meter_id}: timestamps are not on a regular grid")
        n = (times[-1] - times[0]) // step + 1
        values = np.zeros(n)
        present = np.zeros(n, dtype=bool)
        for t in times:
            v = samples[t]
            if v is not None:
                k = (t - times[0]) // step
                values[k] = v
                present[k] = True
        out[meter_id] = TimeSeries(times[0], step, values, present)
    return out


def to_csv_string(series: Mapping[str, TimeSeries]) -> str:
    buf = io.StringIO()
    write_csv(buf, series)
    return buf.getvalue()

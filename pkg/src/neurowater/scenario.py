"""Scenario configuration, series construction and end-to-end runs.

A scenario is a YAML document. Every random stream is seeded from the
master ``seed`` via :func:`~neurowater.seeding.derive_seed` and a component
path such as ``edge/4/noise``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import anomaly as anom
from .errors import ConfigurationError
from .forecast import NvarSpec, hourly_daily_mape
from .netsim import (
    EVENT_DRIVEN,
    FOG,
    EDGE,
    PERIODIC,
    ChannelModel,
    InferenceParams,
    SimMetrics,
    SimParams,
    Topology,
    build_network,
    detection_latency,
    run_network,
)
from .seeding import derive_seed
from .series import (
    DEFAULT_START,
    SECONDS_PER_DAY,
    GeneratorConfig,
    apply_loss,
    fill_gaps,
    generate_consumption,
    make_weather,
)

MODES = (EVENT_DRIVEN, PERIODIC)


class ScenarioError(ConfigurationError):
    """Scenario file is unreadable or names an invalid field."""


@dataclass(frozen=True)
class TopologyConfig:
    n_fogs: int = 3
    edges_per_fog: int = 10

    @property
    def n_edges(self) -> int:
        return self.n_fogs * self.edges_per_fog


@dataclass(frozen=True)
class DemandConfig:
    step: int = 3600
    base_level: float = 100.0
    daily_amplitude: float = 30.0
    weekly_amplitude: float = 10.0
    weather_coupling: float = 1.0
    noise_std: float = 10.0
    # each edge's base level (and amplitudes with it) is scaled by 1 + spread * U(-1, 1)
    base_level_spread: float = 0.3


@dataclass(frozen=True)
class WeatherConfig:
    mean_temp: float = 15.0
    daily_swing: float = 5.0
    noise_std: float = 1.0
    reference_temp: float = 15.0


@dataclass(frozen=True)
class ChannelConfig:
    loss_prob: float = 0.05
    delay_ticks: int = 1

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ScenarioError(f"channel.loss_prob: must lie in [0, 1], got {self.loss_prob}")
        if self.delay_ticks < 1:
            raise ScenarioError(f"channel.delay_ticks: must be >= 1, got {self.delay_ticks}")


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 168
    k: float = 3.0
    min_samples: typing.Optional[int] = None
    fog_detector: bool = True


@dataclass(frozen=True)
class IntervalConfig:
    gate_window: int = 24
    fog: int = 24
    cloud: int = 720
    reporting: int = 24


@dataclass(frozen=True)
class EnergyConfig:
    e_tx: float = 50.0
    e_cpu: float = 1.0


@dataclass(frozen=True)
class MessageBytes:
    PredictionDown: int = 12
    ErrorUp: int = 8
    ReadingUp: int = 8
    Alarm: int = 4


@dataclass(frozen=True)
class AnomalyConfig:
    edge: int
    kind: str
    start_tick: int
    duration_ticks: int
    magnitude: float


@dataclass(frozen=True)
class Scenario:
    seed: int
    days: int
    topology: TopologyConfig
    train_days: int = 28
    mode: str = EVENT_DRIVEN
    demand: DemandConfig = field(default_factory=DemandConfig)
    edge_overrides: typing.Dict[int, typing.Dict[str, float]] = field(default_factory=dict)
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    inference: InferenceParams = field(default_factory=InferenceParams)
    forecaster: NvarSpec = field(default_factory=lambda: NvarSpec(delays=7, degree=1, ridge_lambda=1e-3))
    hourly_forecaster: NvarSpec = field(default_factory=lambda: NvarSpec(delays=24, degree=1, ridge_lambda=1e-6))
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    intervals: IntervalConfig = field(default_factory=IntervalConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    message_bytes: MessageBytes = field(default_factory=MessageBytes)
    anomalies: typing.List[AnomalyConfig] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ScenarioError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.days < 1:
            raise ScenarioError("days: must be >= 1")
        if self.train_days < 0:
            raise ScenarioError("train_days: must be >= 0")
        if self.topology.n_fogs < 1 or self.topology.edges_per_fog < 1:
            raise ScenarioError("topology: needs at least one fog and one edge per fog")
        if SECONDS_PER_DAY % self.demand.step:
            raise ScenarioError("demand.step: must divide one day")
        for i, a in enumerate(self.anomalies):
            if not 0 <= a.edge < self.topology.n_edges:
                raise ScenarioError(f"anomalies[{i}].edge: no edge with index {a.edge}")
            try:
                spec = anom.AnomalySpec(a.kind, a.start_tick, a.duration_ticks, a.magnitude)
            except ConfigurationError as exc:
                raise ScenarioError(f"anomalies[{i}]: {exc}") from None
            if spec.stop_tick > self.n_ticks:
                raise ScenarioError(f"anomalies[{i}]: ends after the last tick {self.n_ticks}")
        for k in self.edge_overrides:
            if not 0 <= k < self.topology.n_edges:
                raise ScenarioError(f"edge_overrides.{k}: no edge with that index")

    @property
    def ticks_per_day(self) -> int:
        return SECONDS_PER_DAY // self.demand.step

    @property
    def n_ticks(self) -> int:
        return self.days * self.ticks_per_day

    def sim_params(self, mode: str | None = None) -> SimParams:
        return SimParams(
            mode=mode or self.mode,
            inference=self.inference,
            channel=ChannelModel(self.channel.loss_prob, self.channel.delay_ticks,
                                 derive_seed(self.seed, "channel")),
            forecaster=self.forecaster,
            gate_window=self.intervals.gate_window,
            fog_interval=self.intervals.fog,
            cloud_interval=self.intervals.cloud,
            reporting_interval=self.intervals.reporting,
            ticks_per_day=self.ticks_per_day,
            detector_window=self.detector.window,
            detector_k=self.detector.k,
            detector_min_samples=self.detector.min_samples,
            fog_detector=self.detector.fog_detector,
            message_bytes=dataclasses.asdict(self.message_bytes),
            e_tx=self.energy.e_tx,
            e_cpu=self.energy.e_cpu,
            seed=self.seed,
        )

    def topology_nodes(self) -> Topology:
        return Topology.balanced(self.topology.n_fogs, self.topology.edges_per_fog)

    def edge_node_id(self, index: int) -> int:
        return self.topology.n_fogs + 1 + index

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, data) -> "Scenario":
        return _from_plain(cls, data, "")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def content_hash(self) -> str:
        """Hash of every field except the seed and the mode."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("mode")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


REQUIRED = {Scenario: ("seed", "days", "topology"), AnomalyConfig: ("edge", "kind", "start_tick",
                                                                     "duration_ticks", "magnitude")}


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return _from_plain(tp, value, path)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(inner, value, path)
    if origin in (list, typing.List):
        if not isinstance(value, list):
            raise ScenarioError(f"{path}: expected a list")
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin in (dict, typing.Dict):
        if not isinstance(value, dict):
            raise ScenarioError(f"{path}: expected a mapping")
        return {_coerce(args[0], k, f"{path}.{k}"): _coerce(args[1], v, f"{path}.{k}")
                for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ScenarioError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _from_plain(cls, data, path):
    if not isinstance(data, dict):
        raise ScenarioError(f"{path or 'scenario'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    prefix = f"{path}." if path else ""
    unknown = sorted(set(map(str, data)) - names)
    if unknown:
        raise ScenarioError(f"{prefix}{unknown[0]}: unknown field")
    for req in REQUIRED.get(cls, ()):
        if req not in data:
            raise ScenarioError(f"{prefix}{req}: required field is missing")
    kwargs = {k: _coerce(hints[k], v, f"{prefix}{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ScenarioError:
        raise
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{path or 'scenario'}: {exc}") from None


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    return parse_scenario(text)


def parse_scenario(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ScenarioError(f"{where}{getattr(exc, 'problem', exc)}") from None
    return Scenario.from_dict(data if data is not None else {})


def default_scenario() -> Scenario:
    """Bundled desk-scale scenario: 30 edges, 3 fogs, 60 days of hourly ticks."""
    return Scenario(seed=2024, days=60, topology=TopologyConfig(3, 10))


# ---------------------------------------------------------------------------
# Series construction
# ---------------------------------------------------------------------------


@dataclass
class ScenarioData:
    training: dict      # edge node id -> lossy hourly TimeSeries
    series: dict        # edge node id -> TimeSeries for the simulated window
    clean: dict         # edge node id -> simulated window before anomaly injection
    events: list        # (edge node id, AnomalySpec)


def edge_generator(sc: Scenario, index: int) -> GeneratorConfig:
    d = sc.demand
    rng = np.random.default_rng(derive_seed(sc.seed, f"edge/{index}/base"))
    scale = 1.0 + d.base_level_spread * rng.uniform(-1.0, 1.0)
    params = dict(
        days=sc.train_days + sc.days,
        step=d.step,
        base_level=d.base_level * scale,
        daily_amplitude=d.daily_amplitude * scale,
        weekly_amplitude=d.weekly_amplitude * scale,
        weather_coupling=d.weather_coupling * scale,
        noise_std=d.noise_std * scale,
        seed=derive_seed(sc.seed, f"edge/{index}/noise"),
        start_time=DEFAULT_START,
    )
    params.update(sc.edge_overrides.get(index, {}))
    try:
        return GeneratorConfig(**params)
    except TypeError as exc:
        raise ScenarioError(f"edge_overrides.{index}: {exc}") from None


def build_data(sc: Scenario, full_series: dict | None = None) -> ScenarioData:
    """Generate (or accept) each meter's history and split it.

    ``full_series`` maps edge index to a complete series covering
    ``train_days + days``; when omitted the scenario's generator is used.
    """
    total = (sc.train_days + sc.days) * sc.ticks_per_day
    n_train = sc.train_days * sc.ticks_per_day
    weather = None
    if full_series is None:
        w = sc.weather
        weather = make_weather(total, sc.demand.step, DEFAULT_START, w.mean_temp, w.daily_swing,
                               w.noise_std, w.reference_temp, derive_seed(sc.seed, "weather"))
    training, series, clean = {}, {}, {}
    for i in range(sc.topology.n_edges):
        nid = sc.edge_node_id(i)
        if full_series is None:
            full = generate_consumption(edge_generator(sc, i), weather)
        else:
            full = full_series[i]
            if len(full) < total:
                raise ScenarioError(f"series for edge {i} has {len(full)} samples, need {total}")
            full.require_complete("simulation input")
        if n_train:
            training[nid] = apply_loss(full.slice(0, n_train), sc.channel.loss_prob,
                                       derive_seed(sc.seed, f"edge/{i}/uplink"))
        series[nid] = full.slice(n_train, total)
        clean[nid] = series[nid]
    events = []
    for a in sc.anomalies:
        nid = sc.edge_node_id(a.edge)
        spec = anom.AnomalySpec(a.kind, a.start_tick, a.duration_ticks, a.magnitude)
        series[nid], _ = anom.inject(series[nid], spec)
        events.append((nid, spec))
    return ScenarioData(training, series, clean, events)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    mode: str
    metrics: SimMetrics
    log: list
    verdicts: dict


def run_mode(sc: Scenario, data: ScenarioData, mode: str) -> RunResult:
    net = build_network(sc.topology_nodes(), sc.sim_params(mode), data.training)
    net.assign_series(data.series)
    metrics = run_network(net)
    verdicts = {e: list(edge.verdicts) for e, edge in net.edges.items()}
    return RunResult(mode, metrics, net.log, verdicts)


def run(sc: Scenario, mode: str | None = None, data: ScenarioData | None = None) -> SimMetrics:
    data = data or build_data(sc)
    return run_mode(sc, data, mode or sc.mode).metrics


def detection_report(result: RunResult, events) -> anom.DetectionReport:
    """Detection quality pooled over every edge's verdict stream."""
    tp = fp = misses = scored = 0
    latencies = []
    for e, verdicts in result.verdicts.items():
        mine = [spec for nid, spec in events if nid == e]
        r = anom.evaluate(verdicts, mine)
        tp += r.true_positives
        fp += r.false_positives
        misses += r.misses
        latencies.extend(r.latencies)
        inside = set()
        for spec in mine:
            inside.update(range(spec.start_tick, spec.stop_tick))
        scored += sum(1 for t, v in enumerate(verdicts) if v != anom.WARMUP and t not in inside)
    return anom.DetectionReport(tp, fp, misses, tuple(latencies), fp / scored if scored else 0.0)


def forecast_table(sc: Scenario, data: ScenarioData) -> dict:
    """Pooled hourly/daily MAPE over all edges for NVAR and seasonal naive."""
    pooled: dict = {}
    for nid, train in data.training.items():
        scores = hourly_daily_mape(fill_gaps(train, "linear"), data.clean[nid],
                                   sc.hourly_forecaster, sc.ticks_per_day)
        for model, rows in scores.items():
            for horizon, rep in rows.items():
                pooled.setdefault(model, {}).setdefault(horizon, []).append(rep)
    table = {}
    for model, rows in pooled.items():
        for horizon, reports in rows.items():
            n = sum(r.n_scored for r in reports)
            table.setdefault(model, {})[horizon] = {
                "mape_percent": math.fsum(r.mape_percent * r.n_scored for r in reports) / n,
                "n_scored": n,
                "n_skipped_near_zero": sum(r.n_skipped_near_zero for r in reports),
            }
    return table


def _ratio(a, b):
    return a / b if b else None


def comparison(event: SimMetrics, periodic: SimMetrics) -> dict:
    def total_bytes(m):
        return m.bytes_up + m.bytes_down + m.bytes_alarm

    return {
        "message_ratio": _ratio(event.messages_up, periodic.messages_up),
        "message_ratio_after_warmup": _ratio(event.messages_up_after_warmup,
                                             periodic.messages_up_after_warmup),
        "byte_ratio": _ratio(total_bytes(event), total_bytes(periodic)),
        "energy_ratio": _ratio(event.energy_proxy, periodic.energy_proxy),
        "edge_energy_ratio": _ratio(event.energy_proxy_edge, periodic.energy_proxy_edge),
    }


def run_report(sc: Scenario, modes=None, data: ScenarioData | None = None,
               with_forecasts: bool = True) -> tuple[dict, dict]:
    """Run the requested modes; return ``(report, logs)``.

    The report is a JSON-compatible dict; ``logs`` maps mode to event-log lines.
    """
    modes = list(modes or [sc.mode])
    data = data or build_data(sc)
    report = {
        "scenario_hash": sc.content_hash(),
        "seed": sc.seed,
        "runs": {},
        "detection": {},
        "latency": {},
        "ground_truth": [{"node": nid, **spec.to_dict()} for nid, spec in data.events],
    }
    logs = {}
    results = {}
    for mode in modes:
        res = run_mode(sc, data, mode)
        results[mode] = res
        logs[mode] = res.log
        report["runs"][mode] = res.metrics.to_dict()
        report["detection"][mode] = detection_report(res, data.events).to_dict()
        onsets = [(nid, spec.start_tick) for nid, spec in data.events]
        report["latency"][mode] = {
            layer: detection_latency(res.metrics, onsets, layer).to_dict() for layer in (EDGE, FOG)}
    if EVENT_DRIVEN in results and PERIODIC in results:
        report["comparison"] = comparison(results[EVENT_DRIVEN].metrics, results[PERIODIC].metrics)
    if with_forecasts and data.training:
        report["forecast"] = forecast_table(sc, data)
    return report, logs


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"

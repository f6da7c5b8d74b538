"""Lock-step simulation of the edge / fog / cloud hierarchy.

One tick is one simulated hour. Within a tick the order is fixed: message
delivery, edges, fogs, cloud, then downward predictions. Messages cross a
lossy channel with a fixed delay of at least one tick, so nothing sent in a
tick is seen by anyone before the next one.

Event-driven mode
    Parents send each child a prediction of its mean hourly consumption for
    the coming period. Every node tracks its per-tick prediction error, the
    error precision and an EWMA threshold over the precision-weighted error.
    Upward it reports the precision-weighted *average* error over the last
    ``gate_window`` ticks, and only when that exceeds the threshold.

Periodic mode
    Edges send their accumulated consumption every ``reporting_interval``
    ticks, no predictions flow downward.

Pipe-break alarms are raised by each edge's sigma detector in both modes and
bypass the threshold gate.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import anomaly as anom
from .errors import ConfigurationError, InvariantError, LifecycleError, TopologyError
from .forecast import EvalReport, NvarModel, NvarSpec, forecast, mape, train_nvar
from .inference import (
    FREE_ENERGY_FORMS,
    PrecisionState,
    ThresholdState,
    layer_free_energy,
    propagate_threshold,
    update_precision,
    update_threshold,
)
from .seeding import derive_seed
from .series import TimeSeries, aggregate, fill_gaps, remove_outliers

EDGE, FOG, CLOUD = "edge", "fog", "cloud"
LEVELS = (EDGE, FOG, CLOUD)
EVENT_DRIVEN, PERIODIC = "event_driven", "periodic"
PIPE_BREAK, STATS_ANOMALY = "pipe_break", "stats_anomaly"


# ---------------------------------------------------------------------------
# Messages and channel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionDown:
    predicted_value: float
    threshold_hint: float | None = None


@dataclass(frozen=True)
class ErrorUp:
    weighted_error: float
    precision: float


@dataclass(frozen=True)
class ReadingUp:
    value: float


@dataclass(frozen=True)
class Alarm:
    reason: str
    origin: int


DOWNWARD = (PredictionDown,)
UPWARD = (ErrorUp, ReadingUp, Alarm)


@dataclass(frozen=True)
class Message:
    payload: object
    src: int
    dst: int
    sent_at: int
    delivered_at: int | None = None

    @property
    def kind(self) -> str:
        return type(self.payload).__name__

    @property
    def value(self) -> float:
        p = self.payload
        if isinstance(p, PredictionDown):
            return p.predicted_value
        if isinstance(p, ErrorUp):
            return p.weighted_error
        if isinstance(p, ReadingUp):
            return p.value
        return float(p.origin)


@dataclass(frozen=True)
class ChannelModel:
    loss_prob: float = 0.05
    delay_ticks: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ConfigurationError("loss_prob must lie in [0, 1]")
        if self.delay_ticks < 1:
            raise ConfigurationError("delay_ticks must be >= 1")


@dataclass(frozen=True)
class Delivered:
    at: int


class _Lost:
    def __repr__(self):
        return "Lost"


Lost = _Lost()


class Channel:
    """One directed link. Owns its random stream, seeded from the model."""

    def __init__(self, model: ChannelModel):
        self.model = model
        self._rng = np.random.default_rng(model.seed)

    def send(self, message: Message, tick: int):
        # one draw per message keeps losses independent and reproducible
        if self._rng.random() < self.model.loss_prob:
            return Lost
        return Delivered(tick + self.model.delay_ticks)


def channel_send(channel: Channel, message: Message, tick: int):
    return channel.send(message, tick)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeSpec:
    id: int
    level: str
    parent: int | None = None


@dataclass(frozen=True)
class Topology:
    nodes: tuple

    @classmethod
    def balanced(cls, n_fogs: int = 3, edges_per_fog: int = 10) -> "Topology":
        """Cloud 0, fogs ``1..n_fogs``, then edges grouped by fog."""
        nodes = [NodeSpec(0, CLOUD)]
        nodes += [NodeSpec(f, FOG, 0) for f in range(1, n_fogs + 1)]
        nid = n_fogs + 1
        for f in range(1, n_fogs + 1):
            for _ in range(edges_per_fog):
                nodes.append(NodeSpec(nid, EDGE, f))
                nid += 1
        return cls(tuple(nodes))

    def validate(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate node ids")
        by_id = {n.id: n for n in self.nodes}
        clouds = [n for n in self.nodes if n.level == CLOUD]
        if len(clouds) != 1:
            raise TopologyError(f"exactly one cloud node required, found {len(clouds)}")
        for n in self.nodes:
            if n.level not in LEVELS:
                raise TopologyError(f"node {n.id}: unknown level {n.level!r}")
            if n.level == CLOUD:
                if n.parent is not None:
                    raise TopologyError("the cloud node has no parent")
                continue
            want = FOG if n.level == EDGE else CLOUD
            parent = by_id.get(n.parent)
            if parent is None or parent.level != want:
                raise TopologyError(f"{n.level} node {n.id} needs a {want} parent, has {n.parent!r}")
        for f in self.nodes:
            if f.level == FOG and not any(e.parent == f.id for e in self.nodes if e.level == EDGE):
                raise TopologyError(f"fog node {f.id} has no edge children")

    def ids(self, level: str) -> list[int]:
        return [n.id for n in self.nodes if n.level == level]

    def level_of(self, nid: int) -> str:
        for n in self.nodes:
            if n.id == nid:
                return n.level
        raise KeyError(nid)


# ---------------------------------------------------------------------------
# Parameters and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InferenceParams:
    alpha: float = 0.9
    beta: float = 1e-3
    gamma: float = 0.25
    alpha_var: float = 0.95
    warmup: int = 50
    free_energy_form: str = "paper_literal"
    tau_init: float = 0.0
    tau_offset: float = 0.0
    adapt: bool = True

    def __post_init__(self):
        ThresholdState(self.tau_init, self.alpha, self.warmup)
        PrecisionState(beta=self.beta, alpha_var=self.alpha_var)
        if not 0 <= self.gamma <= 1:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.free_energy_form not in FREE_ENERGY_FORMS:
            raise ConfigurationError(f"free_energy_form must be one of {FREE_ENERGY_FORMS}")
        if self.tau_offset < 0:
            raise ConfigurationError("tau_offset must be >= 0")


@dataclass(frozen=True)
class SimParams:
    mode: str = EVENT_DRIVEN
    inference: InferenceParams = field(default_factory=InferenceParams)
    channel: ChannelModel = field(default_factory=ChannelModel)
    forecaster: NvarSpec = field(default_factory=lambda: NvarSpec(delays=7, degree=1, ridge_lambda=1e-3))
    gate_window: int = 24
    fog_interval: int = 24
    cloud_interval: int = 720
    reporting_interval: int = 24
    ticks_per_day: int = 24
    detector_window: int = 168
    detector_k: float = 3.0
    detector_min_samples: int | None = None
    fog_detector: bool = True
    message_bytes: Mapping = field(default_factory=lambda: {
        "PredictionDown": 12, "ErrorUp": 8, "ReadingUp": 8, "Alarm": 4})
    e_tx: float = 50.0
    e_cpu: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (EVENT_DRIVEN, PERIODIC):
            raise ConfigurationError(f"mode must be {EVENT_DRIVEN} or {PERIODIC}")
        for name in ("gate_window", "fog_interval", "cloud_interval",
                     "reporting_interval", "ticks_per_day"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.fog_interval % self.ticks_per_day or self.cloud_interval % self.ticks_per_day:
            raise ConfigurationError("prediction intervals must be whole days")
        missing = {"PredictionDown", "ErrorUp", "ReadingUp", "Alarm"} - set(self.message_bytes)
        if missing:
            raise ConfigurationError(f"message_bytes lacks {sorted(missing)}")


@dataclass(frozen=True)
class DetectionEvent:
    tick: int
    node: int
    reason: str
    layer: str

    def to_dict(self):
        return {"tick": self.tick, "node": self.node, "reason": self.reason, "layer": self.layer}


@dataclass
class SimMetrics:
    mode: str = EVENT_DRIVEN
    ticks: int = 0
    messages_up: int = 0
    messages_up_after_warmup: int = 0
    messages_up_edge: int = 0
    messages_up_fog: int = 0
    messages_down: int = 0
    alarms: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    bytes_alarm: int = 0
    delivered: int = 0
    lost: int = 0
    node_updates: int = 0
    energy_proxy: float = 0.0
    edge_messages_sent: int = 0
    edge_updates: int = 0
    energy_proxy_edge: float = 0.0
    free_energy_mean: dict = field(default_factory=dict)
    forecast_eval: dict = field(default_factory=dict)
    detection_events: list = field(default_factory=list)

    @property
    def messages_sent(self) -> int:
        return self.messages_up + self.messages_down + self.alarms

    def to_dict(self):
        return {
            "mode": self.mode,
            "ticks": self.ticks,
            "messages_up": self.messages_up,
            "messages_up_after_warmup": self.messages_up_after_warmup,
            "messages_up_edge": self.messages_up_edge,
            "messages_up_fog": self.messages_up_fog,
            "messages_down": self.messages_down,
            "alarms": self.alarms,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "bytes_alarm": self.bytes_alarm,
            "delivered": self.delivered,
            "lost": self.lost,
            "node_updates": self.node_updates,
            "energy_proxy": self.energy_proxy,
            "edge_messages_sent": self.edge_messages_sent,
            "edge_updates": self.edge_updates,
            "energy_proxy_edge": self.energy_proxy_edge,
            "free_energy_mean": dict(self.free_energy_mean),
            "forecast_eval": {k: v.to_dict() for k, v in self.forecast_eval.items()},
            "detection_events": [e.to_dict() for e in self.detection_events],
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["forecast_eval"] = {k: EvalReport(**v) for k, v in d.get("forecast_eval", {}).items()}
        d["detection_events"] = [DetectionEvent(**e) for e in d.get("detection_events", [])]
        return cls(**d)


# ---------------------------------------------------------------------------
# Node state
# ---------------------------------------------------------------------------


class _Gate:
    """Per-node precision, threshold and windowed-error gate."""

    def __init__(self, p: InferenceParams, window: int):
        self.p = p
        self.precision = PrecisionState(beta=p.beta, alpha_var=p.alpha_var)
        self.threshold = ThresholdState(p.tau_init, p.alpha, p.warmup)
        self.errors = deque(maxlen=window)
        self.hint = None
        self.fe_sum = 0.0
        self.fe_n = 0

    def observe(self, eps: float):
        """Fold one prediction error in; return the weighted error to send or None."""
        p = self.p
        self.precision = update_precision(self.precision, eps)
        pi = self.precision.precision
        if p.adapt:
            self.threshold = update_threshold(self.threshold, pi * eps)
        else:
            self.threshold = replace(
                self.threshold, warmup_remaining=max(0, self.threshold.warmup_remaining - 1))
        self.errors.append(eps)
        self.fe_sum += layer_free_energy(self.precision, eps, p.free_energy_form)
        self.fe_n += 1
        tau = self.threshold.tau + p.tau_offset
        if p.adapt and self.hint is not None:
            # no layer below an edge's own threshold; it stands in for it
            tau = propagate_threshold(tau, tau, self.hint, p.gamma)
        weighted = pi * math.fsum(self.errors) / len(self.errors)
        if self.threshold.gating and abs(weighted) > tau:
            return weighted
        return None


class EdgeNode:
    level = EDGE

    def __init__(self, nid, parent, params: SimParams):
        self.id = nid
        self.parent = parent
        self.gate = _Gate(params.inference, params.gate_window)
        self.detector = anom.SigmaDetector(params.detector_window, params.detector_k,
                                           params.detector_min_samples)
        self.last_received_prediction = 0.0
        self.verdicts: list[str] = []
        self.accumulated = 0.0


class _ChildModel:
    """A parent's view of one child: forecaster plus believed daily history."""

    def __init__(self, model: NvarModel | None, history: list[float]):
        self.model = model
        self.history = list(history)
        self.prediction = 0.0
        self.correction = None
        self.hint = None

    def next_predictions(self, days: int) -> np.ndarray:
        if self.model is None or len(self.history) < self.model.spec.delays:
            return np.full(days, self.history[-1] if self.history else 0.0)
        return forecast(self.model, np.asarray(self.history), days)


class FogNode:
    level = FOG

    def __init__(self, nid, parent, children, params: SimParams):
        self.id = nid
        self.parent = parent
        self.children = list(children)
        self.gate = _Gate(params.inference, params.gate_window)
        self.detector = anom.SigmaDetector(params.detector_window, params.detector_k,
                                           params.detector_min_samples)
        self.last_received_prediction = 0.0
        self.child_models: dict[int, _ChildModel] = {}
        self.readings: dict[int, float] = {}


class CloudNode:
    level = CLOUD

    def __init__(self, nid, children):
        self.id = nid
        self.children = list(children)
        self.fog_models: dict[int, _ChildModel] = {}
        self.planned: dict[int, np.ndarray] = {}
        self.global_stats = PrecisionState(alpha_var=0.99)
        self.global_mean = 0.0


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


def preprocess_daily(s: TimeSeries, ticks_per_day: int) -> np.ndarray:
    """Lossy hourly history -> daily mean hourly consumption."""
    cleaned = fill_gaps(remove_outliers(s, window=ticks_per_day, k=4.0), "linear")
    return np.asarray(aggregate(cleaned, ticks_per_day).values) / ticks_per_day


def _train(daily: np.ndarray, spec: NvarSpec) -> NvarModel | None:
    if len(daily) <= spec.delays + spec.n_features:
        return None
    return train_nvar(daily, spec)


class Network:
    """A built hierarchy plus its channels, clock and metrics."""

    def __init__(self, topology: Topology, params: SimParams):
        self.topology = topology
        self.params = params
        self.cloud: CloudNode | None = None
        self.fogs: dict[int, FogNode] = {}
        self.edges: dict[int, EdgeNode] = {}
        self.channels: dict[tuple, Channel] = {}
        self.inflight: dict[int, list[Message]] = {}
        self.series: dict[int, np.ndarray] | None = None
        self.next_tick = 0
        self.metrics = SimMetrics(mode=params.mode)
        self.log: list[str] = []
        self.built = False
        self._actual_daily: dict[int, list[float]] = {}
        self._eval_pairs: dict[str, tuple[list, list]] = {FOG: ([], []), CLOUD: ([], [])}

    # -- wiring ------------------------------------------------------------

    def channel(self, src: int, dst: int) -> Channel:
        key = (src, dst)
        if key not in self.channels:
            m = self.params.channel
            seed = derive_seed(m.seed, f"channel/{src}->{dst}")
            self.channels[key] = Channel(replace(m, seed=seed))
        return self.channels[key]

    def assign_series(self, series: Mapping[int, Sequence[float]]):
        missing = set(self.edges) - set(series)
        if missing:
            raise ConfigurationError(f"no consumption series for edges {sorted(missing)}")
        lengths = {len(series[e]) for e in self.edges}
        if len(lengths) != 1:
            raise ConfigurationError("all edge series must have the same length")
        arrays = {}
        for e in self.edges:
            s = series[e]
            if isinstance(s, TimeSeries):
                s.require_complete("simulation")
                s = s.values
            arrays[e] = np.asarray(s, dtype=np.float64)
        self.series = arrays

    @property
    def n_ticks(self) -> int:
        if self.series is None:
            return 0
        return len(next(iter(self.series.values())))

    # -- messaging ---------------------------------------------------------

    def send(self, payload, src: int, dst: int, tick: int):
        src_level = self.topology.level_of(src)
        dst_level = self.topology.level_of(dst)
        up = LEVELS.index(dst_level) == LEVELS.index(src_level) + 1
        down = LEVELS.index(dst_level) == LEVELS.index(src_level) - 1
        if isinstance(payload, DOWNWARD) and not down or isinstance(payload, UPWARD) and not up:
            raise InvariantError(f"{type(payload).__name__} from {src_level} to {dst_level}")
        msg = Message(payload, src, dst, tick)
        m = self.metrics
        nbytes = int(self.params.message_bytes[msg.kind])
        if isinstance(payload, PredictionDown):
            m.messages_down += 1
            m.bytes_down += nbytes
        elif isinstance(payload, Alarm):
            m.alarms += 1
            m.bytes_alarm += nbytes
        else:
            m.messages_up += 1
            m.bytes_up += nbytes
            if src_level == EDGE:
                m.messages_up_edge += 1
            else:
                m.messages_up_fog += 1
            if tick >= self.params.inference.warmup:
                m.messages_up_after_warmup += 1
        if src_level == EDGE:
            m.edge_messages_sent += 1
        self.log.append(f"{tick},{src},{dst},{msg.kind},{msg.value!r}")
        outcome = channel_send(self.channel(src, dst), msg, tick)
        if outcome is Lost:
            m.lost += 1
            return
        if outcome.at < tick + 1:
            raise InvariantError("message delivered before it was sent")
        m.delivered += 1
        self.inflight.setdefault(outcome.at, []).append(replace(msg, delivered_at=outcome.at))

    def _deliver(self, tick: int) -> dict[int, list[Message]]:
        inbox: dict[int, list[Message]] = {}
        for msg in self.inflight.pop(tick, []):
            inbox.setdefault(msg.dst, []).append(msg)
        return inbox


def build_network(topology: Topology, params: SimParams,
                  training: Mapping[int, TimeSeries] | None = None) -> Network:
    """Validate the topology and initialise every node.

    ``training`` maps edge ids to hourly history preceding the run (it may
    contain MISSING samples). Parents train their daily forecasters on it and
    commission each child with a first prediction. Without training data the
    forecasters stay untrained and predictions start at zero.
    """
    topology.validate()
    net = Network(topology, params)
    tpd = params.ticks_per_day
    cloud_id = topology.ids(CLOUD)[0]
    fog_ids = topology.ids(FOG)
    children = {f: [n.id for n in topology.nodes if n.parent == f] for f in fog_ids}
    net.cloud = CloudNode(cloud_id, fog_ids)
    for f in fog_ids:
        net.fogs[f] = FogNode(f, cloud_id, children[f], params)
        for e in children[f]:
            net.edges[e] = EdgeNode(e, f, params)

    event = params.mode == EVENT_DRIVEN
    for f, fog in net.fogs.items():
        regional = None
        for e in fog.children:
            daily = preprocess_daily(training[e], tpd) if training and e in training else np.array([])
            regional = daily if regional is None else regional[: len(daily)] + daily[: len(regional)]
            cm = _ChildModel(_train(daily, params.forecaster), list(daily))
            cm.prediction = float(cm.next_predictions(1)[0]) if len(daily) else 0.0
            fog.child_models[e] = cm
            if event:
                net.edges[e].last_received_prediction = cm.prediction
        regional = regional if regional is not None else np.array([])
        fm = _ChildModel(_train(regional, params.forecaster), list(regional))
        net.cloud.fog_models[f] = fm
        plan = _plan(fm, params.cloud_interval // tpd) if len(regional) else np.zeros(params.cloud_interval // tpd)
        net.cloud.planned[f] = plan
        fm.prediction = float(plan[0])
        if event:
            fog.last_received_prediction = float(plan.mean())
    net.built = True
    return net


def _plan(cm: _ChildModel, days: int) -> np.ndarray:
    return np.asarray(cm.next_predictions(days), dtype=np.float64)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def step(net: Network, tick: int) -> list[Message]:
    """Advance one tick; returns the messages delivered during it."""
    if not isinstance(net, Network) or not net.built:
        raise LifecycleError("network must be built with build_network before stepping")
    if net.series is None:
        raise LifecycleError("assign consumption series to every edge before stepping")
    if tick != net.next_tick or tick >= net.n_ticks:
        raise LifecycleError(f"expected tick {net.next_tick} (< {net.n_ticks}), got {tick}")
    p = net.params
    m = net.metrics
    event = p.mode == EVENT_DRIVEN
    tpd = p.ticks_per_day
    inbox = net._deliver(tick)
    delivered = [msg for msgs in inbox.values() for msg in msgs]

    readings = {}
    for e, edge in net.edges.items():
        for msg in inbox.get(e, ()):
            edge.last_received_prediction = msg.payload.predicted_value
            edge.gate.hint = msg.payload.threshold_hint
        x = float(net.series[e][tick])
        readings[e] = x
        edge.detector, verdict = anom.update_and_classify(edge.detector, x)
        edge.verdicts.append(verdict)
        if verdict == anom.ANOMALY:
            m.detection_events.append(DetectionEvent(tick, e, PIPE_BREAK, EDGE))
            net.send(Alarm(PIPE_BREAK, e), e, edge.parent, tick)
        if event:
            report = edge.gate.observe(x - edge.last_received_prediction)
            if report is not None:
                net.send(ErrorUp(report, edge.gate.precision.precision), e, edge.parent, tick)
        else:
            edge.accumulated += x
            if (tick + 1) % p.reporting_interval == 0:
                net.send(ReadingUp(edge.accumulated), e, edge.parent, tick)
                edge.accumulated = 0.0
        m.node_updates += 1
        m.edge_updates += 1

    regional = {}
    for f, fog in net.fogs.items():
        for msg in inbox.get(f, ()):
            pl = msg.payload
            if isinstance(pl, Alarm):
                m.detection_events.append(DetectionEvent(tick, pl.origin, pl.reason, FOG))
            elif isinstance(pl, ErrorUp):
                cm = fog.child_models[msg.src]
                cm.correction = pl.weighted_error / pl.precision
                a = p.inference.alpha
                mag = abs(pl.weighted_error)
                cm.hint = mag if cm.hint is None else a * cm.hint + (1 - a) * mag
            elif isinstance(pl, ReadingUp):
                fog.readings[msg.src] = pl.value
            elif isinstance(pl, PredictionDown):
                fog.last_received_prediction = pl.predicted_value
                fog.gate.hint = pl.threshold_hint
        supply = math.fsum(readings[e] for e in fog.children)
        regional[f] = supply
        if p.fog_detector:
            fog.detector, verdict = anom.update_and_classify(fog.detector, supply)
            if verdict == anom.ANOMALY:
                net.send(Alarm(STATS_ANOMALY, f), f, fog.parent, tick)
        if event:
            report = fog.gate.observe(supply - fog.last_received_prediction)
            if report is not None:
                net.send(ErrorUp(report, fog.gate.precision.precision), f, fog.parent, tick)
        m.node_updates += 1

    cloud = net.cloud
    for msg in inbox.get(cloud.id, ()):
        pl = msg.payload
        if isinstance(pl, Alarm):
            m.detection_events.append(DetectionEvent(tick, pl.origin, pl.reason, CLOUD))
        elif isinstance(pl, ErrorUp):
            fm = cloud.fog_models[msg.src]
            fm.correction = pl.weighted_error / pl.precision
            a = p.inference.alpha
            mag = abs(pl.weighted_error)
            fm.hint = mag if fm.hint is None else a * fm.hint + (1 - a) * mag
    total = math.fsum(regional.values())
    cloud.global_mean = total if tick == 0 else 0.99 * cloud.global_mean + 0.01 * total
    cloud.global_stats = update_precision(cloud.global_stats, total - cloud.global_mean)
    m.node_updates += 1

    if (tick + 1) % tpd == 0:
        _end_of_day(net, tick)
    net.next_tick += 1
    return delivered


def _end_of_day(net: Network, tick: int):
    p = net.params
    tpd = p.ticks_per_day
    day = tick // tpd
    sl = slice(tick + 1 - tpd, tick + 1)
    event = p.mode == EVENT_DRIVEN
    adapt = p.inference.adapt
    fog_day = (tick + 1) % p.fog_interval == 0
    cloud_day = (tick + 1) % p.cloud_interval == 0
    cloud = net.cloud
    days_per_cloud = p.cloud_interval // tpd

    for f, fog in net.fogs.items():
        region_actual = 0.0
        for e in fog.children:
            cm = fog.child_models[e]
            actual = float(np.mean(net.series[e][sl]))
            region_actual += actual
            if event:
                net._eval_pairs[FOG][0].append(actual)
                net._eval_pairs[FOG][1].append(cm.prediction)
                believed = cm.prediction
                if adapt and cm.correction is not None:
                    believed = max(0.0, cm.prediction + cm.correction)
            else:
                reading = fog.readings.pop(e, None)
                believed = reading / p.reporting_interval if reading is not None else cm.prediction
            cm.correction = None
            cm.history.append(believed)
            if fog_day or not event:
                cm.prediction = float(cm.next_predictions(1)[0])
            if event and fog_day:
                hint = cm.hint if adapt else None
                net.send(PredictionDown(cm.prediction, hint), f, e, tick)

        fm = cloud.fog_models[f]
        idx = (day + 1) % days_per_cloud
        if event:
            net._eval_pairs[CLOUD][0].append(region_actual)
            net._eval_pairs[CLOUD][1].append(fm.prediction)
        believed = fm.prediction
        if adapt and fm.correction is not None:
            believed = max(0.0, fm.prediction + fm.correction)
        fm.correction = None
        fm.history.append(believed)
        if cloud_day:
            cloud.planned[f] = _plan(fm, days_per_cloud)
            if event:
                hint = fm.hint if adapt else None
                net.send(PredictionDown(float(cloud.planned[f].mean()), hint), cloud.id, f, tick)
        fm.prediction = float(cloud.planned[f][idx])


def run_network(net: Network, ticks: int | None = None) -> SimMetrics:
    """Step until the end of the assigned series and finalise the metrics."""
    ticks = net.n_ticks if ticks is None else ticks
    for t in range(net.next_tick, ticks):
        step(net, t)
    return finalize(net)


def finalize(net: Network) -> SimMetrics:
    m = net.metrics
    p = net.params
    m.ticks = net.next_tick
    m.energy_proxy = p.e_tx * m.messages_sent + p.e_cpu * m.node_updates
    # battery-relevant share: what the metering devices themselves spend
    m.energy_proxy_edge = p.e_tx * m.edge_messages_sent + p.e_cpu * m.edge_updates
    if m.delivered + m.lost != m.messages_sent:
        raise InvariantError("delivered + lost differs from messages sent")
    fe = {}
    for level, nodes in ((EDGE, net.edges.values()), (FOG, net.fogs.values())):
        n = sum(node.gate.fe_n for node in nodes)
        if n:
            fe[level] = math.fsum(node.gate.fe_sum for node in nodes) / n
    m.free_energy_mean = fe
    evals = {}
    for layer, (actual, pred) in net._eval_pairs.items():
        if actual:
            try:
                evals[layer] = mape(actual, pred)
            except ArithmeticError:
                pass
    m.forecast_eval = evals
    return m


def edge_verdicts(net: Network) -> dict[int, list[str]]:
    return {e: list(edge.verdicts) for e, edge in net.edges.items()}


# ---------------------------------------------------------------------------
# Latency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyReport:
    latencies: tuple  # one entry per onset, None for a miss
    layer: str

    @property
    def misses(self) -> int:
        return sum(v is None for v in self.latencies)

    @property
    def mean(self) -> float | None:
        hit = [v for v in self.latencies if v is not None]
        return float(np.mean(hit)) if hit else None

    def to_dict(self):
        return {"layer": self.layer, "latencies": list(self.latencies),
                "misses": self.misses, "mean": self.mean}


def detection_latency(metrics: SimMetrics, ground_truth_onsets, layer: str = EDGE) -> LatencyReport:
    """Ticks from each onset ``(edge_id, tick)`` to its first alarm counted at ``layer``."""
    out = []
    for node, onset in ground_truth_onsets:
        ticks = [ev.tick for ev in metrics.detection_events
                 if ev.layer == layer and ev.node == node and ev.tick >= onset
                 and ev.reason == PIPE_BREAK]
        out.append(min(ticks) - onset if ticks else None)
    return LatencyReport(tuple(out), layer)

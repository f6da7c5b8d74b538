import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurowater.errors import (
    ConfigurationError,
    InvariantError,
    LifecycleError,
    TopologyError,
)
from neurowater.netsim import (
    CLOUD,
    EDGE,
    FOG,
    PERIODIC,
    Alarm,
    Channel,
    ChannelModel,
    Delivered,
    DetectionEvent,
    ErrorUp,
    InferenceParams,
    Lost,
    Message,
    NodeSpec,
    PredictionDown,
    SimMetrics,
    SimParams,
    Topology,
    build_network,
    channel_send,
    detection_latency,
    run_network,
    step,
)
from neurowater.seeding import derive_seed, stable_hash
from neurowater.series import GeneratorConfig, TimeSeries, apply_loss, generate_consumption

TPD = 24


def demand(topo, days, seed, noise=8.0, train_days=14, loss=0.05):
    """Training (lossy) and simulation series for every edge of ``topo``."""
    training, series = {}, {}
    for i, e in enumerate(topo.ids(EDGE)):
        cfg = GeneratorConfig(days=train_days + days, base_level=100, daily_amplitude=30,
                              weekly_amplitude=10, noise_std=noise, seed=seed * 1000 + i)
        full = generate_consumption(cfg)
        training[e] = apply_loss(full.slice(0, train_days * TPD), loss, seed + i)
        series[e] = full.values[train_days * TPD:]
    return training, series


def simulate(topo, params, training, series, ticks=None):
    net = build_network(topo, params, training)
    net.assign_series(series)
    return net, run_network(net, ticks)


SMALL = Topology.balanced(3, 2)
SMALL_DATA = demand(SMALL, 10, seed=1)


# -- topology ------------------------------------------------------------------------------


def test_balanced_topology_shape():
    topo = Topology.balanced(3, 2)
    topo.validate()
    assert topo.ids(CLOUD) == [0]
    assert topo.ids(FOG) == [1, 2, 3]
    assert len(topo.ids(EDGE)) == 6
    for f in topo.ids(FOG):
        assert sum(n.parent == f for n in topo.nodes) == 2


def test_default_shape():
    topo = Topology.balanced(3, 10)
    assert (len(topo.ids(EDGE)), len(topo.ids(FOG)), len(topo.ids(CLOUD))) == (30, 3, 1)


@pytest.mark.parametrize("nodes", [
    (NodeSpec(0, CLOUD), NodeSpec(1, FOG, 0), NodeSpec(2, EDGE, None)),        # orphan edge
    (NodeSpec(0, CLOUD), NodeSpec(1, FOG, 0), NodeSpec(2, EDGE, 0)),           # edge under cloud
    (NodeSpec(0, CLOUD), NodeSpec(9, CLOUD), NodeSpec(1, FOG, 0), NodeSpec(2, EDGE, 1)),
    (NodeSpec(0, CLOUD), NodeSpec(1, FOG, 0), NodeSpec(3, FOG, 0), NodeSpec(2, EDGE, 1)),
    (NodeSpec(0, CLOUD), NodeSpec(1, FOG, 0), NodeSpec(1, EDGE, 1)),           # duplicate id
])
def test_invalid_topologies_rejected(nodes):
    with pytest.raises(TopologyError):
        build_network(Topology(nodes), SimParams())


# -- channel --------------------------------------------------------------------------------


def _msg(t=0):
    return Message(ErrorUp(1.0, 1.0), 4, 1, t)


def test_lossless_channel_delivers_at_delay():
    ch = Channel(ChannelModel(0.0, 3, seed=1))
    for t in range(50):
        assert channel_send(ch, _msg(t), t) == Delivered(t + 3)


def test_certain_loss_channel():
    ch = Channel(ChannelModel(1.0, 1, seed=1))
    assert all(channel_send(ch, _msg(), 0) is Lost for _ in range(100))


def test_channel_loss_concentration():
    ch = Channel(ChannelModel(0.1, 2, seed=99))
    outcomes = [channel_send(ch, _msg(t), t) for t in range(10_000)]
    lost = sum(o is Lost for o in outcomes)
    assert abs(lost - 1000) <= 3 * math.sqrt(900)
    assert all(o.at == t + 2 for t, o in enumerate(outcomes) if o is not Lost)


def test_channel_deterministic_per_seed():
    def run(seed):
        ch = Channel(ChannelModel(0.3, 1, seed))
        return [channel_send(ch, _msg(), 0) for _ in range(200)]

    assert run(5) == run(5)
    assert run(5) != run(6)


def test_channel_model_validation():
    with pytest.raises(ConfigurationError):
        ChannelModel(1.5, 1)
    with pytest.raises(ConfigurationError):
        ChannelModel(0.1, 0)


def test_sub_seeds_are_path_local():
    assert derive_seed(7, "channel/4->1") == 7 ^ stable_hash("channel/4->1")
    small = build_network(Topology.balanced(1, 2), SimParams())
    large = build_network(Topology.balanced(1, 5), SimParams())
    assert small.channel(2, 1).model.seed == large.channel(2, 1).model.seed


# -- gating contract ------------------------------------------------------------------------


def test_infinite_threshold_sends_nothing_up():
    params = SimParams(inference=InferenceParams(tau_init=math.inf, adapt=False, warmup=0),
                       fog_detector=False)
    _, m = simulate(SMALL, params, *SMALL_DATA)
    assert m.messages_up == 0
    assert m.messages_down > 0


def test_zero_threshold_reports_every_tick():
    params = SimParams(inference=InferenceParams(tau_init=0.0, adapt=False, warmup=0))
    _, m = simulate(SMALL, params, *SMALL_DATA)
    n_edges, n_ticks = 6, 10 * TPD
    assert m.messages_up_edge == n_edges * n_ticks


def test_conservation_against_periodic_every_tick():
    event = simulate(SMALL, SimParams(), *SMALL_DATA)[1]
    zero = simulate(SMALL, SimParams(inference=InferenceParams(tau_init=0.0, adapt=False, warmup=0)),
                    *SMALL_DATA)[1]
    periodic = simulate(SMALL, SimParams(mode=PERIODIC, reporting_interval=1), *SMALL_DATA)[1]
    assert event.messages_up_edge <= zero.messages_up_edge == periodic.messages_up
    assert event.messages_up <= zero.messages_up


@given(st.floats(0.0, 50.0), st.floats(0.01, 50.0))
@settings(max_examples=8, deadline=None)
def test_raising_threshold_never_adds_messages(tau, bump):
    base = InferenceParams(tau_init=tau, adapt=False, warmup=5)
    lo = simulate(SMALL, SimParams(inference=base), *SMALL_DATA, ticks=96)[1]
    hi = simulate(SMALL, SimParams(inference=replace(base, tau_offset=bump)), *SMALL_DATA, ticks=96)[1]
    assert hi.messages_up <= lo.messages_up


def test_constant_demand_matching_prediction_is_silent():
    topo = Topology.balanced(1, 1)
    training = {2: TimeSeries(0, 3600, np.full(28 * TPD, 100.0))}
    net, m = simulate(topo, SimParams(), training, {2: np.full(20 * TPD, 100.0)})
    assert net.edges[2].last_received_prediction == 100.0
    assert m.messages_up == 0
    assert m.alarms == 0


def test_periodic_daily_count():
    topo = Topology.balanced(3, 10)
    series = {e: np.full(60 * TPD, 50.0) for e in topo.ids(EDGE)}
    _, m = simulate(topo, SimParams(mode=PERIODIC), None, series)
    assert m.messages_up == 30 * 60
    assert m.messages_down == 0


def test_event_mode_sends_fewer_than_periodic():
    event = simulate(SMALL, SimParams(), *SMALL_DATA)[1]
    periodic = simulate(SMALL, SimParams(mode=PERIODIC), *SMALL_DATA)[1]
    assert event.messages_up < periodic.messages_up


# -- alarms and latency ---------------------------------------------------------------------


def burst_series(delay, onset=200, mag=500.0):
    topo = Topology.balanced(1, 1)
    rng = np.random.default_rng(4)
    x = 100 + 5 * rng.standard_normal(300)
    x[onset:onset + 3] += mag
    params = SimParams(channel=ChannelModel(0.0, delay),
                       inference=InferenceParams(tau_init=math.inf, adapt=False))
    return topo, params, {2: x}


def test_alarm_bypasses_gate_and_latencies():
    topo, params, series = burst_series(delay=2)
    net, m = simulate(topo, params, None, series)
    assert m.messages_up == 0
    assert m.alarms >= 1
    assert detection_latency(m, [(2, 200)], EDGE).latencies == (0,)
    assert detection_latency(m, [(2, 200)], FOG).latencies == (2,)
    assert any("Alarm" in line for line in net.log)


def test_missed_event_reported():
    m = SimMetrics(detection_events=[DetectionEvent(5, 2, "pipe_break", EDGE)])
    rep = detection_latency(m, [(2, 10), (2, 3)], EDGE)
    assert rep.latencies == (None, 2)
    assert rep.misses == 1 and rep.mean == 2.0


# -- messaging invariants ---------------------------------------------------------------------


def test_no_time_travel_and_fixed_delay():
    params = SimParams(channel=ChannelModel(0.2, 3))
    net = build_network(SMALL, params, SMALL_DATA[0])
    net.assign_series(SMALL_DATA[1])
    seen = 0
    for t in range(net.n_ticks):
        for msg in step(net, t):
            assert msg.delivered_at == t
            assert msg.delivered_at == msg.sent_at + 3
            seen += 1
    assert seen > 0


def test_event_log_layer_direction():
    net, m = simulate(SMALL, SimParams(), *SMALL_DATA)
    level = {n.id: n.level for n in SMALL.nodes}
    rank = {EDGE: 0, FOG: 1, CLOUD: 2}
    for line in net.log:
        tick, src, dst, kind, value = line.split(",")
        up = rank[level[int(dst)]] - rank[level[int(src)]]
        if kind == "PredictionDown":
            assert up == -1
        else:
            assert up == 1, line
    assert m.messages_sent == len(net.log)


def test_wrong_direction_is_an_invariant_breach():
    net = build_network(SMALL, SimParams())
    with pytest.raises(InvariantError):
        net.send(PredictionDown(1.0), 4, 1, 0)
    with pytest.raises(InvariantError):
        net.send(ErrorUp(1.0, 1.0), 1, 4, 0)
    with pytest.raises(InvariantError):
        net.send(Alarm("pipe_break", 4), 4, 0, 0)


def test_metrics_accounting():
    params = SimParams(e_tx=7.0, e_cpu=0.5)
    _, m = simulate(SMALL, params, *SMALL_DATA)
    assert m.delivered + m.lost == m.messages_sent
    assert m.energy_proxy == 7.0 * m.messages_sent + 0.5 * m.node_updates
    assert m.bytes_up == 8 * m.messages_up
    assert m.bytes_down == 12 * m.messages_down
    assert m.bytes_alarm == 4 * m.alarms
    assert m.node_updates == (6 + 3 + 1) * 10 * TPD
    assert set(m.forecast_eval) == {FOG, CLOUD}
    assert set(m.free_energy_mean) == {EDGE, FOG}


def test_lost_predictions_hold_last():
    params = SimParams(channel=ChannelModel(1.0, 1))
    net = build_network(SMALL, params, SMALL_DATA[0])
    before = {e: edge.last_received_prediction for e, edge in net.edges.items()}
    net.assign_series(SMALL_DATA[1])
    m = run_network(net)
    assert m.lost == m.messages_sent and m.delivered == 0
    assert {e: edge.last_received_prediction for e, edge in net.edges.items()} == before


def test_determinism():
    a_net, a = simulate(SMALL, SimParams(seed=3), *SMALL_DATA)
    b_net, b = simulate(SMALL, SimParams(seed=3), *SMALL_DATA)
    assert a.to_dict() == b.to_dict()
    assert a_net.log == b_net.log
    assert SimMetrics.from_dict(a.to_dict()).to_dict() == a.to_dict()


# -- lifecycle ---------------------------------------------------------------------------------


def test_lifecycle_errors():
    with pytest.raises(LifecycleError):
        step(object(), 0)
    net = build_network(SMALL, SimParams())
    with pytest.raises(LifecycleError):
        step(net, 0)
    net.assign_series({e: np.ones(5) for e in SMALL.ids(EDGE)})
    with pytest.raises(LifecycleError):
        step(net, 1)
    step(net, 0)
    with pytest.raises(LifecycleError):
        step(net, 0)


def test_series_assignment_checked():
    net = build_network(SMALL, SimParams())
    with pytest.raises(ConfigurationError):
        net.assign_series({4: np.ones(5)})
    uneven = {e: np.ones(5 + (e == 4)) for e in SMALL.ids(EDGE)}
    with pytest.raises(ConfigurationError):
        net.assign_series(uneven)


def test_params_validation():
    with pytest.raises(ConfigurationError):
        SimParams(mode="sometimes")
    with pytest.raises(ConfigurationError):
        SimParams(fog_interval=30)
    with pytest.raises(ConfigurationError):
        InferenceParams(gamma=2.0)
    with pytest.raises(ConfigurationError):
        InferenceParams(free_energy_form="other")

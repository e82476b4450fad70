import math

import numpy as np
import pytest

from astrosync.device import DeviceConfig, TimeSeries
from astrosync.network import (AstrocyteInjector, Crossbar, LearningParams, NetworkTopology,
                               SpikeHistory, apply_learning_event, classify, envelope_variance,
                               inhibition_delta, post_ac_current, pre_voltage,
                               revoke_synchronization, simulate_binding, stdp_delta)

F = 7.05e9
T = 1.0 / F
I_OP = 403.4375e-6
PRE = ["N1", "N3"]
POST = ["Na", "Nb"]


# --- bias-tee read voltage ----------------------------------------------------------

def _mr(samples, dt=1e-12):
    return TimeSeries(dt, dt, samples)


def test_constant_resistance_is_fully_blocked():
    v = pre_voltage(_mr(np.full(2000, 2345.0)))
    n = round(T / 1e-12)
    assert np.max(np.abs(v.samples[n:])) < 1e-15


def test_sinusoidal_resistance_passes_at_full_amplitude():
    t = 1e-12 * np.arange(1, 20_001)
    v = pre_voltage(_mr(2000.0 + 500.0 * np.sin(2 * np.pi * F * t)), i_read=50e-6)
    settled = v.samples[1000:]
    ref = 25e-3 * np.sin(2 * np.pi * F * t[1000:])
    assert np.max(np.abs(settled - ref)) < 0.05 * 25e-3


def test_read_voltage_is_linear_in_read_current():
    rng = np.random.default_rng(0)
    mr = _mr(2000.0 + 300.0 * rng.normal(size=5000))
    a = pre_voltage(mr, i_read=50e-6).samples
    b = pre_voltage(mr, i_read=100e-6).samples
    assert np.array_equal(b, 2.0 * a)


# --- crossbar current ------------------------------------------------------------------

def test_post_current_examples():
    cb = Crossbar([[1e-4, 4e-5], [4e-5, 1e-4]])
    assert post_ac_current(cb, [0.0, 0.0], 0) == 0.0
    diag = Crossbar.__new__(Crossbar)
    diag.g = np.array([[1e-4, 0.0], [0.0, 1e-4]])
    assert post_ac_current(diag, [10e-3, 20e-3], 0) == pytest.approx(1e-6, rel=1e-15)
    assert post_ac_current(diag, [10e-3, 20e-3], 1) == pytest.approx(2e-6, rel=1e-15)


def test_post_current_superposition():
    rng = np.random.default_rng(1)
    cb = Crossbar.random(rng)
    for _ in range(1000):
        v1, v2 = rng.normal(scale=0.05, size=2), rng.normal(scale=0.05, size=2)
        for j in range(2):
            lhs = post_ac_current(cb, v1 + v2, j)
            rhs = post_ac_current(cb, v1, j) + post_ac_current(cb, v2, j)
            # a two-term dot product rounds each side at most a few ulp
            assert abs(lhs - rhs) <= 8 * np.spacing(np.max(cb.g) * np.max(np.abs([v1, v2])))


def test_crossbar_bounds_and_ratio():
    cb = Crossbar.from_weights([[0.0, 1.0], [0.5, 0.25]])
    assert cb.g_min == pytest.approx(1 / 25000)
    assert cb.g_max / cb.g_min == pytest.approx(10.0)
    assert cb.resistances[0, 0] == pytest.approx(25000.0)
    assert cb.resistances[0, 1] == pytest.approx(2500.0)
    with pytest.raises(ValueError):
        Crossbar([[1e-6, 1e-4], [1e-4, 1e-4]])
    with pytest.raises(ValueError):
        Crossbar([[1e-3, 1e-4], [1e-4, 1e-4]])


def test_injector_current():
    inj = AstrocyteInjector(0.25, F, math.pi, 1000.0)
    assert inj.peak_current == pytest.approx(250e-6)
    t = np.linspace(0, 1e-9, 7)
    np.testing.assert_allclose(inj.current(t), 250e-6 * np.sin(2 * np.pi * F * t + math.pi))
    with pytest.raises(ValueError):
        AstrocyteInjector(-0.1)


# --- learning rules -------------------------------------------------------------------

def test_stdp_and_inhibition_examples():
    assert stdp_delta(0.5, 0.0, 0.25, 5.0) == pytest.approx(0.125, rel=1e-15)
    assert stdp_delta(0.5, 2.0, 0.25, 5.0) == pytest.approx(0.08379, abs=5e-6)
    assert stdp_delta(0.5, -2.0, 0.25, 5.0) == stdp_delta(0.5, 2.0, 0.25, 5.0)
    assert inhibition_delta(0.5, 2.0, 0.15, 5.0) == pytest.approx(-0.05027, abs=5e-6)
    assert inhibition_delta(0.0, 0.3, 0.15, 5.0) == 0.0
    assert stdp_delta(0.5, 1e6, 0.25, 5.0) == 0.0
    assert stdp_delta(0.5, -1e6, 0.25, 5.0) == 0.0


def test_learning_rules_match_closed_forms():
    rng = np.random.default_rng(2)
    w = rng.uniform(0, 1, 10_000)
    d = rng.uniform(-50, 50, 10_000)
    for wi, di in zip(w, d):
        s = stdp_delta(wi, di, 0.25, 5.0)
        h = inhibition_delta(wi, di, 0.15, 5.0)
        s_ref = 0.25 * wi * math.exp(-abs(di) / 5.0)
        h_ref = -0.15 * wi * math.exp(-abs(di) / 5.0)
        assert s == pytest.approx(s_ref, rel=1e-12, abs=0.0)
        assert h == pytest.approx(h_ref, rel=1e-12, abs=0.0)
        assert abs(h) <= abs(s)


def test_learning_params_validation():
    with pytest.raises(ValueError):
        LearningParams(eta_plus=-1.0)
    with pytest.raises(ValueError):
        LearningParams(tau_plus=0.0)
    with pytest.raises(ValueError):
        LearningParams(cadence=0)


# --- learning events ----------------------------------------------------------------------

def test_empty_history_post_spike_changes_nothing():
    cb = Crossbar.from_weights([[0.3, 0.6], [0.7, 0.2]])
    before = cb.g.copy()
    apply_learning_event(cb, "Na", 1e-9, "post", SpikeHistory(PRE + POST), PRE, POST)
    assert np.array_equal(cb.g, before)


def test_in_phase_pairing_beats_anti_phase_by_the_closed_form_ratio():
    lp = LearningParams()
    cb = Crossbar.from_weights([[0.5, 0.5], [0.5, 0.5]], learning=lp)
    h = SpikeHistory(PRE + POST)
    h.add("N1", 10 * T)             # in phase with the post spike below
    h.add("N3", 10 * T - T / 2)     # half a period away
    w0 = cb.weights.copy()
    apply_learning_event(cb, "Na", 10 * T, "post", h, PRE, POST)
    dw = cb.weights - w0
    half = (T / 2) / lp.time_unit
    assert dw[0, 0] / dw[1, 0] == pytest.approx(math.exp(half / lp.tau_plus), rel=1e-9)
    assert dw[0, 0] > 0 and dw[1, 0] > 0
    assert dw[0, 1] < 0 and dw[1, 1] < 0


def test_conductances_stay_in_bounds_under_random_events():
    rng = np.random.default_rng(3)
    cb = Crossbar.random(rng, learning=LearningParams(eta_plus=0.9, eta_minus=0.9))
    h = SpikeHistory(PRE + POST, capacity=8)
    t = 0.0
    for _ in range(5000):
        t += rng.uniform(1e-12, 1e-10)
        if rng.uniform() < 0.5:
            apply_learning_event(cb, POST[rng.integers(2)], t, "post", h, PRE, POST)
        else:
            apply_learning_event(cb, PRE[rng.integers(2)], t, "pre", h, PRE, POST)
        assert np.all(cb.g >= cb.g_min) and np.all(cb.g <= cb.g_max)


def test_frozen_input_selectivity():
    # N1 fires in phase with Na (a few percent of a period of jitter either
    # way), N3 half a period away; Nb stays silent
    rng = np.random.default_rng(4)
    cb = Crossbar.from_weights([[0.5, 0.5], [0.5, 0.5]])
    h = SpikeHistory(PRE + POST)
    events = []
    for k in range(1, 61):
        events.append((k * T, "N1", "pre"))
        events.append((k * T + 0.5 * T, "N3", "pre"))
        events.append((k * T + rng.uniform(-0.05, 0.05) * T, "Na", "post"))
    events.sort()
    for t, n, kind in events:
        apply_learning_event(cb, n, t, kind, h, PRE, POST)
    assert len(events) >= 100
    assert cb.weights[0, 0] > cb.weights[1, 0]
    assert cb.weights[0, 0] - cb.weights[1, 0] > 0.5


def test_events_must_arrive_in_order():
    h = SpikeHistory(PRE + POST)
    cb = Crossbar.from_weights(np.full((2, 2), 0.5))
    apply_learning_event(cb, "N1", 2e-9, "pre", h, PRE, POST)
    with pytest.raises(ValueError):
        apply_learning_event(cb, "Na", 1e-9, "post", h, PRE, POST)
    with pytest.raises(ValueError):
        apply_learning_event(cb, "Na", 3e-9, "sideways", h, PRE, POST)


def test_spike_history_is_bounded_and_increasing():
    h = SpikeHistory(["a"], capacity=3)
    for t in range(10):
        h.add("a", float(t))
    assert h.times("a") == [7.0, 8.0, 9.0]
    with pytest.raises(ValueError):
        h.add("a", 9.0)
    with pytest.raises(ValueError):
        SpikeHistory(["a"], capacity=0)


# --- topology ---------------------------------------------------------------------------

def test_topology_validation():
    topo = NetworkTopology()
    assert topo.devices == ["N1", "N2", "N3", "N4", "Na", "Nb"]
    assert topo.representatives == ["N1", "N3"]
    with pytest.raises(ValueError):
        NetworkTopology(pre_groups=(("N1", "N2"), ("N2", "N4")))
    with pytest.raises(ValueError):
        NetworkTopology(posts=("N1", "Nb"))
    with pytest.raises(ValueError):
        NetworkTopology(pre_groups=(("N1",), ()))
    with pytest.raises(ValueError):
        NetworkTopology(pre_i_dc=(1e-4,))


def test_classify_labels():
    topo = NetworkTopology()
    phase = {("N1", "Na"): 5.0, ("N3", "Na"): 170.0, ("N1", "Nb"): -175.0, ("N3", "Nb"): 3.0}
    assert classify(phase, topo)[0] == "Na:A,Nb:B"
    phase[("N3", "Nb")] = 90.0
    assert classify(phase, topo)[0] == "unresolved"


# --- coupled simulation -------------------------------------------------------------------

def _topo(amplitude=0.25):
    return NetworkTopology(pre_i_dc=(I_OP, I_OP), post_i_dc=(I_OP, I_OP)).with_injector_amplitude(amplitude)


def test_binding_argument_checks():
    cb = Crossbar.from_weights(np.full((2, 2), 0.5))
    cfg = DeviceConfig()
    with pytest.raises(ValueError):
        simulate_binding(cfg, _topo(), cb, 100e-9, 120e-9, 0)
    with pytest.raises(ValueError):
        simulate_binding(cfg, _topo(), cb, 160e-9, 120e-9, 0, revoke_at=100e-9)
    with pytest.raises(ValueError):
        simulate_binding(cfg, _topo(), Crossbar.from_weights(np.full((3, 2), 0.5)), 160e-9, 120e-9, 0)


def test_unsynchronized_control_without_injection():
    cfg = DeviceConfig()
    pairs = [("N1", "N2"), ("N1", "N3"), ("N3", "N4"), ("N2", "N4")]
    ph = []
    for seed in range(10):
        cb = Crossbar.from_weights(np.full((2, 2), 0.5))
        r = simulate_binding(cfg, _topo(0.0), cb, 80e-9, 20e-9, seed, measure_window=60e-9,
                             learning=False)
        ph.append([abs(r.phase[p]) for p in pairs])
        assert np.allclose(r.weights[-1], 0.5)
    # 40 uniform |phase| draws: mean 90, sd 52/sqrt(40) = 8.2 deg
    assert np.mean(ph) == pytest.approx(90.0, abs=25.0)


def test_no_learning_when_rates_are_zero():
    lp = LearningParams(eta_plus=0.0, eta_minus=0.0)
    cb = Crossbar.from_weights([[0.2, 0.8], [0.6, 0.4]], learning=lp)
    r = simulate_binding(DeviceConfig(), _topo(), cb, 60e-9, 40e-9, 1, measure_window=20e-9)
    np.testing.assert_array_equal(r.weights[-1], cb.weights)
    assert sum(len(s) for s in r.spikes.values()) > 0


def test_weights_move_and_stay_bounded_with_learning():
    cb = Crossbar.from_weights([[0.5, 0.5], [0.5, 0.5]])
    r = simulate_binding(DeviceConfig(), _topo(), cb, 60e-9, 40e-9, 2, measure_window=20e-9)
    assert not np.allclose(r.weights[-1], 0.5)
    assert np.all(r.weights >= 0.0) and np.all(r.weights <= 1.0)
    # frozen after the learning window
    k = int(40e-9 / r.traces["N1"].dt)
    np.testing.assert_array_equal(r.weights[k + 1], r.weights[-1])


def test_binding_is_deterministic():
    cb = Crossbar.from_weights([[0.3, 0.6], [0.7, 0.2]])
    a = simulate_binding(DeviceConfig(), _topo(), cb.copy(), 40e-9, 20e-9, 5, measure_window=20e-9)
    b = simulate_binding(DeviceConfig(), _topo(), cb.copy(), 40e-9, 20e-9, 5, measure_window=20e-9)
    for n in a.traces:
        assert np.array_equal(a.traces[n].samples, b.traces[n].samples)
    assert np.array_equal(a.weights, b.weights)


def test_revocation_at_the_end_is_a_no_op():
    cb = Crossbar.from_weights(np.full((2, 2), 0.5))
    r = simulate_binding(DeviceConfig(), _topo(), cb, 60e-9, 20e-9, 3, measure_window=20e-9)
    assert revoke_synchronization(r, 60e-9) is r
    with pytest.raises(ValueError):
        revoke_synchronization(r, 10e-9)


def test_revocation_keeps_the_past_and_stops_the_injectors():
    cb = Crossbar.from_weights(np.full((2, 2), 0.5))
    r = simulate_binding(DeviceConfig(), _topo(), cb, 60e-9, 20e-9, 4, measure_window=20e-9)
    v = revoke_synchronization(r, 40e-9, duration=70e-9)
    k = int(round(40e-9 / r.traces["N1"].dt)) - 1
    assert np.array_equal(v.traces["N1"].samples[:k], r.traces["N1"].samples[:k])
    assert v.revoked_phase is not None
    assert np.all(np.isfinite(list(v.revoked_frequencies.values())))


def test_post_envelope_flattens_during_learning():
    # envelope variance of the post HM current, early vs late in learning,
    # summed over posts and averaged over seeds
    early, late = [], []
    for seed in range(4):
        cb = Crossbar.random(np.random.default_rng(seed))
        r = simulate_binding(DeviceConfig(), _topo(), cb, 140e-9, 120e-9, seed, measure_window=20e-9)
        for p in POST:
            cur = r.post_currents[p]
            early.append(envelope_variance(cur, cur.t0, 20e-9))
            late.append(envelope_variance(cur, 100e-9, 120e-9))
    assert np.mean(late) < np.mean(early)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from astrosync.analysis import periodogram
from astrosync.device import (CalibrationError, CalibrationRecord, DeviceConfig, DeviceGeometry,
                              DriveSignal, MtjReadout, NoOscillation, TimeSeries, calibrate,
                              free_running_frequency, frequency_sweep, locking_range,
                              measure_frequency, resistance, simulate_trace,
                              spin_current_from_charge)

# 0.3 * 4000/300 * (1 - sech(3/1.4)), evaluated at 30 digits
GAIN = 3.07418933183776175521963151404
I_OP = 403.4375e-6       # 7.05 GHz at zero temperature
COLD = DeviceConfig(temperature=0.0)


# --- transduction ----------------------------------------------------------------

def test_spin_gain_matches_hand_evaluation():
    g = DeviceGeometry()
    assert g.spin_gain == pytest.approx(GAIN, rel=1e-12)
    assert spin_current_from_charge(420e-6, g) == pytest.approx(1.29115951937186e-3, rel=1e-12)
    assert spin_current_from_charge(0.0, g) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e-2, 1e-2))
def test_spin_current_is_linear(a, i):
    g = DeviceGeometry()
    lhs = spin_current_from_charge(a * i, g)
    rhs = a * spin_current_from_charge(i, g)
    # both sides are one rounding of the same product
    assert abs(lhs - rhs) <= 4 * np.spacing(max(abs(lhs), abs(rhs), 1e-300))


def test_thick_heavy_metal_limit():
    g = DeviceGeometry(hm_thickness=200.0, lambda_sf=1.4, hm_width=100.0)
    assert g.spin_gain == pytest.approx(0.3 * g.a_fm / g.a_hm, rel=1e-12)


def test_elliptical_area_flag():
    r = DeviceGeometry()
    e = DeviceGeometry(shape="elliptical")
    assert r.a_fm == pytest.approx(4000e-18, rel=1e-12)
    assert e.a_fm == pytest.approx(math.pi / 4 * 4000e-18, rel=1e-12)
    with pytest.raises(ValueError):
        DeviceGeometry(shape="hexagonal")
    with pytest.raises(ValueError):
        DeviceGeometry(fm_width=0.0)


# --- readout -----------------------------------------------------------------------

def test_resistance_at_reference_angles():
    r = MtjReadout.from_midpoint()
    assert r.r_parallel == pytest.approx(1000.0)
    assert r.r_antiparallel == pytest.approx(3000.0)
    assert abs(r.tmr - 2.0) < 1e-12
    assert resistance((1, 0, 0), r) == pytest.approx(1000.0)
    assert resistance((-1, 0, 0), r) == pytest.approx(3000.0)
    assert resistance((0, 1, 0), r) == pytest.approx(2000.0)


def test_resistance_bounds_for_both_models():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(10_000, 3))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    for model in ("linear", "conductance"):
        r = MtjReadout(1000.0, 3000.0, model)
        rv = resistance(m, r)
        assert rv.min() >= 1000.0 and rv.max() <= 3000.0
    r = MtjReadout(1000.0, 3000.0, "conductance")
    assert resistance((0, 1, 0), r) == pytest.approx(1500.0)


def test_readout_validation():
    with pytest.raises(ValueError):
        MtjReadout(3000.0, 1000.0)


# --- containers --------------------------------------------------------------------

def test_time_series_invariants():
    with pytest.raises(ValueError):
        TimeSeries(0.0, 0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        TimeSeries(0.0, 1.0, [1.0])
    with pytest.raises(ValueError):
        TimeSeries(0.0, 1.0, [1.0, np.nan])
    ts = TimeSeries(0.0, 1e-9, np.arange(10.0))
    w = ts.window(2e-9, 5e-9)
    assert w.t0 == pytest.approx(2e-9) and list(w.samples) == [2.0, 3.0, 4.0]


def test_drive_signal_evaluation():
    d = DriveSignal(1e-4, ((2e-5, 1e9, 0.5),), addend=np.array([0.0, 1e-6, 2e-6]))
    t = np.array([0.0, 1e-13, 2e-13])
    expected = 1e-4 + 2e-5 * np.sin(2 * np.pi * 1e9 * t + 0.5) + np.array([0.0, 1e-6, 2e-6])
    np.testing.assert_allclose(d.current(t, 1e-13), expected, rtol=1e-15)
    with pytest.raises(ValueError):
        DriveSignal(np.inf)
    with pytest.raises(ValueError):
        d.current(t)


# --- trace simulation -----------------------------------------------------------------

def test_rejects_too_short_duration():
    with pytest.raises(ValueError):
        simulate_trace(DeviceConfig(), DriveSignal(I_OP), 50 * 1e-13, 0)


def test_sub_threshold_trace_settles():
    # the zero-temperature oscillation threshold lies between 150 and 180 uA
    tr = simulate_trace(COLD, DriveSignal(100e-6), 30e-9, 0, record_every=10)
    tail = tr.mr.window(20e-9).samples
    assert np.ptp(tail) < 1e-6
    fast = simulate_trace(COLD, DriveSignal(180e-6), 30e-9, 0, record_every=10)
    assert np.ptp(fast.mr.window(20e-9).samples) > 500.0


def test_sustained_oscillation_has_one_dominant_line():
    tr = simulate_trace(COLD, DriveSignal(I_OP), 110e-9, 0, record_every=10)
    p = periodogram(tr.mr.window(10e-9)).power
    p[0] = 0.0
    k = int(np.argmax(p))
    assert p[k] > 10 * np.delete(p, k).max()


def test_same_seed_gives_identical_traces():
    a = simulate_trace(DeviceConfig(), DriveSignal(I_OP), 5e-9, 42)
    b = simulate_trace(DeviceConfig(), DriveSignal(I_OP), 5e-9, 42)
    c = simulate_trace(DeviceConfig(), DriveSignal(I_OP), 5e-9, 43)
    assert np.array_equal(a.mr.samples, b.mr.samples)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a.m, b.m))
    assert not np.array_equal(a.mr.samples, c.mr.samples)


def test_no_oscillation_is_reported():
    with pytest.raises(NoOscillation):
        free_running_frequency(DeviceConfig(), 100e-6, seed=0)
    tr = simulate_trace(COLD, DriveSignal(100e-6), 30e-9, 0, record_every=10)
    with pytest.raises(NoOscillation):
        measure_frequency(tr, 10e-9)


# --- frequency characterization -----------------------------------------------------------

def test_calibrated_operating_point(tmp_path):
    rec = calibrate(COLD, 7.05e9, cache_dir=tmp_path)
    assert abs(rec.frequency - 7.05e9) < 20e6
    f = free_running_frequency(COLD, rec.i_dc, temperature=0.0)
    assert f == pytest.approx(7.05e9, abs=10e6)
    again = calibrate(COLD, 7.05e9)
    assert abs(again.i_dc - rec.i_dc) <= 1e-12
    cached = list(tmp_path.glob("calibration-*.json"))
    assert len(cached) == 1 and CalibrationRecord.load(cached[0]) == rec


def test_calibration_below_range_fails():
    with pytest.raises(CalibrationError):
        calibrate(COLD, 2.0e9)


def test_frequency_rises_with_current():
    grid = np.linspace(320e-6, 700e-6, 8)
    f = frequency_sweep(COLD, grid, temperature=0.0)
    assert np.all(np.isfinite(f))
    assert np.all(np.diff(f) > 0)


def test_seed_spread_at_room_temperature_below_one_percent():
    f = np.array([free_running_frequency(DeviceConfig(), I_OP, seed=s, estimator="rate")
                  for s in range(10)])
    assert 100 * f.std(ddof=1) / f.mean() < 1.0


def test_zero_amplitude_locks_only_at_the_free_running_point():
    grid = np.arange(380e-6, 400.1e-6, 1e-6)
    lr = locking_range(COLD, 6.5e9, 0.0, grid, temperature=0.0)
    assert lr.width <= 1e-6 + 1e-12


def test_locking_intervals_widen_and_nest():
    grid = np.arange(340e-6, 420.1e-6, 5e-6)
    small = locking_range(COLD, 6.5e9, 10e-6, grid, temperature=0.0)
    large = locking_range(COLD, 6.5e9, 20e-6, grid, temperature=0.0)
    assert small.is_locked and large.is_locked
    assert large.width >= small.width
    assert large.i_min <= small.i_min and large.i_max >= small.i_max

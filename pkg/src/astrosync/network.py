"""Binding network: injector-driven pre groups, a learning crossbar, two posts.

Pre groups share a heavy-metal channel and an astrocyte-like RF injector;
each post sits on its own channel and receives the crossbar current
``I_j = sum_i G_ij V_i`` built from the DC-blocked read voltage of each
group's representative device. All devices advance on one timeline and the
couplings read the previous step's values, so the result does not depend on
device order.
"""

import cmath
from collections import deque
from dataclasses import dataclass, field, replace
import math
from typing import Optional

import numba as nb
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import hilbert

from . import magnetics as mag
from .analysis import NoPeakError, cross_spectrum, extract_spikes
from .device import DriveSignal, TimeSeries, simulate_trace
from .rng import stream_key

PRE = 0
POST = 1


@dataclass(frozen=True)
class AstrocyteInjector:
    """Behavioral RF source feeding one heavy-metal channel."""

    amplitude: float = 0.25
    frequency: float = 7.05e9
    phase: float = 0.0
    source_resistance: float = 1000.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if not self.source_resistance > 0 or not self.frequency > 0:
            raise ValueError("frequency and source resistance must be positive")

    @property
    def peak_current(self):
        return self.amplitude / self.source_resistance

    def current(self, t):
        return self.peak_current * np.sin(2 * math.pi * self.frequency * np.asarray(t) + self.phase)


@dataclass(frozen=True)
class LearningParams:
    """Symmetric STDP with lateral inhibition.

    Spike-time differences are measured in units of ``time_unit`` seconds.
    Updates fire on every ``cadence``-th spike of each neuron.
    """

    eta_plus: float = 0.25
    tau_plus: float = 5.0
    eta_minus: float = 0.15
    tau_minus: float = 5.0
    time_unit: float = 1.0 / (30 * 7.05e9)
    cadence: int = 10

    def __post_init__(self):
        if self.eta_plus < 0 or self.eta_minus < 0:
            raise ValueError("learning rates must be non-negative")
        if not (self.tau_plus > 0 and self.tau_minus > 0 and self.time_unit > 0):
            raise ValueError("time constants must be positive")
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")

    def as_array(self):
        return np.array([self.eta_plus, self.tau_plus, self.eta_minus, self.tau_minus,
                         self.time_unit])


class Crossbar:
    """Conductance matrix ``G[row, col]`` bounded to ``[g_min, g_max]``."""

    def __init__(self, g, g_min=1.0 / 25000.0, on_off=10.0, learning=None):
        self.g_min = float(g_min)
        self.g_max = self.g_min * float(on_off)
        g = np.array(g, dtype=float)
        if g.ndim != 2:
            raise ValueError("conductance matrix must be 2-D")
        if np.any(g < self.g_min * (1 - 1e-12)) or np.any(g > self.g_max * (1 + 1e-12)):
            raise ValueError("conductances must lie in [g_min, g_max]")
        self.g = np.clip(g, self.g_min, self.g_max)
        self.learning = learning or LearningParams()

    @classmethod
    def from_weights(cls, w, g_min=1.0 / 25000.0, on_off=10.0, learning=None):
        w = np.clip(np.asarray(w, dtype=float), 0.0, 1.0)
        return cls(g_min + w * g_min * (on_off - 1.0), g_min, on_off, learning)

    @classmethod
    def random(cls, rng, shape=(2, 2), low=0.0, high=1.0, **kw):
        return cls.from_weights(rng.uniform(low, high, size=shape), **kw)

    @property
    def weights(self):
        return (self.g - self.g_min) / (self.g_max - self.g_min)

    def set_weights(self, w):
        self.g = self.g_min + np.clip(w, 0.0, 1.0) * (self.g_max - self.g_min)

    @property
    def resistances(self):
        return 1.0 / self.g

    def copy(self):
        return Crossbar(self.g.copy(), self.g_min, self.g_max / self.g_min, self.learning)


class SpikeHistory:
    """Bounded per-neuron record of recent spike times."""

    def __init__(self, neurons, capacity=16):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._buf = {n: deque(maxlen=capacity) for n in neurons}

    def add(self, neuron, t):
        buf = self._buf[neuron]
        if buf and t <= buf[-1]:
            raise ValueError("spike times must increase per neuron")
        buf.append(float(t))

    def latest(self, neuron):
        buf = self._buf[neuron]
        return buf[-1] if buf else None

    def times(self, neuron):
        return list(self._buf[neuron])

    def newest_overall(self):
        return max((b[-1] for b in self._buf.values() if b), default=-math.inf)


# --- coupling and learning rules ---------------------------------------------------

@nb.njit(cache=True)
def stdp_delta(w, dt_units, eta_plus, tau_plus):
    """Symmetric potentiation ``eta+ w exp(-|dt| / tau+)``."""
    return eta_plus * w * math.exp(-abs(dt_units) / tau_plus)


@nb.njit(cache=True)
def inhibition_delta(w, dt_units, eta_minus, tau_minus):
    """Lateral depression ``-eta- w exp(-|dt| / tau-)``."""
    return -eta_minus * w * math.exp(-abs(dt_units) / tau_minus)


@nb.njit(cache=True)
def _learn(w, kind, idx, partner_dt, params):
    """Apply one learning event to normalized weights ``w[row, col]`` in place.

    ``partner_dt[k]`` is the spike-time difference (s) between the event and
    the nearest spike of partner ``k`` (rows for a post event, columns for a
    pre event), ``nan`` when the partner has not spiked. A post spike in
    column ``idx`` potentiates that column row by row and depresses the same
    rows in the other columns; a pre spike in row ``idx`` does the same along
    its row against each column.
    """
    eta_p, tau_p, eta_m, tau_m, unit = params[0], params[1], params[2], params[3], params[4]
    n_row, n_col = w.shape
    if kind == POST:
        j = idx
        for r in range(n_row):
            if math.isnan(partner_dt[r]):
                continue
            d = partner_dt[r] / unit
            w[r, j] = min(1.0, max(0.0, w[r, j] + stdp_delta(w[r, j], d, eta_p, tau_p)))
            for c in range(n_col):
                if c != j:
                    w[r, c] = min(1.0, max(0.0, w[r, c] + inhibition_delta(w[r, c], d, eta_m, tau_m)))
    else:
        i = idx
        for c in range(n_col):
            if math.isnan(partner_dt[c]):
                continue
            d = partner_dt[c] / unit
            w[i, c] = min(1.0, max(0.0, w[i, c] + stdp_delta(w[i, c], d, eta_p, tau_p)))
            for r in range(n_row):
                if r != i:
                    w[r, c] = min(1.0, max(0.0, w[r, c] + inhibition_delta(w[r, c], d, eta_m, tau_m)))


@nb.njit(cache=True)
def _nearest_dt(times, count, t):
    """Signed ``t - t_partner`` for the partner spike closest to ``t``."""
    best = np.nan
    for k in range(min(count, times.shape[0])):
        d = t - times[k]
        if math.isnan(best) or abs(d) < abs(best):
            best = d
    return best


def apply_learning_event(crossbar, neuron, time, kind, history, pre_neurons, post_neurons):
    """Update ``crossbar`` in place for one spike and record it in ``history``.

    ``pre_neurons[i]`` labels row ``i`` and ``post_neurons[j]`` column ``j``.
    Each synapse pairs the event with the nearest recorded partner spike.
    Returns the crossbar for chaining.
    """
    if time < history.newest_overall():
        raise ValueError("event precedes spikes already in the history")
    if kind == "post":
        partners, code, idx = pre_neurons, POST, post_neurons.index(neuron)
    elif kind == "pre":
        partners, code, idx = post_neurons, PRE, pre_neurons.index(neuron)
    else:
        raise ValueError("kind must be 'pre' or 'post'")
    dts = np.array([_nearest_dt(np.array(history.times(n) or [0.0]), len(history.times(n)), time)
                    for n in partners])
    w0 = crossbar.weights
    w = w0.copy()
    _learn(w, code, idx, dts, crossbar.learning.as_array())
    changed = w != w0
    crossbar.g[changed] = crossbar.g_min + w[changed] * (crossbar.g_max - crossbar.g_min)
    history.add(neuron, time)
    return crossbar


def pre_voltage(mr, i_read=50e-6, period=1.0 / 7.05e9):
    """Read voltage ``I_read R(t)`` with its trailing one-period mean removed.

    Models the bias tee: the DC part is dumped to ground and only the AC part
    reaches the crossbar. The first window uses the samples seen so far.
    """
    v = i_read * np.asarray(mr.samples, dtype=float)
    n = min(max(1, int(round(period / mr.dt))), v.size)
    mean = np.empty_like(v)
    mean[:n - 1] = np.cumsum(v[:n - 1]) / np.arange(1, n)
    mean[n - 1:] = sliding_window_view(v, n).mean(axis=1)
    return TimeSeries(mr.t0, mr.dt, v - mean, "v_pre")


def post_ac_current(crossbar, pre_voltages, j):
    """Crossbar current into column ``j``: ``sum_i G[i, j] V_i``."""
    return float(np.dot(crossbar.g[:, j], np.asarray(pre_voltages, dtype=float)))


# --- topology --------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkTopology:
    """Pre groups on shared channels plus one private channel per post.

    ``pre_groups[i][0]`` is the representative whose voltage drives row ``i``.
    """

    pre_groups: tuple = (("N1", "N2"), ("N3", "N4"))
    posts: tuple = ("Na", "Nb")
    injectors: tuple = (AstrocyteInjector(phase=0.0), AstrocyteInjector(phase=math.pi))
    pre_i_dc: tuple = (404e-6, 404e-6)
    post_i_dc: tuple = (404e-6, 404e-6)

    def __post_init__(self):
        names = [n for g in self.pre_groups for n in g] + list(self.posts)
        if len(set(names)) != len(names):
            raise ValueError("every device must belong to exactly one channel")
        if any(len(g) == 0 for g in self.pre_groups):
            raise ValueError("empty pre group")
        if len(self.injectors) != len(self.pre_groups) or len(self.pre_i_dc) != len(self.pre_groups):
            raise ValueError("one injector and one DC drive per pre group")
        if len(self.post_i_dc) != len(self.posts):
            raise ValueError("one DC drive per post")

    @property
    def devices(self):
        return [n for g in self.pre_groups for n in g] + list(self.posts)

    @property
    def representatives(self):
        return [g[0] for g in self.pre_groups]

    def group_of(self, name):
        for k, g in enumerate(self.pre_groups):
            if name in g:
                return k
        return None

    def with_injector_amplitude(self, amplitude):
        return replace(self, injectors=tuple(replace(i, amplitude=amplitude) for i in self.injectors))


@dataclass(frozen=True)
class CouplingParams:
    """Read-out path from a pre device to the crossbar rows.

    The read voltage ``I_read R(t)`` is DC-blocked (trailing one-period
    mean), amplified by ``gain``, optionally band-limited by ``filter_stages``
    resonant bandpass sections of width ``bandwidth`` centred on
    ``1/period``, and delayed by ``delay`` seconds. ``delay=None`` calibrates
    the delay so a post locks in phase with the row that drives it; the
    calibration probes a single device at ``probe_amplitude``.
    """

    i_read: float = 50e-6
    gain: float = 9.0
    bandwidth: Optional[float] = 1e9
    filter_stages: int = 1
    period: float = 1.0 / 7.05e9
    delay: Optional[float] = None
    probe_amplitude: float = 65e-6
    threshold: float = 2000.0
    refractory_fraction: float = 0.25

    def __post_init__(self):
        if not (self.i_read >= 0 and self.gain >= 0 and self.period > 0):
            raise ValueError("read current, gain and period must be non-negative")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not 0 <= self.filter_stages <= 4:
            raise ValueError("filter_stages must be between 0 and 4")

    @property
    def stages(self):
        return 0 if self.bandwidth is None else self.filter_stages

    def filter_coefficients(self, dt):
        """Normalized biquad ``(b0, b1, b2, a1, a2)`` with unit gain at the centre."""
        if self.bandwidth is None:
            return np.array([1.0, 0.0, 0.0, 0.0, 0.0])
        w0 = 2.0 * math.pi * dt / self.period
        al = math.sin(w0) * self.bandwidth * self.period / 2.0
        a0 = 1.0 + al
        return np.array([al / a0, 0.0, -al / a0, -2.0 * math.cos(w0) / a0, (1.0 - al) / a0])

    def filter_response(self, f, dt):
        """Complex response of the band-limiting sections at frequency ``f``."""
        b0, b1, b2, a1, a2 = self.filter_coefficients(dt)
        z = np.exp(-2j * math.pi * f * dt)
        h = (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
        return complex(h ** self.stages)


# --- compiled network kernel -------------------------------------------------------

@nb.njit(cache=True)
def _network_kernel(m, n_steps, dt, keys, sigma, gain, beta, demag, hk, ms, gp, alpha,
                    hext, pol, pin, r_p, r_ap,
                    hm_of, hm_dc, inj, inj_off_step, n_pre_hm, rep, post_dev,
                    w, g_min, g_max, learn_params, cadence, learn_until, horizon,
                    i_read, amp_gain, bq, n_stages, ma_len, delay_len, threshold, refractory,
                    record_every, out_mr, out_w, out_ipost,
                    spike_t, spike_n):
    """Advance the whole network by ``n_steps``.

    Channels ``0..n_pre_hm-1`` carry injectors ``inj[h] = (amp A, f, phase)``;
    the rest are post channels whose AC current comes from the crossbar.
    """
    n_dev = m.shape[0]
    n_hm = hm_dc.shape[0]
    n_row, n_col = w.shape
    ma_buf = np.zeros((n_row, ma_len))
    ma_sum = np.zeros(n_row)
    dl_buf = np.zeros((n_row, delay_len + 1))
    bq_state = np.zeros((n_row, max(n_stages, 1), 4))
    v_out = np.zeros(n_row)
    prev_r = np.empty(n_dev)
    last_spk = np.full(n_dev, -1e30)
    n_hist = 4
    hist = np.zeros((n_dev, n_hist))
    hcount = np.zeros(n_dev, dtype=np.int64)
    pending = np.full(n_dev, np.nan)
    partner_dt = np.full(max(n_row, n_col), np.nan)
    n_events = np.zeros(n_dev, dtype=np.int64)
    row_of = np.full(n_dev, -1)
    col_of = np.full(n_dev, -1)
    for r in range(n_row):
        row_of[rep[r]] = r
    for c in range(n_col):
        col_of[post_dev[c]] = c
    half = 0.5 * (r_ap - r_p)
    for d in range(n_dev):
        prev_r[d] = r_p + half * (1.0 - (m[d, 0] * pin[0] + m[d, 1] * pin[1] + m[d, 2] * pin[2]))
    ic0 = np.empty(n_hm)
    ic1 = np.empty(n_hm)
    rec = 0
    for i in range(n_steps):
        t = i * dt
        for h in range(n_hm):
            a0 = hm_dc[h]
            a1 = hm_dc[h]
            if h < n_pre_hm:
                if i < inj_off_step:
                    a0 += inj[h, 0] * math.sin(2.0 * math.pi * inj[h, 1] * t + inj[h, 2])
                if i + 1 < inj_off_step:
                    a1 += inj[h, 0] * math.sin(2.0 * math.pi * inj[h, 1] * (t + dt) + inj[h, 2])
            else:
                c = h - n_pre_hm
                s = 0.0
                for r in range(n_row):
                    s += (g_min + w[r, c] * (g_max - g_min)) * v_out[r]
                a0 += s
                a1 += s
            ic0[h] = a0
            ic1[h] = a1
        for d in range(n_dev):
            h = hm_of[d]
            if sigma[d] > 0.0:
                g0, g1, g2 = mag.normal3(keys[d], i)
                tx = sigma[d] * g0
                ty = sigma[d] * g1
                tz = sigma[d] * g2
            else:
                tx = 0.0
                ty = 0.0
                tz = 0.0
            mx, my, mz = mag._heun(m[d, 0], m[d, 1], m[d, 2], dt, gain[d] * ic0[h], gain[d] * ic1[h],
                                   pol[0], pol[1], pol[2], tx, ty, tz, ms,
                                   demag[d, 0], demag[d, 1], demag[d, 2], hk[d],
                                   hext[0], hext[1], hext[2], gp, alpha, beta[d])
            if not (math.isfinite(mx) and math.isfinite(my) and math.isfinite(mz)):
                return mag.DIVERGED, i, d
            m[d, 0] = mx
            m[d, 1] = my
            m[d, 2] = mz
        t1 = t + dt
        # readout, bias tee and delay line for each crossbar row
        for r in range(n_row):
            d = rep[r]
            res = r_p + half * (1.0 - (m[d, 0] * pin[0] + m[d, 1] * pin[1] + m[d, 2] * pin[2]))
            v = i_read * res
            slot = i % ma_len
            ma_sum[r] += v - ma_buf[r, slot]
            ma_buf[r, slot] = v
            cnt = min(i + 1, ma_len)
            ac = amp_gain * (v - ma_sum[r] / cnt)
            for o in range(n_stages):
                st = bq_state[r, o]
                y = bq[0] * ac + bq[1] * st[0] + bq[2] * st[1] - bq[3] * st[2] - bq[4] * st[3]
                st[1] = st[0]
                st[0] = ac
                st[3] = st[2]
                st[2] = y
                ac = y
            dl_buf[r, i % (delay_len + 1)] = ac
            v_out[r] = dl_buf[r, (i + 1) % (delay_len + 1)] if i >= delay_len else 0.0
        # online spikes; learning events wait ``horizon`` so partners on both sides are known
        for d in range(n_dev):
            res = r_p + half * (1.0 - (m[d, 0] * pin[0] + m[d, 1] * pin[1] + m[d, 2] * pin[2]))
            if prev_r[d] < threshold <= res:
                ts = t + dt * (threshold - prev_r[d]) / (res - prev_r[d])
                if ts - last_spk[d] >= refractory:
                    last_spk[d] = ts
                    k = spike_n[d]
                    if k < spike_t.shape[1]:
                        spike_t[d, k] = ts
                    spike_n[d] = k + 1
                    hist[d, hcount[d] % n_hist] = ts
                    hcount[d] += 1
                    if row_of[d] >= 0 or col_of[d] >= 0:
                        n_events[d] += 1
                        if ts < learn_until and n_events[d] % cadence == 0:
                            pending[d] = ts
            prev_r[d] = res
        for d in range(n_dev):
            if not math.isnan(pending[d]) and t1 >= pending[d] + horizon:
                te = pending[d]
                pending[d] = np.nan
                if col_of[d] >= 0:
                    for r in range(n_row):
                        partner_dt[r] = _nearest_dt(hist[rep[r]], hcount[rep[r]], te)
                    _learn(w, POST, col_of[d], partner_dt, learn_params)
                else:
                    for c in range(n_col):
                        partner_dt[c] = _nearest_dt(hist[post_dev[c]], hcount[post_dev[c]], te)
                    _learn(w, PRE, row_of[d], partner_dt, learn_params)
        if (i + 1) % record_every == 0 and rec < out_mr.shape[1]:
            for d in range(n_dev):
                out_mr[d, rec] = prev_r[d]
            for r in range(n_row):
                for c in range(n_col):
                    out_w[rec, r, c] = w[r, c]
            for c in range(n_col):
                out_ipost[c, rec] = ic1[n_pre_hm + c]
            rec += 1
    return mag.OK, -1, -1


# --- binding simulation ------------------------------------------------------------

@dataclass
class BindingResult:
    """Outcome of one binding run.

    ``phase`` holds the cross-spectrum phase (deg) between every device pair
    at the injection frequency, measured after learning and before any
    revocation. ``label`` names the group each post settled into, e.g.
    ``"Na:A,Nb:B"``, or ``"unresolved"``. With the injectors revoked,
    ``revoked_phase`` and ``revoked_frequencies`` hold the same measures over
    the final window of the run.
    """

    seed: int
    traces: dict
    weights: np.ndarray
    post_currents: dict
    spikes: dict
    phase: dict
    label: str
    post_groups: dict
    frequencies: dict
    learning_window: float
    duration: float
    revoke_at: Optional[float] = None
    revoked_phase: Optional[dict] = None
    revoked_frequencies: Optional[dict] = None
    setup: dict = field(default_factory=dict, repr=False)

    @property
    def resistances(self):
        g = self.setup["g_min"] + self.weights * (self.setup["g_max"] - self.setup["g_min"])
        return 1.0 / g

    @property
    def is_bound(self):
        """True when the posts settled into different groups."""
        return self.label != "unresolved" and len(set(self.post_groups.values())) == len(self.post_groups)


GROUP_NAMES = "ABCDEFGH"


def locking_phase(cfg, i_dc, amplitude, frequency, settle=20e-9, window=200e-9,
                  temperature=None, seed=0):
    """Mean phase (deg) of the locked MR relative to a ``sin`` drive.

    At finite temperature thermal detuning shifts the locking phase, so the
    measurement runs at ``cfg.temperature`` unless told otherwise.
    """
    drive = DriveSignal(i_dc, ((amplitude, frequency, 0.0),))
    tr = simulate_trace(cfg, drive, settle + window, seed, record_every=10,
                        temperature=temperature, name="probe")
    mr = tr.mr.window(settle)
    ref = TimeSeries(mr.t0, mr.dt, np.sin(2 * math.pi * frequency * mr.times))
    cs = cross_spectrum(ref, mr)
    k = int(np.argmin(np.abs(cs.frequencies - frequency)))
    return float(cs.phase[k])


def coupling_delay(cfg, i_dc, amplitude, frequency, temperature=None):
    """Delay that cancels the drive-to-MR locking phase of a post device."""
    psi = locking_phase(cfg, i_dc, amplitude, frequency, temperature=temperature)
    return (psi % 360.0) / 360.0 / frequency


def calibrate_coupling(cfg, topology, coupling=None):
    """Return ``coupling`` with its delay fixed.

    The delay makes the filtered, delayed row voltage reach a post with the
    phase at which a single device locks to a ``sin`` drive of
    ``probe_amplitude``, so a locked post oscillates in phase with its row.
    """
    coupling = coupling or CouplingParams()
    if coupling.delay is not None:
        return coupling
    f_inj = topology.injectors[0].frequency
    lag = -math.degrees(cmath.phase(coupling.filter_response(f_inj, cfg.dt)))
    psi = locking_phase(cfg, topology.post_i_dc[0], coupling.probe_amplitude, f_inj)
    return replace(coupling, delay=((psi - lag) % 360.0) / 360.0 / f_inj)


def classify(phase, topology, lock_deg=45.0):
    """Assign each post to the group whose representative it is phase-locked with."""
    groups = {}
    for post in topology.posts:
        hits = []
        for k, rep in enumerate(topology.representatives):
            if abs(phase[(rep, post)]) < lock_deg:
                hits.append(k)
        groups[post] = GROUP_NAMES[hits[0]] if len(hits) == 1 else None
    if any(g is None for g in groups.values()):
        return "unresolved", groups
    return ",".join(f"{p}:{groups[p]}" for p in topology.posts), groups


def simulate_binding(cfg, topology, crossbar, duration, learning_window, seed,
                     coupling=None, measure_window=40e-9, revoke_at=None,
                     record_every=10, learning=True, max_spikes=4096):
    """Run the binding network on one coupled timeline.

    Learning events are applied while ``t < learning_window``; afterwards the
    crossbar is frozen. Pairwise phases are measured over the
    ``measure_window`` seconds before the injectors are revoked (or before
    the end of the run). ``revoke_at`` switches the injectors off; the
    desynchronized state is then measured over the final ``measure_window``.
    """
    if learning_window > duration:
        raise ValueError("learning window exceeds the simulation")
    if revoke_at is not None and not learning_window <= revoke_at < duration:
        raise ValueError("revocation must fall between the learning window and the end")
    locked_end = duration if revoke_at is None else revoke_at
    slack = 1e-3 * cfg.dt
    if measure_window > locked_end - learning_window + slack:
        raise ValueError("measurement window overlaps learning")
    if revoke_at is not None and measure_window > duration - revoke_at + slack:
        raise ValueError("measurement window overlaps revocation")
    coupling = coupling or CouplingParams()
    dt = cfg.dt
    n_steps = int(round(duration / dt))
    names = topology.devices
    n_pre_hm = len(topology.pre_groups)
    hm_of = np.array([topology.group_of(n) if topology.group_of(n) is not None
                      else n_pre_hm + topology.posts.index(n) for n in names], dtype=np.int64)
    hm_dc = np.array(list(topology.pre_i_dc) + list(topology.post_i_dc), dtype=float)
    inj = np.array([[i.peak_current, i.frequency, i.phase] for i in topology.injectors])
    rep = np.array([names.index(r) for r in topology.representatives], dtype=np.int64)
    post_dev = np.array([names.index(p) for p in topology.posts], dtype=np.int64)
    if crossbar.g.shape != (len(rep), len(post_dev)):
        raise ValueError("crossbar shape must be (pre groups, posts)")
    coupling = calibrate_coupling(cfg, topology, coupling)
    delay = coupling.delay
    p = cfg.material()
    sigma = np.full(len(names), mag.thermal_sigma(p, dt))
    gain = np.full(len(names), cfg.geometry.spin_gain)
    beta = np.full(len(names), p.spin_torque_rate)
    hk = np.full(len(names), p.hk)
    demag = np.tile(np.array(p.demag), (len(names), 1))
    keys = np.array([stream_key(seed, n) for n in names], dtype=np.uint64)
    m = np.tile(cfg.initial_m(), (len(names), 1))
    w = crossbar.weights.copy()
    n_rec = n_steps // record_every
    out_mr = np.empty((len(names), n_rec))
    out_w = np.empty((n_rec,) + w.shape)
    out_ip = np.empty((len(post_dev), n_rec))
    spike_t = np.zeros((len(names), max_spikes))
    spike_n = np.zeros(len(names), dtype=np.int64)
    lp = crossbar.learning
    params = lp.as_array() if learning else np.array([0.0, 1.0, 0.0, 1.0, lp.time_unit])
    inj_off = n_steps + 1 if revoke_at is None else int(round(revoke_at / dt))
    status, step, dev = _network_kernel(
        m, n_steps, dt, keys, sigma, gain, beta, demag, hk, cfg.ms, p.gamma_prime, cfg.alpha,
        np.array(cfg.h_ext), np.array(cfg.polarization), np.array(cfg.pinned_axis),
        cfg.readout.r_parallel, cfg.readout.r_antiparallel,
        hm_of, hm_dc, inj, inj_off, n_pre_hm, rep, post_dev,
        w, crossbar.g_min, crossbar.g_max, params, lp.cadence, learning_window, 0.5 * coupling.period,
        coupling.i_read, coupling.gain, coupling.filter_coefficients(dt), coupling.stages,
        max(1, int(round(coupling.period / dt))), int(round(delay / dt)),
        coupling.threshold, coupling.refractory_fraction * coupling.period,
        record_every, out_mr, out_w, out_ip, spike_t, spike_n)
    if status != mag.OK:
        raise mag.SimulationDiverged(step, names[dev], f" at t = {step * dt * 1e9:.3f} ns")
    rdt = record_every * dt
    traces = {n: TimeSeries(rdt, rdt, out_mr[k], n) for k, n in enumerate(names)}
    post_currents = {n: TimeSeries(rdt, rdt, out_ip[k], f"{n}/i_hm") for k, n in enumerate(topology.posts)}
    spikes = {n: spike_t[k, :min(spike_n[k], max_spikes)].copy() for k, n in enumerate(names)}
    f_inj = topology.injectors[0].frequency
    phase = pair_phases(traces, locked_end - measure_window, locked_end, f_inj)
    label, groups = classify(phase, topology)
    freqs = window_frequencies(traces, locked_end - measure_window, locked_end)
    revoked_phase = revoked_freqs = None
    if revoke_at is not None:
        revoked_phase = pair_phases(traces, duration - measure_window, duration, f_inj)
        revoked_freqs = window_frequencies(traces, duration - measure_window, duration)
    setup = dict(cfg=cfg, topology=topology, crossbar=crossbar, coupling=coupling,
                 measure_window=measure_window, record_every=record_every, learning=learning,
                 g_min=crossbar.g_min, g_max=crossbar.g_max)
    return BindingResult(seed, traces, out_w, post_currents, spikes, phase, label, groups, freqs,
                         learning_window, duration, revoke_at, revoked_phase, revoked_freqs, setup)


def window_frequencies(traces, t_start, t_stop):
    """Mean spike rate of each MR trace inside a window; ``nan`` without spikes."""
    out = {}
    for n, tr in traces.items():
        try:
            out[n] = extract_spikes(tr.window(t_start, t_stop)).mean_rate()
        except NoPeakError:
            out[n] = float("nan")
    return out


def free_running_reference(cfg, topology, window, seed, settle=20e-9, record_every=10):
    """Mean spike rate of every network device on DC drive alone.

    Each device runs uncoupled at its own DC current with its own thermal
    stream, giving the frequency it should return to once the injectors
    are revoked.
    """
    i_dc = {}
    for k, g in enumerate(topology.pre_groups):
        i_dc.update({n: topology.pre_i_dc[k] for n in g})
    i_dc.update(zip(topology.posts, topology.post_i_dc))
    traces = {n: simulate_trace(cfg, DriveSignal(i_dc[n]), settle + window, seed,
                                record_every=record_every, name=n).mr
              for n in topology.devices}
    return window_frequencies(traces, settle, settle + window)


def pair_phases(traces, t_start, t_stop, f):
    """Cross-spectrum phase at ``f`` for every ordered device pair in a window."""
    names = list(traces)
    win = {n: traces[n].window(t_start, t_stop) for n in names}
    out = {}
    for a in names:
        for b in names:
            if a == b:
                continue
            cs = cross_spectrum(win[a], win[b])
            k = int(np.argmin(np.abs(cs.frequencies - f)))
            out[(a, b)] = float(cs.phase[k])
    return out


def group_phase_stats(result):
    """Mean |phase| over same-group pairs and over cross-group pairs.

    Posts count as members of the group they settled into.
    """
    topo = result.setup["topology"]
    member = {}
    for k, g in enumerate(topo.pre_groups):
        for n in g:
            member[n] = GROUP_NAMES[k]
    member.update({p: g for p, g in result.post_groups.items() if g is not None})
    names = [n for n in topo.devices if n in member]
    within, cross = [], []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            (within if member[a] == member[b] else cross).append(abs(result.phase[(a, b)]))
    return (float(np.mean(within)) if within else float("nan"),
            float(np.mean(cross)) if cross else float("nan"))


def revoke_synchronization(result, t_off, duration=None):
    """Switch the injectors off at ``t_off`` and continue on DC drive alone.

    The timeline is regenerated from the start with the same seed, so the
    trajectory before ``t_off`` is identical. ``t_off`` at or beyond the end
    of the run returns ``result`` unchanged. The locked phases are re-measured
    over the window that ends at ``t_off``.
    """
    if t_off < result.learning_window:
        raise ValueError("revocation must come after the learning window")
    duration = result.duration if duration is None else duration
    if t_off >= duration:
        return result
    s = result.setup
    window = min(s["measure_window"], duration - t_off, t_off - result.learning_window)
    return simulate_binding(s["cfg"], s["topology"], s["crossbar"], duration, result.learning_window,
                            result.seed, s["coupling"], window, t_off, s["record_every"], s["learning"])


def ac_envelope(current):
    """Envelope of the AC part of a current trace (analytic-signal magnitude)."""
    x = current.samples - current.samples.mean()
    return TimeSeries(current.t0, current.dt, np.abs(hilbert(x)), f"{current.label}/envelope")


def envelope_variance(current, t_start, t_stop):
    """Variance of the AC envelope of ``current`` inside ``[t_start, t_stop)``."""
    env = ac_envelope(current).window(t_start, t_stop)
    return float(np.var(env.samples))

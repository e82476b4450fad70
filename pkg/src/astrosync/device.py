"""SOT-MTJ oscillator: geometry, transduction, readout and trace simulation."""

from dataclasses import asdict, dataclass, field, replace
import hashlib
import json
import math
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import magnetics as mag
from .constants import oe_to_a_per_m
from .parallel import ordered_map
from .rng import stream_key

NM = 1e-9


class NoOscillation(RuntimeError):
    """No spectral line stands out of the noise floor."""


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeviceGeometry:
    """Free-layer footprint and heavy-metal channel, lengths in nm."""

    fm_length: float = 100.0
    fm_width: float = 40.0
    fm_thickness: float = 3.0
    hm_thickness: float = 3.0
    hm_width: float = 100.0
    lambda_sf: float = 1.4
    theta_sh: float = 0.3
    shape: str = "rectangular"

    def __post_init__(self):
        for name in ("fm_length", "fm_width", "fm_thickness", "hm_thickness", "hm_width", "lambda_sf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.shape not in ("rectangular", "elliptical"):
            raise ValueError("shape must be 'rectangular' or 'elliptical'")

    @property
    def a_fm(self):
        """Free-layer area (m^2)."""
        a = self.fm_length * self.fm_width * NM * NM
        return a * math.pi / 4.0 if self.shape == "elliptical" else a

    @property
    def a_hm(self):
        """Heavy-metal cross-section (m^2)."""
        return self.hm_width * self.hm_thickness * NM * NM

    @property
    def volume(self):
        return self.a_fm * self.fm_thickness * NM

    @property
    def spin_gain(self):
        return (self.theta_sh * self.a_fm / self.a_hm
                * (1.0 - 1.0 / math.cosh(self.hm_thickness / self.lambda_sf)))

    def demag_factors(self):
        return mag.ellipsoid_demag_factors(self.fm_length, self.fm_width, self.fm_thickness)

    def scaled(self, length_factor=1.0, width_factor=1.0):
        return replace(self, fm_length=self.fm_length * length_factor,
                       fm_width=self.fm_width * width_factor)


def spin_current_from_charge(i_c, g):
    """Spin current injected into the free layer by charge current ``i_c``."""
    return g.spin_gain * i_c


@dataclass(frozen=True)
class MtjReadout:
    r_parallel: float = 1000.0
    r_antiparallel: float = 3000.0
    model: str = "linear"

    def __post_init__(self):
        if not self.r_antiparallel > self.r_parallel > 0:
            raise ValueError("need r_antiparallel > r_parallel > 0")
        if self.model not in ("linear", "conductance"):
            raise ValueError("model must be 'linear' or 'conductance'")

    @classmethod
    def from_midpoint(cls, r_mid=2000.0, tmr=2.0, model="linear"):
        """Readout whose perpendicular-state resistance is ``r_mid``."""
        r_p = r_mid / (1.0 + tmr / 2.0)
        return cls(r_p, r_p * (1.0 + tmr), model)

    @property
    def tmr(self):
        return (self.r_antiparallel - self.r_parallel) / self.r_parallel


def resistance(m, r, pinned_axis=(1.0, 0.0, 0.0)):
    """MTJ resistance for free-layer direction ``m``.

    ``linear`` interpolates resistance in ``(1 - cos θ)/2``; ``conductance``
    interpolates conductance instead.
    """
    c = np.clip(np.tensordot(np.asarray(m, dtype=float), np.asarray(pinned_axis, dtype=float),
                             axes=([-1], [0])), -1.0, 1.0)
    x = 0.5 * (1.0 - c)
    if r.model == "linear":
        return r.r_parallel + (r.r_antiparallel - r.r_parallel) * x
    g_p, g_ap = 1.0 / r.r_parallel, 1.0 / r.r_antiparallel
    return 1.0 / (g_p + (g_ap - g_p) * x)


@dataclass
class TimeSeries:
    """Uniformly sampled scalar trace."""

    t0: float
    dt: float
    samples: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("need a 1-D trace with at least two samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def duration(self):
        return self.dt * self.samples.size

    def window(self, t_start=None, t_stop=None):
        """Samples with ``t_start <= t < t_stop``."""
        t = self.times
        sel = np.ones(t.size, dtype=bool)
        if t_start is not None:
            sel &= t >= t_start - 1e-3 * self.dt
        if t_stop is not None:
            sel &= t < t_stop - 1e-3 * self.dt
        idx = np.flatnonzero(sel)
        return TimeSeries(float(t[idx[0]]), self.dt, self.samples[idx], self.label)

    def tail(self, duration):
        n = int(round(duration / self.dt))
        return TimeSeries(float(self.times[-n]), self.dt, self.samples[-n:], self.label)


@dataclass(frozen=True)
class DriveSignal:
    """Heavy-metal charge current: DC, sinusoids, and an optional sampled addend.

    ``ac`` holds ``(amplitude A, frequency Hz, phase rad)`` triples. The
    addend is indexed by integration step (``addend[k]`` at ``k * dt``).
    """

    i_dc: float = 0.0
    ac: tuple = ()
    addend: Optional[np.ndarray] = None

    def __post_init__(self):
        ac = tuple(tuple(float(v) for v in c) for c in self.ac)
        for amp, freq, phase in ac:
            if not all(math.isfinite(v) for v in (amp, freq, phase)):
                raise ValueError("AC components must be finite")
        object.__setattr__(self, "ac", ac)
        if not math.isfinite(self.i_dc):
            raise ValueError("i_dc must be finite")

    def ac_array(self):
        return np.array(self.ac, dtype=float).reshape(-1, 3)

    def current(self, t, dt=None):
        t = np.asarray(t, dtype=float)
        i = np.full(t.shape, self.i_dc)
        for amp, freq, phase in self.ac:
            i = i + amp * np.sin(2 * math.pi * freq * t + phase)
        if self.addend is not None:
            if dt is None:
                raise ValueError("dt is required to evaluate a sampled addend")
            k = np.clip(np.rint(t / dt).astype(int), 0, len(self.addend) - 1)
            i = i + np.asarray(self.addend)[k]
        return i

    def with_ac(self, *components):
        return replace(self, ac=self.ac + tuple(components))


@dataclass(frozen=True)
class DeviceConfig:
    """Everything needed to simulate one oscillator.

    ``hk=None`` calibrates the uniaxial field from ``eb_kt`` (in units of kT at
    ``barrier_temperature``) on the nominal geometry; geometry variants keep
    that material value.
    Fields are in A/m.
    """

    geometry: DeviceGeometry = field(default_factory=DeviceGeometry)
    ms: float = 1e7 / (4 * math.pi)
    alpha: float = 0.03
    eb_kt: float = 62.76
    temperature: float = 300.0
    h_ext: tuple = (oe_to_a_per_m(750.0), 0.0, 0.0)
    polarization: tuple = (-1.0, 0.0, 0.0)
    pinned_axis: tuple = (1.0, 0.0, 0.0)
    readout: MtjReadout = field(default_factory=MtjReadout.from_midpoint)
    dt: float = 1e-13
    m0: tuple = (0.99, 0.1, 0.05)
    hk: Optional[float] = None
    barrier_includes_shape: bool = True
    barrier_temperature: float = 300.0

    def __post_init__(self):
        for name in ("h_ext", "polarization", "pinned_axis", "m0"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValueError(f"{name} must have three components")
            object.__setattr__(self, name, v)
        for name in ("polarization", "pinned_axis"):
            if abs(np.linalg.norm(getattr(self, name)) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a unit vector")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def anisotropy_field(self):
        if self.hk is not None:
            return self.hk
        g = self.geometry
        return mag.calibrate_anisotropy(self.eb_kt, self.ms, g.volume, g.demag_factors(),
                                        self.barrier_temperature, self.barrier_includes_shape)

    def material(self, geometry=None, temperature=None):
        g = geometry or self.geometry
        return mag.MaterialParams(
            ms=self.ms, alpha=self.alpha, volume=g.volume, eb_kt=self.eb_kt,
            temperature=self.temperature if temperature is None else temperature,
            demag=g.demag_factors(), hk=self.anisotropy_field)

    def with_frozen_anisotropy(self):
        """Copy with ``hk`` pinned to the nominal calibration."""
        return replace(self, hk=self.anisotropy_field)

    def initial_m(self):
        m = np.array(self.m0)
        return m / np.linalg.norm(m)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Trace(NamedTuple):
    mr: TimeSeries
    m: tuple
    current: TimeSeries


def _device_arrays(cfg, geometries, temperature, dt):
    n = len(geometries)
    sigma = np.empty(n)
    gain = np.empty(n)
    beta = np.empty(n)
    hk = np.empty(n)
    demag = np.empty((n, 3))
    hk_val = cfg.anisotropy_field
    for k, g in enumerate(geometries):
        p = replace(cfg.material(g, temperature), hk=hk_val)
        sigma[k] = mag.thermal_sigma(p, dt)
        gain[k] = g.spin_gain
        beta[k] = p.spin_torque_rate
        hk[k] = hk_val
        demag[k] = p.demag
    return sigma, gain, beta, hk, demag


def simulate_shared(cfg, drive, duration, seed, names=("dev",), geometries=None,
                    record_every=1, temperature=None, m_init=None):
    """Simulate devices that sit on one heavy-metal channel.

    Every device sees the same charge current but owns its thermal stream,
    keyed by ``(seed, name)``. Returns one :class:`Trace` per device; the MR
    and current are recorded every ``record_every`` steps.
    """
    dt = cfg.dt
    n_steps = int(round(duration / dt))
    if n_steps < 100:
        raise ValueError("duration must cover at least 100 integration steps")
    if geometries is None:
        geometries = [cfg.geometry] * len(names)
    if len(geometries) != len(names):
        raise ValueError("one geometry per device name")
    if record_every < 1 or n_steps // record_every < 2:
        raise ValueError("record_every leaves fewer than two samples")
    temp = cfg.temperature if temperature is None else temperature
    sigma, gain, beta, hk, demag = _device_arrays(cfg, geometries, temp, dt)
    keys = np.array([stream_key(seed, nm) for nm in names], dtype=np.uint64)
    n_dev = len(names)
    if m_init is None:
        m = np.tile(cfg.initial_m(), (n_dev, 1))
    else:
        m = np.array(m_init, dtype=float).reshape(n_dev, 3)
    addend = np.zeros(0)
    if drive.addend is not None:
        addend = np.asarray(drive.addend, dtype=float)
        if addend.size < n_steps:
            raise ValueError("sampled drive addend is shorter than the simulation")
    n_rec = n_steps // record_every
    out_mr = np.empty((n_dev, n_rec))
    out_m = np.empty((n_dev, n_rec, 3))
    out_i = np.empty(n_rec)
    r = cfg.readout
    r_p, r_ap = r.r_parallel, r.r_antiparallel
    status, step, dev = mag._integrate_shared(
        m, n_steps, dt, np.int64(0), keys, sigma, gain, beta, demag, hk,
        cfg.ms, mag.MaterialParams(cfg.ms, cfg.alpha, 1.0).gamma_prime, cfg.alpha,
        np.array(cfg.h_ext), np.array(cfg.polarization), drive.i_dc, drive.ac_array(),
        addend, np.array(cfg.pinned_axis), r_p, r_ap, record_every, out_mr, out_m, out_i)
    if status != mag.OK:
        raise mag.SimulationDiverged(step, names[dev])
    t0 = record_every * dt
    rec_dt = record_every * dt
    traces = []
    for k, nm in enumerate(names):
        if r.model == "linear":
            mr = out_mr[k]
        else:
            mr = resistance(out_m[k], r, cfg.pinned_axis)
        traces.append(Trace(
            TimeSeries(t0, rec_dt, mr, f"{nm}/mr"),
            tuple(TimeSeries(t0, rec_dt, out_m[k, :, j], f"{nm}/m{c}") for j, c in enumerate("xyz")),
            TimeSeries(t0, rec_dt, out_i, f"{nm}/i_hm"),
        ))
    return traces


def simulate_trace(cfg, drive, duration, seed, record_every=1, temperature=None, name="dev"):
    """Simulate one oscillator and return its MR, magnetization and HM current."""
    return simulate_shared(cfg, drive, duration, seed, (name,), record_every=record_every,
                           temperature=temperature)[0]


# --- frequency characterization --------------------------------------------------

def measure_frequency(trace, settle, min_ratio=10.0, min_std=20.0):
    """Dominant MR frequency after discarding the first ``settle`` seconds.

    A trace whose MR standard deviation is below ``min_std`` ohms (1% of the
    default resistance swing) counts as not oscillating, whatever its
    spectrum looks like; this catches decaying ringing and thermal jitter
    about equilibrium.
    """
    from .analysis import NoPeakError, dominant_frequency, periodogram
    ts = trace.mr.window(settle)
    if ts.samples.std() < min_std:
        raise NoOscillation(f"MR std {ts.samples.std():.3g} ohm below {min_std:g} ohm")
    try:
        return dominant_frequency(periodogram(ts), min_ratio=min_ratio)
    except NoPeakError as exc:
        raise NoOscillation(str(exc)) from exc


def mean_oscillation_frequency(trace, settle, threshold=2000.0):
    """Mean MR spike rate after discarding the first ``settle`` seconds."""
    from .analysis import NoPeakError, extract_spikes
    try:
        return extract_spikes(trace.mr.window(settle), threshold).mean_rate()
    except NoPeakError as exc:
        raise NoOscillation(str(exc)) from exc


def free_running_frequency(cfg, i_dc, seed=0, window=100e-9, settle=10e-9,
                           temperature=None, record_every=10, estimator="peak"):
    """Frequency of the DC-driven oscillator over a ``window``-long trace.

    ``estimator="peak"`` returns the periodogram peak. ``"rate"`` returns the
    mean spike rate, which is the better estimate of the mean frequency at
    finite temperature because it does not scatter across the thermal line.
    """
    if estimator not in ("peak", "rate"):
        raise ValueError("estimator must be 'peak' or 'rate'")
    tr = simulate_trace(cfg, DriveSignal(i_dc), settle + window, seed,
                        record_every=record_every, temperature=temperature)
    if estimator == "rate":
        return mean_oscillation_frequency(tr, settle)
    return measure_frequency(tr, settle)


def _frequency_or_nan(args):
    cfg, drive, seed, window, settle, temperature, record_every = args
    try:
        tr = simulate_trace(cfg, drive, settle + window, seed, record_every=record_every,
                            temperature=temperature)
        return measure_frequency(tr, settle)
    except NoOscillation:
        return float("nan")


def frequency_sweep(cfg, i_dc_values, seed=0, ac=(), window=100e-9, settle=10e-9,
                    temperature=None, record_every=10, workers=1):
    """Dominant frequency for each DC current; ``nan`` marks no oscillation."""
    jobs = [(cfg, DriveSignal(float(i), tuple(ac)), seed, window, settle, temperature, record_every)
            for i in i_dc_values]
    return np.array(ordered_map(_frequency_or_nan, jobs, workers))


@dataclass(frozen=True)
class LockingRange:
    i_min: Optional[float]
    i_max: Optional[float]
    i_dc: np.ndarray
    frequencies: np.ndarray
    locked: np.ndarray

    @property
    def is_locked(self):
        return self.i_min is not None

    @property
    def width(self):
        return 0.0 if self.i_min is None else self.i_max - self.i_min


def locked_interval(i_dc, locked):
    """Longest contiguous run of ``True`` in ``locked`` as ``(i_min, i_max)``."""
    best = (0, -1, -1)
    start = None
    for k, flag in enumerate(list(locked) + [False]):
        if flag and start is None:
            start = k
        elif not flag and start is not None:
            if k - start > best[0]:
                best = (k - start, start, k - 1)
            start = None
    if best[0] == 0:
        return None, None
    return float(i_dc[best[1]]), float(i_dc[best[2]])


def locking_range(cfg, f_inj, ac_amplitude, i_dc_values, seed=0, window=100e-9, settle=10e-9,
                  temperature=None, record_every=10, workers=1):
    """DC interval over which the oscillator follows an injected tone.

    A grid point is locked when its dominant frequency equals ``f_inj`` within
    one frequency bin of the analysis window.
    """
    i_dc_values = np.asarray(i_dc_values, dtype=float)
    ac = ((ac_amplitude, f_inj, 0.0),) if ac_amplitude > 0 else ()
    freqs = frequency_sweep(cfg, i_dc_values, seed, ac, window, settle, temperature,
                            record_every, workers)
    bin_width = 1.0 / window
    locked = np.abs(freqs - f_inj) <= bin_width
    lo, hi = locked_interval(i_dc_values, locked)
    return LockingRange(lo, hi, i_dc_values, freqs, locked)


@dataclass(frozen=True)
class CalibrationRecord:
    target: float
    i_dc: float
    frequency: float
    config_hash: str
    iterations: int

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def calibrate(cfg, target_f, i_lo=300e-6, i_hi=800e-6, tol=20e6, max_iter=40,
              window=100e-9, settle=10e-9, cache_dir=None):
    """Bisect the DC current until the T = 0 frequency is within ``tol`` of target.

    Assumes frequency increases with current over ``[i_lo, i_hi]``. With
    ``cache_dir`` the record is stored under the config hash and reused.
    """
    digest = cfg.digest()
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"calibration-{digest}-{target_f:.6e}-{tol:.3e}.json"
        if cache.exists():
            return CalibrationRecord.load(cache)

    def f_at(i):
        try:
            return free_running_frequency(cfg, i, 0, window, settle, temperature=0.0)
        except NoOscillation:
            return float("nan")

    f_lo, f_hi = f_at(i_lo), f_at(i_hi)
    if not (f_lo <= target_f <= f_hi):
        raise CalibrationError(
            f"target {target_f / 1e9:.3f} GHz not bracketed by "
            f"[{f_lo / 1e9:.3f}, {f_hi / 1e9:.3f}] GHz over [{i_lo * 1e6:.1f}, {i_hi * 1e6:.1f}] uA")
    lo, hi = i_lo, i_hi
    best = (i_lo, f_lo) if abs(f_lo - target_f) < abs(f_hi - target_f) else (i_hi, f_hi)
    for it in range(1, max_iter + 1):
        if abs(best[1] - target_f) < tol:
            break
        mid = 0.5 * (lo + hi)
        f_mid = f_at(mid)
        if math.isnan(f_mid):
            raise CalibrationError(f"no oscillation at {mid * 1e6:.2f} uA inside the bracket")
        if abs(f_mid - target_f) < abs(best[1] - target_f):
            best = (mid, f_mid)
        if f_mid < target_f:
            lo = mid
        else:
            hi = mid
    else:
        raise CalibrationError("bisection did not converge")
    rec = CalibrationRecord(float(target_f), float(best[0]), float(best[1]), digest, it)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        rec.save(cache)
    return rec

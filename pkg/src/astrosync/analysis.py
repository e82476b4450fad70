"""Spectral and spike-domain measures of synchrony.

Traces are mean-removed before any correlation or transform so the large
resistance offset does not swamp bin 0. Spectra use a rectangular window and
no segment averaging; variance reduction comes from ensembles of runs.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .device import TimeSeries


class NoPeakError(RuntimeError):
    """No bin rises far enough above the median floor."""


@dataclass
class Spectrum:
    f0: float
    df: float
    bins: np.ndarray

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=complex)
        if not np.all(np.isfinite(self.bins)):
            raise ValueError("spectrum bins must be finite")

    @property
    def frequencies(self):
        return self.f0 + self.df * np.arange(self.bins.size)

    @property
    def power(self):
        return np.abs(self.bins) ** 2


@dataclass
class CrossSpectrum:
    frequencies: np.ndarray
    values: np.ndarray
    phase: np.ndarray
    df: float = 0.0
    n_fft: int = 0

    @property
    def magnitude(self):
        return np.abs(self.values)

    def energy(self):
        """Two-sided ``∫|S(f)|² df`` from the one-sided bins of a real-input spectrum."""
        w = np.full(self.values.size, 2.0)
        w[0] = 1.0
        if self.n_fft % 2 == 0:
            w[-1] = 1.0
        return float(np.sum(w * np.abs(self.values) ** 2) * self.df)


@dataclass
class SpikeTrain:
    spike_times: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.spike_times = np.asarray(self.spike_times, dtype=float)
        if self.spike_times.size > 1 and np.any(np.diff(self.spike_times) <= 0):
            raise ValueError("spike times must be strictly increasing")

    def __len__(self):
        return self.spike_times.size

    def mean_rate(self):
        """Spikes per second between the first and last spike.

        For a noisy oscillator this is the mean frequency, which is much
        tighter than the periodogram peak of one short record.
        """
        if self.spike_times.size < 2:
            raise NoPeakError("fewer than two spikes")
        t = self.spike_times
        return (t.size - 1) / (t[-1] - t[0])


def wrap_degrees(phi):
    """Map angles in degrees onto (-180, 180]."""
    out = np.mod(np.asarray(phi, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(out == -180.0, 180.0, out)


def _check_pair(x, y):
    if not math.isclose(x.dt, y.dt, rel_tol=1e-9):
        raise ValueError("traces must share dt")
    if len(x) != len(y):
        raise ValueError("traces must have equal length")


def periodogram(ts, detrend=True):
    """One-sided FFT of a trace (rectangular window), scaled by ``dt``."""
    x = ts.samples - ts.samples.mean() if detrend else ts.samples
    return Spectrum(0.0, 1.0 / (x.size * ts.dt), sfft.rfft(x) * ts.dt)


def cross_correlation(x, y):
    """Linear cross-correlation ``R(τ) = Σ x[t-τ] y[t] dt`` of mean-removed traces.

    Lags run from ``-(N-1) dt`` to ``(N-1) dt``; ``R`` peaks at ``τ = t0`` when
    ``y`` is ``x`` delayed by ``t0``.
    """
    _check_pair(x, y)
    a = x.samples - x.samples.mean()
    b = y.samples - y.samples.mean()
    r = signal.correlate(b, a, mode="full") * x.dt
    lags = signal.correlation_lags(b.size, a.size, mode="full")
    return TimeSeries(lags[0] * x.dt, x.dt, r, "cross_correlation")


def cross_spectrum(x, y, n_fft=None):
    """Cross-periodogram ``conj(X) Y`` of mean-removed traces.

    ``phase`` is the argument of the values in degrees, in (-180, 180]. It is
    negative when ``y`` lags ``x``. Passing ``n_fft >= 2N - 1`` makes
    the result the exact transform of :func:`cross_correlation`.
    """
    _check_pair(x, y)
    n = len(x) if n_fft is None else int(n_fft)
    if n < len(x):
        raise ValueError("n_fft must not truncate the traces")
    a = x.samples - x.samples.mean()
    b = y.samples - y.samples.mean()
    xa = sfft.rfft(a, n) * x.dt
    yb = sfft.rfft(b, n) * x.dt
    s = np.conj(xa) * yb
    freqs = sfft.rfftfreq(n, x.dt)
    return CrossSpectrum(freqs, s, wrap_degrees(np.degrees(np.angle(s))), 1.0 / (n * x.dt), n)


@dataclass
class EnsemblePhase:
    phase_at_target: float
    per_run: np.ndarray
    frequencies: np.ndarray
    curve: np.ndarray
    target_index: int
    statistic: str


def ensemble_phase(pairs, f_target, statistic="mean_abs"):
    """Average cross-spectrum phase over independent runs.

    ``statistic="mean_abs"`` averages ``|phase|`` bin by bin;
    ``"circular"`` takes the magnitude of the circular mean angle.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two runs")
    x0 = pairs[0][0]
    phases = []
    freqs = None
    for x, y in pairs:
        if len(x) != len(x0) or not math.isclose(x.dt, x0.dt, rel_tol=1e-9):
            raise ValueError("all runs must share one sampling grid")
        cs = cross_spectrum(x, y)
        freqs = cs.frequencies
        phases.append(cs.phase)
    return phase_statistics(np.array(phases), freqs, f_target, 0.5 / x0.dt, statistic)


def phase_statistics(phases, frequencies, f_target, nyquist, statistic="mean_abs"):
    """Ensemble statistic of a ``(runs, bins)`` array of phases in degrees."""
    ph = np.asarray(phases, dtype=float)
    if ph.ndim != 2 or ph.shape[0] < 2:
        raise ValueError("need at least two runs")
    if statistic not in ("mean_abs", "circular"):
        raise ValueError("statistic must be 'mean_abs' or 'circular'")
    if not 0 < f_target <= nyquist:
        raise ValueError(f"target frequency must lie in (0, {nyquist:g}] Hz")
    freqs = np.asarray(frequencies, dtype=float)
    k = int(np.argmin(np.abs(freqs - f_target)))
    if statistic == "mean_abs":
        curve = np.mean(np.abs(ph), axis=0)
    else:
        curve = np.abs(np.degrees(np.angle(np.mean(np.exp(1j * np.radians(ph)), axis=0))))
    return EnsemblePhase(float(curve[k]), ph[:, k], freqs, curve, k, statistic)


def dominant_frequency(s, min_ratio=10.0):
    """Frequency of the strongest non-DC bin, refined by a three-point parabola.

    The parabola is fitted to log-magnitudes, which keeps the worst-case
    bias of a rectangular-window tone under 0.17 bins.

    Raises :class:`NoPeakError` when the peak power is below ``min_ratio``
    times the median bin power.
    """
    p = s.power.copy()
    if p.size < 4:
        raise NoPeakError("spectrum too short")
    p[0] = 0.0
    body = p[1:]
    med = float(np.median(body))
    k = int(np.argmax(p))
    if p[k] <= 0.0 or p[k] < min_ratio * med:
        raise NoPeakError(f"peak/median power ratio below {min_ratio:g}")
    shift = 0.0
    if 1 < k < p.size - 1:
        mags = np.abs(s.bins[k - 1:k + 2])
        a, b, c = np.log(mags) if np.all(mags > 0) else mags
        den = a - 2.0 * b + c
        if den != 0.0:
            shift = float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
    return s.f0 + s.df * (k + shift)


def extract_spikes(mr, threshold=2000.0, refractory=None):
    """Upward threshold crossings of an MR trace.

    Crossing times are linearly interpolated between samples. Crossings less
    than ``refractory`` after the last accepted spike are dropped. With
    ``refractory=None`` the window is a quarter of the trace's dominant
    period.
    """
    x = mr.samples
    if not (x.min() <= threshold <= x.max()):
        return SpikeTrain(np.zeros(0), mr.label)
    if refractory is None:
        try:
            refractory = 0.25 / dominant_frequency(periodogram(mr))
        except NoPeakError:
            refractory = 0.0
    idx = np.flatnonzero((x[:-1] < threshold) & (x[1:] >= threshold))
    frac = (threshold - x[idx]) / (x[idx + 1] - x[idx])
    times = mr.t0 + (idx + frac) * mr.dt
    kept = []
    last = -math.inf
    for t in times:
        if t - last >= refractory and (not kept or t > kept[-1]):
            kept.append(t)
            last = t
    return SpikeTrain(np.array(kept), mr.label)

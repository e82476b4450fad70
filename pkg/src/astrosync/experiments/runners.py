"""Experiment runners: frequency sweep, locked pair, dimension variation, binding.

Each runner takes an :class:`ExperimentConfig`, fans independent runs out over
``config.threads`` processes, aggregates in run order and, given an output
directory, writes ``traces/``, ``spectra/``, ``curves/`` and ``summary.json``.
Wall-clock time goes to ``timing.json`` so the data files stay
byte-identical between repeated runs.
"""

from collections import Counter
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
import time

import numpy as np
from scipy.stats import circstd

from ..analysis import cross_spectrum, phase_statistics
from ..device import DriveSignal, calibrate, frequency_sweep, locking_range, simulate_shared
from ..network import (Crossbar, calibrate_coupling, envelope_variance, free_running_reference,
                       group_phase_stats, simulate_binding)
from ..parallel import ordered_map
from ..rng import derive_seed
from . import outputs
from .config import SCHEMA_VERSION

log = logging.getLogger(__name__)


@dataclass
class RunSummary:
    experiment: str
    config_hash: str
    seed: int
    metrics: dict
    runs: list = field(default_factory=list)
    wall_clock: float = 0.0
    schema_version: int = SCHEMA_VERSION
    files: list = field(default_factory=list)

    def to_dict(self):
        """Everything except the wall-clock time."""
        return dict(schema_version=self.schema_version, experiment=self.experiment,
                    config_hash=self.config_hash, seed=self.seed, metrics=self.metrics,
                    runs=self.runs, files=sorted(self.files))


class _Out:
    """Collects written paths relative to the output directory."""

    def __init__(self, root):
        self.root = None if root is None else Path(root)
        self.files = []

    def path(self, rel):
        self.files.append(rel)
        return self.root / rel

    def __bool__(self):
        return self.root is not None


def _finish(summary, out, config, t_start):
    summary.wall_clock = time.perf_counter() - t_start
    if out:
        outputs.write_json(out.path("config.json"), config.hashed_dict(), exact=True)
        summary.files = list(out.files) + ["summary.json"]
        outputs.write_json(out.root / "summary.json", summary.to_dict())
        outputs.write_json(out.root / "timing.json", {"wall_clock_s": summary.wall_clock,
                                                      "threads": config.threads,
                                                      "output": config.output})
    return summary


def operating_point(config, target):
    """DC current from the config, or calibrated at zero temperature to ``target``."""
    if config.drive.i_dc is not None:
        return config.drive.i_dc, None
    dr = config.drive
    rec = calibrate(config.device_config(), target, dr.calibrate_low, dr.calibrate_high)
    log.info("calibrated %.4f uA for %.3f GHz (got %.4f GHz)", rec.i_dc * 1e6, target / 1e9,
             rec.frequency / 1e9)
    return rec.i_dc, rec


def _calibration_metrics(i_dc, rec):
    if rec is None:
        return {"i_dc": i_dc, "calibrated": False}
    return {"i_dc": i_dc, "calibrated": True, "achieved_frequency": rec.frequency,
            "target_frequency": rec.target, "iterations": rec.iterations}


# --- frequency sweep ---------------------------------------------------------------

def is_monotone(values):
    """True when the finite values increase strictly in order."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return bool(v.size >= 2 and np.all(np.diff(v) > 0))


def intervals_nested(intervals):
    """True when each interval contains the one before it (empty ones contain nothing)."""
    prev = None
    for lo, hi in intervals:
        if prev is not None and prev[0] is not None:
            if lo is None or lo > prev[0] or hi < prev[1]:
                return False
        prev = (lo, hi)
    return True


def run_sweep_frequency(config, out=None):
    t_start = time.perf_counter()
    out = _Out(out)
    cfg = config.device_config()
    s = config.sweep
    grid = np.linspace(s.i_dc_min, s.i_dc_max, s.points)
    freqs = frequency_sweep(cfg, grid, config.seed, (), s.window, s.settle, s.temperature,
                            config.analysis.record_every, config.threads)
    lock_grid = np.linspace(s.lock_i_dc_min, s.lock_i_dc_max, s.lock_points)
    ranges = []
    for amp in sorted(s.lock_amplitudes):
        lr = locking_range(cfg, s.lock_frequency, amp, lock_grid, config.seed, s.window, s.settle,
                           s.temperature, config.analysis.record_every, config.threads)
        ranges.append((amp, lr))
    intervals = [(lr.i_min, lr.i_max) for _, lr in ranges]
    widths = [lr.width for _, lr in ranges]
    metrics = {
        "i_dc": grid, "frequency": freqs, "monotone": is_monotone(freqs),
        "oscillating_points": int(np.isfinite(freqs).sum()),
        "lock_frequency": s.lock_frequency,
        "locking": [{"ac_amplitude": a, "i_min": lr.i_min, "i_max": lr.i_max, "width": lr.width}
                    for a, lr in ranges],
        "widths_non_decreasing": bool(np.all(np.diff(widths) >= 0)) if widths else True,
        "intervals_nested": intervals_nested(intervals),
    }
    if out:
        outputs.write_table(out.path("curves/frequency_current.csv"), "frequency_curve",
                            ["i_dc_ua", "frequency_hz"], zip(grid * 1e6, freqs))
        if ranges:
            rows = [(a * 1e6, np.nan if lr.i_min is None else lr.i_min * 1e6,
                     np.nan if lr.i_max is None else lr.i_max * 1e6, lr.width * 1e6)
                    for a, lr in ranges]
            outputs.write_table(out.path("curves/locking_ranges.csv"), "locking",
                                ["ac_amplitude_ua", "i_min_ua", "i_max_ua", "width_ua"], rows)
            for a, lr in ranges:
                outputs.write_table(out.path(f"curves/locking_{a * 1e6:g}ua.csv"), "frequency_curve",
                                    ["i_dc_ua", "frequency_hz"], zip(lock_grid * 1e6, lr.frequencies))
    summary = RunSummary("sweep-frequency", config.digest(), config.seed, metrics)
    return _finish(summary, out, config, t_start)


# --- locked pair and dimension variation ---------------------------------------------

def pair_seed(seed, sample, run):
    return derive_seed(seed, "sample", sample, "run", run)


def _pair_job(args):
    cfg, i_dc, ac, duration, seed, record_every, discard, geoms, f_target, full = args
    a, b = simulate_shared(cfg, DriveSignal(i_dc, ac), duration, seed, names=("a", "b"),
                           geometries=geoms, record_every=record_every)
    t0 = discard * duration
    x, y = a.mr.window(t0), b.mr.window(t0)
    cs = cross_spectrum(x, y)
    k = int(np.argmin(np.abs(cs.frequencies - f_target)))
    res = {"phase": float(cs.phase[k]), "dt": x.dt}
    if full:
        res.update(frequencies=cs.frequencies, phases=cs.phase, magnitude=cs.magnitude,
                   traces=(a.mr, b.mr))
    return res


def off_injection_mask(frequencies, f_target, band=0.5e9, f_low=1e9, n_harmonics=4):
    """Bins between ``f_low`` and ``n_harmonics * f_target`` away from every harmonic."""
    f = np.asarray(frequencies)
    mask = (f >= f_low) & (f <= n_harmonics * f_target)
    for h in range(1, n_harmonics + 1):
        mask &= np.abs(f - h * f_target) > band
    return mask


def run_lock_pair(config, out=None):
    t_start = time.perf_counter()
    if config.runs < 10:
        raise ValueError("the locked-pair ensemble needs at least 10 runs")
    out = _Out(out)
    cfg = config.device_config()
    dr, an = config.drive, config.analysis
    f_inj = dr.ac_frequency
    f_target = an.f_target or f_inj
    i_dc, rec = operating_point(config, dr.target_frequency or f_inj)
    ac = ((dr.ac_amplitude, f_inj, 0.0),) if dr.ac_amplitude > 0 else ()
    jobs = [(cfg, i_dc, ac, an.duration, pair_seed(config.seed, 0, r), an.record_every,
             an.discard_fraction, None, f_target, True) for r in range(config.runs)]
    res = ordered_map(_pair_job, jobs, config.threads)
    freqs = res[0]["frequencies"]
    ep = phase_statistics([r["phases"] for r in res], freqs, f_target, 0.5 / res[0]["dt"], an.statistic)
    off = off_injection_mask(freqs, f_target)
    abs_at = np.abs(ep.per_run)
    sem = float(abs_at.std(ddof=1) / math.sqrt(abs_at.size))
    metrics = {
        **_calibration_metrics(i_dc, rec),
        "ac_amplitude": dr.ac_amplitude, "injection_frequency": f_inj, "f_target": f_target,
        "statistic": an.statistic, "phase_at_target": ep.phase_at_target,
        "phase_at_target_sem": sem,
        "off_injection_mean": float(ep.curve[off].mean()),
        "off_injection_within_15": float(np.mean(np.abs(ep.curve[off] - 90.0) <= 15.0)),
        "frequency_resolution": float(freqs[1] - freqs[0]),
    }
    runs = [{"run": k, "phase_deg": float(p)} for k, p in enumerate(ep.per_run)]
    if out:
        band = freqs <= 5 * f_target
        mag = np.mean([r["magnitude"] for r in res], axis=0)
        outputs.write_spectrum(out.path("spectra/phase_curve.csv"), freqs[band], mag[band], ep.curve[band])
        outputs.write_table(out.path("curves/run_phases.csv"), "run_phase", ["run", "phase_deg"],
                            [(k, p) for k, p in enumerate(ep.per_run)])
        keep = {"none": 0, "first": 1, "all": len(res)}[an.save_traces]
        for k in range(keep):
            a, b = res[k]["traces"]
            outputs.write_traces(out.path(f"traces/run{k:03d}_mr.csv"), [a, b], ["mr_a", "mr_b"])
    summary = RunSummary("lock-pair", config.digest(), config.seed, metrics, runs)
    return _finish(summary, out, config, t_start)


def variation_factors(seed, sample):
    """Uniform draws in [-1, 1) for (length a, width a, length b, width b)."""
    rng = np.random.default_rng(derive_seed(seed, "variation", sample))
    return rng.uniform(-1.0, 1.0, 4)


def run_mc_variation(config, out=None):
    """Locked-pair ensembles on perturbed geometries.

    Sample ``k`` draws one set of uniform factors and scales them by each
    variation fraction, and run ``r`` of sample ``k`` uses the same thermal
    seed at every fraction (common random numbers). Sample 0 at fraction 0
    is exactly the locked-pair experiment with the same seed.
    """
    t_start = time.perf_counter()
    v = config.variation
    if config.runs < 2:
        raise ValueError("each variation sample needs at least two runs")
    if v.samples < 10:
        raise ValueError("the Monte-Carlo study needs at least 10 samples")
    out = _Out(out)
    cfg = config.device_config().with_frozen_anisotropy()
    dr, an = config.drive, config.analysis
    f_inj = dr.ac_frequency
    f_target = an.f_target or f_inj
    i_dc, rec = operating_point(config, dr.target_frequency or f_inj)
    ac = ((dr.ac_amplitude, f_inj, 0.0),) if dr.ac_amplitude > 0 else ()
    jobs, index = [], []
    for frac in v.fractions:
        for k in range(v.samples):
            u = 1.0 + frac * variation_factors(config.seed, k)
            geoms = (cfg.geometry.scaled(u[0], u[1]), cfg.geometry.scaled(u[2], u[3]))
            for r in range(config.runs):
                jobs.append((cfg, i_dc, ac, an.duration, pair_seed(config.seed, k, r), an.record_every,
                             an.discard_fraction, geoms, f_target, False))
                index.append((frac, k, tuple(u)))
    res = ordered_map(_pair_job, jobs, config.threads)
    per_sample = {}
    for (frac, k, u), r in zip(index, res):
        per_sample.setdefault((frac, k, u), []).append(r["phase"])
    rows, grand = [], {}
    for (frac, k, u), ph in per_sample.items():
        m = float(np.mean(np.abs(ph))) if an.statistic == "mean_abs" else float(
            abs(np.degrees(np.angle(np.mean(np.exp(1j * np.radians(ph)))))))
        rows.append((frac, k, *u, m))
        grand.setdefault(frac, []).append(m)
    grand_means = [float(np.mean(grand[f])) for f in v.fractions]
    metrics = {
        **_calibration_metrics(i_dc, rec),
        "fractions": list(v.fractions), "samples": v.samples, "runs_per_sample": config.runs,
        "grand_mean_phase": grand_means,
        "grand_mean_sem": [float(np.std(grand[f], ddof=1) / math.sqrt(len(grand[f])))
                           if len(grand[f]) > 1 else 0.0 for f in v.fractions],
        "non_decreasing": bool(np.all(np.diff(grand_means) >= 0)),
    }
    runs = [{"fraction": r[0], "sample": r[1], "mean_abs_phase_deg": r[6]} for r in rows]
    if out:
        outputs.write_table(out.path("curves/mc_samples.csv"), "mc_sample",
                            list(outputs.SCHEMAS["mc_sample"][0]), rows)
    summary = RunSummary("mc-variation", config.digest(), config.seed, metrics, runs)
    return _finish(summary, out, config, t_start)


# --- binding network -------------------------------------------------------------------

def _pair_key(a, b):
    return f"{a}|{b}"


def _binding_job(args):
    (cfg, topo, coupling, lp, low, high, duration, lw, mw, revoke_at, rec_every, learning,
     seed, s, keep, traj_every) = args
    rng = np.random.default_rng(derive_seed(seed, "weights", s))
    cb = Crossbar.random(rng, low=low, high=high, learning=lp)
    r = simulate_binding(cfg, topo, cb, duration, lw, derive_seed(seed, "binding", s), coupling,
                         mw, revoke_at, rec_every, learning)
    within, cross = group_phase_stats(r)
    win = 20e-9
    env = {p: (envelope_variance(r.post_currents[p], r.post_currents[p].t0, win),
               envelope_variance(r.post_currents[p], lw - win, lw)) for p in topo.posts}
    names = topo.devices
    res = {
        "seed_index": s, "label": r.label, "bound": r.is_bound, "within": within, "cross": cross,
        "post_groups": {p: g for p, g in r.post_groups.items()},
        "phase": {_pair_key(a, b): r.phase[(a, b)] for a in names for b in names if a != b},
        "frequencies": r.frequencies, "initial_weights": cb.weights, "final_weights": r.weights[-1],
        "envelope_variance": env,
        "weights_t": r.traces[names[0]].times[traj_every - 1::traj_every],
        "weights": r.weights[traj_every - 1::traj_every],
        "g_min": cb.g_min, "g_max": cb.g_max,
    }
    if r.revoked_phase is not None:
        res["revoked_phase"] = {_pair_key(a, b): r.revoked_phase[(a, b)]
                                for a in names for b in names if a != b}
        res["revoked_frequencies"] = r.revoked_frequencies
        res["free_frequencies"] = free_running_reference(cfg, topo, mw, derive_seed(seed, "free", s),
                                                         record_every=rec_every)
    if keep:
        f_inj = topo.injectors[0].frequency
        t1 = duration if revoke_at is None else revoke_at
        ref = r.traces[names[0]].window(t1 - mw, t1)
        spectra = {}
        for n in names[1:]:
            cs = cross_spectrum(ref, r.traces[n].window(t1 - mw, t1))
            band = cs.frequencies <= 4 * f_inj
            spectra[n] = (cs.frequencies[band], cs.magnitude[band], cs.phase[band])
        res["traces"] = [r.traces[n] for n in names]
        res["post_currents"] = [r.post_currents[p] for p in topo.posts]
        res["spectra"] = spectra
    return res


def binding_plan(config):
    """Durations ``(total, revoke_at)``; ``revoke_at`` is ``None`` without revocation."""
    nb = config.network
    revoke_at = nb.revoke_at
    if revoke_at is None and config.experiment == "revoke":
        revoke_at = nb.duration
    if revoke_at is None:
        return nb.duration, None
    extra = nb.revoke_duration if nb.revoke_duration is not None else nb.measure_window + 20e-9
    return revoke_at + extra, revoke_at


def run_binding(config, out=None):
    t_start = time.perf_counter()
    out = _Out(out)
    cfg = config.device_config()
    nb = config.network
    i_dc = nb.i_dc
    rec = None
    if i_dc is None:
        i_dc, rec = operating_point(config, nb.injector_frequency)
    topo = config.topology(i_dc)
    coupling = calibrate_coupling(cfg, topo, config.coupling_params())
    lp = config.learning_params()
    duration, revoke_at = binding_plan(config)
    keep = {"none": 0, "first": 1, "all": config.runs}[config.analysis.save_traces]
    jobs = [(cfg, topo, coupling, lp, nb.initial_weight_low, nb.initial_weight_high, duration,
             nb.learning_window, nb.measure_window, revoke_at, nb.record_every,
             config.learning.enabled, config.seed, s, s < keep, nb.trajectory_every)
            for s in range(config.runs)]
    res = ordered_map(_binding_job, jobs, config.threads)
    labels = Counter(r["label"] for r in res)
    bound = [r for r in res if r["bound"]]
    configs = sorted({r["label"] for r in bound})
    metrics = {
        **_calibration_metrics(i_dc, rec),
        "coupling_delay": coupling.delay, "seeds": config.runs,
        "labels": dict(sorted(labels.items())), "bound_runs": len(bound),
        "configurations": configs, "both_configurations": len(configs) >= 2,
        "within_group_mean": float(np.mean([r["within"] for r in bound])) if bound else None,
        "cross_group_mean": float(np.mean([r["cross"] for r in bound])) if bound else None,
        "learning_enabled": config.learning.enabled,
    }
    if revoke_at is not None:
        metrics["revoke_at"] = revoke_at
        metrics["revoked_phase_circstd"] = revoked_spread(res)
        # the injected devices run on DC alone once revoked; posts stay on the crossbar
        pre = [n for g in topo.pre_groups for n in g]
        for part, names in (("", pre), ("post_", list(topo.posts))):
            fr = np.array([[r["revoked_frequencies"][n] for n in names] for r in res])
            ff = np.array([[r["free_frequencies"][n] for n in names] for r in res])
            metrics[f"{part}revoked_frequency_mean"] = float(np.nanmean(fr))
            metrics[f"{part}revoked_frequency_std"] = float(np.nanstd(fr))
            metrics[f"{part}free_running_frequency_mean"] = float(np.nanmean(ff))
            metrics[f"{part}free_running_frequency_std"] = float(np.nanstd(ff))
            metrics[f"{part}frequency_shift"] = (metrics[f"{part}revoked_frequency_mean"]
                                                 - metrics[f"{part}free_running_frequency_mean"])
        metrics["frequency_bin"] = 1.0 / nb.measure_window
        metrics["frequency_returned"] = bool(abs(metrics["frequency_shift"]) <= metrics["frequency_bin"])
    runs = []
    for r in res:
        runs.append({k: r[k] for k in ("seed_index", "label", "bound", "within", "cross", "post_groups",
                                        "phase", "frequencies", "initial_weights", "final_weights",
                                        "envelope_variance")})
        if "revoked_phase" in r:
            runs[-1]["revoked_phase"] = r["revoked_phase"]
            runs[-1]["revoked_frequencies"] = r["revoked_frequencies"]
            runs[-1]["free_frequencies"] = r["free_frequencies"]
    if out:
        for r in res:
            s = r["seed_index"]
            g = r["g_min"] + r["weights"] * (r["g_max"] - r["g_min"])
            rows = [(t / 1e-9, *(1.0 / gi).ravel()) for t, gi in zip(r["weights_t"], g)]
            outputs.write_table(out.path(f"traces/seed{s:03d}_crossbar.csv"), "crossbar",
                                ["time_ns", "R11", "R12", "R21", "R22"], rows)
            outputs.write_json(out.path(f"phases/seed{s:03d}.json"),
                               {"label": r["label"], "phase_deg": r["phase"],
                                "revoked_phase_deg": r.get("revoked_phase")})
            if "traces" in r:
                outputs.write_traces(out.path(f"traces/seed{s:03d}_mr.csv"), r["traces"],
                                     [f"mr_{n}" for n in topo.devices])
                outputs.write_traces(out.path(f"traces/seed{s:03d}_post_current.csv"), r["post_currents"],
                                     [f"i_{p}" for p in topo.posts])
                for n, (f, mag, ph) in r["spectra"].items():
                    outputs.write_spectrum(out.path(f"spectra/seed{s:03d}_{topo.devices[0]}-{n}.csv"),
                                           f, mag, ph)
    name = "revoke" if config.experiment == "revoke" else "binding"
    summary = RunSummary(name, config.digest(), config.seed, metrics, runs)
    return _finish(summary, out, config, t_start)


def revoked_spread(results, pairs=(("N1", "N2"), ("N1", "N3"), ("N3", "N4"))):
    """Circular standard deviation (deg) across runs of each post-revocation pair phase."""
    out = {}
    for a, b in pairs:
        ph = np.radians([r["revoked_phase"][_pair_key(a, b)] for r in results])
        out[_pair_key(a, b)] = float(np.degrees(circstd(ph, high=np.pi, low=-np.pi)))
    return out


RUNNERS = {
    "sweep-frequency": run_sweep_frequency,
    "lock-pair": run_lock_pair,
    "mc-variation": run_mc_variation,
    "binding": run_binding,
    "revoke": run_binding,
}


def run_experiment(config, out=None):
    return RUNNERS[config.experiment](config, out)

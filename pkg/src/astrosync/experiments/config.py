"""Strict experiment configuration.

A config file is YAML with the sections below; every section is optional and
falls back to the device and learning defaults. Unknown keys anywhere raise
:class:`ConfigError`. Fields are written in Oe and converted to A/m when the
device configuration is built.

.. code-block:: yaml

    experiment: lock-pair
    seed: 7
    runs: 100
    device: {temperature: 300, h_ext_oe: [750, 0, 0]}
    drive: {target_frequency: 5.0e9, ac_amplitude: 50.0e-6}
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
import hashlib
import json
import re
import math
from pathlib import Path
import typing
from typing import Optional

import yaml

from ..constants import oe_to_a_per_m
from ..device import DeviceConfig, DeviceGeometry, MtjReadout
from ..network import AstrocyteInjector, CouplingParams, LearningParams, NetworkTopology

EXPERIMENTS = ("sweep-frequency", "lock-pair", "mc-variation", "binding", "revoke")
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass(frozen=True)
class GeometryBlock:
    fm_length_nm: float = 100.0
    fm_width_nm: float = 40.0
    fm_thickness_nm: float = 3.0
    hm_thickness_nm: float = 3.0
    hm_width_nm: float = 100.0
    lambda_sf_nm: float = 1.4
    theta_sh: float = 0.3
    shape: str = "rectangular"


@dataclass(frozen=True)
class DeviceBlock:
    ms: float = 1e7 / (4 * math.pi)
    alpha: float = 0.03
    eb_kt: float = 62.76
    temperature: float = 300.0
    h_ext_oe: tuple = (750.0, 0.0, 0.0)
    polarization: tuple = (-1.0, 0.0, 0.0)
    pinned_axis: tuple = (1.0, 0.0, 0.0)
    dt: float = 1e-13
    m0: tuple = (0.99, 0.1, 0.05)
    hk: Optional[float] = None
    barrier_includes_shape: bool = True


@dataclass(frozen=True)
class ReadoutBlock:
    r_parallel: float = 1000.0
    r_antiparallel: float = 3000.0
    model: str = "linear"


@dataclass(frozen=True)
class DriveBlock:
    """DC operating point and injected tone.

    ``i_dc: null`` calibrates the DC current at zero temperature so the
    free-running frequency hits ``target_frequency``.
    """

    i_dc: Optional[float] = None
    target_frequency: Optional[float] = None
    ac_amplitude: float = 50e-6
    ac_frequency: float = 5e9
    calibrate_low: float = 300e-6
    calibrate_high: float = 800e-6


@dataclass(frozen=True)
class AnalysisBlock:
    duration: float = 100e-9
    discard_fraction: float = 0.25
    record_every: int = 10
    statistic: str = "mean_abs"
    f_target: Optional[float] = None
    save_traces: str = "first"


@dataclass(frozen=True)
class SweepBlock:
    i_dc_min: float = 320e-6
    i_dc_max: float = 700e-6
    points: int = 20
    window: float = 100e-9
    settle: float = 10e-9
    temperature: Optional[float] = 0.0
    lock_frequency: float = 6.5e9
    lock_amplitudes: tuple = (10e-6, 20e-6, 40e-6)
    lock_i_dc_min: float = 300e-6
    lock_i_dc_max: float = 450e-6
    lock_points: int = 61


@dataclass(frozen=True)
class VariationBlock:
    fractions: tuple = (0.0, 0.025, 0.05, 0.075)
    samples: int = 50


@dataclass(frozen=True)
class LearningBlock:
    eta_plus: float = 0.25
    tau_plus: float = 5.0
    eta_minus: float = 0.15
    tau_minus: float = 5.0
    time_unit_divisor: float = 30.0
    cadence: int = 10
    enabled: bool = True


@dataclass(frozen=True)
class NetworkBlock:
    injector_amplitude: float = 0.25
    injector_frequency: float = 7.05e9
    source_resistance: float = 1000.0
    i_dc: Optional[float] = None
    i_read: float = 50e-6
    gain: float = 9.0
    bandwidth: Optional[float] = 1e9
    delay: Optional[float] = None
    duration: float = 200e-9
    learning_window: float = 120e-9
    measure_window: float = 80e-9
    revoke_at: Optional[float] = None
    revoke_duration: Optional[float] = None
    initial_weight_low: float = 0.0
    initial_weight_high: float = 1.0
    record_every: int = 10
    trajectory_every: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "lock-pair"
    seed: int = 0
    runs: int = 100
    threads: int = 1
    output: str = "out"
    device: DeviceBlock = field(default_factory=DeviceBlock)
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    readout: ReadoutBlock = field(default_factory=ReadoutBlock)
    drive: DriveBlock = field(default_factory=DriveBlock)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    variation: VariationBlock = field(default_factory=VariationBlock)
    learning: LearningBlock = field(default_factory=LearningBlock)
    network: NetworkBlock = field(default_factory=NetworkBlock)

    def __post_init__(self):
        validate(self)

    def to_dict(self):
        return _plain(asdict(self))

    def hashed_dict(self):
        """Settings that determine results: all but the output path and worker count."""
        d = self.to_dict()
        d.pop("output")
        d.pop("threads")
        return d

    def digest(self):
        blob = json.dumps(self.hashed_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # --- builders for the simulation objects ---

    def device_config(self):
        d, g, r = self.device, self.geometry, self.readout
        geom = DeviceGeometry(g.fm_length_nm, g.fm_width_nm, g.fm_thickness_nm, g.hm_thickness_nm,
                              g.hm_width_nm, g.lambda_sf_nm, g.theta_sh, g.shape)
        return DeviceConfig(
            geometry=geom, ms=d.ms, alpha=d.alpha, eb_kt=d.eb_kt, temperature=d.temperature,
            h_ext=tuple(oe_to_a_per_m(x) for x in d.h_ext_oe), polarization=d.polarization,
            pinned_axis=d.pinned_axis, readout=MtjReadout(r.r_parallel, r.r_antiparallel, r.model),
            dt=d.dt, m0=d.m0, hk=d.hk, barrier_includes_shape=d.barrier_includes_shape)

    def learning_params(self):
        lb, nb = self.learning, self.network
        return LearningParams(lb.eta_plus, lb.tau_plus, lb.eta_minus, lb.tau_minus,
                              1.0 / (lb.time_unit_divisor * nb.injector_frequency), lb.cadence)

    def coupling_params(self):
        nb = self.network
        return CouplingParams(i_read=nb.i_read, gain=nb.gain, bandwidth=nb.bandwidth,
                              period=1.0 / nb.injector_frequency, delay=nb.delay)

    def topology(self, i_dc):
        nb = self.network
        inj = tuple(AstrocyteInjector(nb.injector_amplitude, nb.injector_frequency, ph,
                                      nb.source_resistance) for ph in (0.0, math.pi))
        return NetworkTopology(injectors=inj, pre_i_dc=(i_dc, i_dc), post_i_dc=(i_dc, i_dc))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# PyYAML follows YAML 1.1, which reads "5.0e9" (no exponent sign) as a string
_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


def _number(value, where):
    if isinstance(value, str) and _NUMBER.fullmatch(value.strip()):
        return float(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return float(value)


def _coerce(tp, value, where):
    """Convert a parsed YAML value to the annotated field type."""
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return _build(tp, value, where)
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(_number(v, where) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        return _number(value, where)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def _build(cls, data, where=""):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    hints = typing.get_type_hints(cls)
    kw = {k: _coerce(hints[k], v, f"{where}.{k}".lstrip(".")) for k, v in data.items()}
    return cls(**kw)


def from_dict(data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    try:
        return _build(ExperimentConfig, data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path):
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data)


def _positive(where, *pairs):
    for name, v in pairs:
        if v is not None and not v > 0:
            raise ConfigError(f"{where}.{name} must be positive")


def validate(c):
    if c.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    if c.seed < 0 or c.seed >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if c.runs < 1 or c.threads < 1:
        raise ConfigError("runs and threads must be at least 1")
    d, g, r = c.device, c.geometry, c.readout
    _positive("device", ("ms", d.ms), ("dt", d.dt), ("eb_kt", d.eb_kt), ("hk", d.hk))
    if not 0 < d.alpha < 1:
        raise ConfigError("device.alpha must lie in (0, 1)")
    if d.temperature < 0:
        raise ConfigError("device.temperature must be non-negative")
    for name in ("h_ext_oe", "polarization", "pinned_axis", "m0"):
        if len(getattr(d, name)) != 3:
            raise ConfigError(f"device.{name} needs three components")
    _positive("geometry", *[(f.name, getattr(g, f.name)) for f in fields(g) if f.name != "shape"])
    if g.shape not in ("rectangular", "elliptical"):
        raise ConfigError("geometry.shape must be rectangular or elliptical")
    _positive("readout", ("r_parallel", r.r_parallel))
    if not r.r_antiparallel > r.r_parallel:
        raise ConfigError("readout.r_antiparallel must exceed r_parallel")
    if r.model not in ("linear", "conductance"):
        raise ConfigError("readout.model must be linear or conductance")
    dr = c.drive
    _positive("drive", ("i_dc", dr.i_dc), ("target_frequency", dr.target_frequency),
              ("ac_frequency", dr.ac_frequency), ("calibrate_low", dr.calibrate_low))
    if dr.ac_amplitude < 0:
        raise ConfigError("drive.ac_amplitude must be non-negative")
    if not dr.calibrate_high > dr.calibrate_low:
        raise ConfigError("drive.calibrate_high must exceed calibrate_low")
    a = c.analysis
    _positive("analysis", ("duration", a.duration), ("f_target", a.f_target))
    if not 0 <= a.discard_fraction < 1:
        raise ConfigError("analysis.discard_fraction must lie in [0, 1)")
    if a.record_every < 1:
        raise ConfigError("analysis.record_every must be at least 1")
    if a.statistic not in ("mean_abs", "circular"):
        raise ConfigError("analysis.statistic must be mean_abs or circular")
    if a.save_traces not in ("none", "first", "all"):
        raise ConfigError("analysis.save_traces must be none, first or all")
    s = c.sweep
    _positive("sweep", ("i_dc_min", s.i_dc_min), ("window", s.window), ("lock_frequency", s.lock_frequency),
              ("lock_i_dc_min", s.lock_i_dc_min))
    if s.points < 5 or s.lock_points < 2:
        raise ConfigError("sweep.points must be at least 5 and lock_points at least 2")
    if not (s.i_dc_max > s.i_dc_min and s.lock_i_dc_max > s.lock_i_dc_min):
        raise ConfigError("sweep maxima must exceed minima")
    if any(x < 0 for x in s.lock_amplitudes) or s.settle < 0:
        raise ConfigError("sweep amplitudes and settle time must be non-negative")
    v = c.variation
    if any(not 0 <= f <= 0.2 for f in v.fractions) or not v.fractions:
        raise ConfigError("variation.fractions must lie in [0, 0.2]")
    if v.samples < 1:
        raise ConfigError("variation.samples must be at least 1")
    lb = c.learning
    _positive("learning", ("tau_plus", lb.tau_plus), ("tau_minus", lb.tau_minus),
              ("time_unit_divisor", lb.time_unit_divisor))
    if lb.eta_plus < 0 or lb.eta_minus < 0 or lb.cadence < 1:
        raise ConfigError("learning rates must be non-negative and cadence at least 1")
    nb = c.network
    _positive("network", ("injector_frequency", nb.injector_frequency),
              ("source_resistance", nb.source_resistance), ("i_dc", nb.i_dc),
              ("duration", nb.duration), ("learning_window", nb.learning_window),
              ("measure_window", nb.measure_window), ("bandwidth", nb.bandwidth))
    if nb.injector_amplitude < 0 or nb.i_read < 0 or nb.gain < 0:
        raise ConfigError("network amplitudes and gain must be non-negative")
    if nb.learning_window > nb.duration:
        raise ConfigError("network.learning_window exceeds network.duration")
    if nb.revoke_at is not None and nb.revoke_at < nb.learning_window:
        raise ConfigError("network.revoke_at must come after the learning window")
    if not 0 <= nb.initial_weight_low <= nb.initial_weight_high <= 1:
        raise ConfigError("initial weights must satisfy 0 <= low <= high <= 1")
    if nb.record_every < 1 or nb.trajectory_every < 1:
        raise ConfigError("network decimation factors must be at least 1")

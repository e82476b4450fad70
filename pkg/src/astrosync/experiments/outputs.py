"""Schema-checked CSV and JSON writers for experiment artifacts.

Every table is declared in :data:`SCHEMAS` by its leading columns; a table
whose header or rows disagree with its schema is refused before anything is
written. Numbers are formatted with a fixed precision so repeated runs
produce byte-identical files.
"""

import json
import math
from pathlib import Path

import numpy as np

# kind -> (fixed leading columns, whether further value columns may follow)
SCHEMAS = {
    "trace": (("time_ns",), True),
    "spectrum": (("frequency_hz", "magnitude", "phase_deg"), False),
    "crossbar": (("time_ns", "R11", "R12", "R21", "R22"), False),
    "frequency_curve": (("i_dc_ua", "frequency_hz"), False),
    "locking": (("ac_amplitude_ua", "i_min_ua", "i_max_ua", "width_ua"), False),
    "run_phase": (("run", "phase_deg"), False),
    "spikes": (("time_ns",), False),
    "mc_sample": (("fraction", "sample", "length_factor_a", "width_factor_a",
                   "length_factor_b", "width_factor_b", "mean_abs_phase_deg"), False),
}


class SchemaError(ValueError):
    """A table does not match its declared column schema."""


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.9g}"


def validate_table(kind, header, rows):
    if kind not in SCHEMAS:
        raise SchemaError(f"unknown table kind {kind!r}")
    lead, open_ended = SCHEMAS[kind]
    header = tuple(header)
    if header[:len(lead)] != lead or (not open_ended and len(header) != len(lead)):
        raise SchemaError(f"{kind} header must {'start with' if open_ended else 'be'} {', '.join(lead)}")
    if open_ended and len(header) <= len(lead):
        raise SchemaError(f"{kind} table needs at least one value column")
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{kind} row {k} has {len(row)} fields, expected {len(header)}")
        for v in row:
            if isinstance(v, float) and math.isinf(v):
                raise SchemaError(f"{kind} row {k} holds an infinite value")


def write_table(path, kind, header, rows):
    """Validate then write one CSV table; ``nan`` marks a gap."""
    rows = [tuple(r) for r in rows]
    validate_table(kind, header, rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(_fmt(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_traces(path, traces, labels=None, every=1):
    """Traces sharing one time grid; the first column is ``time_ns``."""
    traces = list(traces)
    labels = labels or [tr.label for tr in traces]
    t = traces[0].times[::every] / 1e-9
    cols = [tr.samples[::every] for tr in traces]
    rows = zip(t, *cols)
    return write_table(path, "trace", ["time_ns"] + list(labels), rows)


def write_spectrum(path, frequencies, magnitude, phase_deg):
    return write_table(path, "spectrum", ["frequency_hz", "magnitude", "phase_deg"],
                       zip(frequencies, magnitude, phase_deg))


def write_spikes(path, train):
    return write_table(path, "spikes", ["time_ns"], ((t / 1e-9,) for t in train.spike_times))


def read_table(path):
    """Header and float rows of a CSV written by :func:`write_table`."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    return header, data


def _json_ready(x, exact=False):
    if isinstance(x, dict):
        return {str(k): _json_ready(v, exact) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_ready(v, exact) for v in x]
    if isinstance(x, np.ndarray):
        return _json_ready(x.tolist(), exact)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return x if exact else float(f"{x:.12g}")
    return x


def write_json(path, obj, exact=False):
    """Sorted, indented JSON; floats keep 12 significant digits unless `exact`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_ready(obj, exact), indent=2, sort_keys=True) + "\n")
    return path

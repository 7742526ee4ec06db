#!/usr/bin/env python3
# CSV and JSON artifacts: orbits, Jacobi fields, chart fields, iteration traces, sweeps

import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

FIELD_COLUMNS = ["chart", "i", "j", "s", "theta", "value"]
TRACE_COLUMNS = ["iteration", "residual", "increment", "ratio"]


def _plain(value):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _write_frame(path, frame):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.debug(f"Wrote {path} ({len(frame)} rows)")
    return path


def orbit_frame(orbit, periods=1.0):
    if orbit.degenerate:
        t = np.linspace(0.0, periods * orbit.period, orbit.t.size)
    else:
        count = int(round(periods * (orbit.t.size - 1)))
        t = np.linspace(0.0, periods * orbit.period, count + 1)
    u, up = orbit.evaluate(t)
    return pd.DataFrame({"t": t, "u": u, "up": up})


def write_orbit(out_dir, orbit, periods=1.0, stem="orbit"):
    out_dir = Path(out_dir)
    csv_path = _write_frame(out_dir / f"{stem}.csv", orbit_frame(orbit, periods))
    json_path = write_json(out_dir / f"{stem}.json", orbit.header())
    return [csv_path, json_path]


def write_jacobi(out_dir, field_, stem=None):
    stem = stem or f"jacobi_{field_.label}"
    frame = pd.DataFrame(field_.to_frame_columns())
    return _write_frame(Path(out_dir) / f"{stem}.csv", frame)


def write_glued_field(out_dir, glued_field, stem):
    """Chart CSV of a global field plus the chart headers it was sampled on"""
    out_dir = Path(out_dir)
    csv_path = _write_frame(out_dir / f"{stem}.csv", glued_field.to_frame())
    headers = [p.chart.header() for p in glued_field.manifold.patches]
    json_path = write_json(out_dir / f"{stem}_charts.json", {"charts": headers})
    return [csv_path, json_path]


def read_glued_field(path, manifold):
    """Global value vector from a chart CSV written for the same manifold"""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = set(FIELD_COLUMNS) - set(frame.columns)
    if missing:
        raise ConfigError(f"{path} lacks columns {sorted(missing)}")
    if len(frame) != manifold.size:
        raise DomainError(f"{path} holds {len(frame)} nodes, the manifold has {manifold.size}")
    names = [p.name for p in manifold.patches]
    expected = np.concatenate([np.full(p.chart.size, p.name, dtype=object) for p in manifold.patches])
    if list(frame["chart"].astype(str)) != list(expected):
        raise DomainError(f"{path} chart layout does not match charts {names}")
    return frame["value"].to_numpy(dtype=float)


def trace_frame(entries):
    frame = pd.DataFrame(list(entries))
    for column in TRACE_COLUMNS:
        if column not in frame.columns:
            frame[column] = np.nan
    extra = [c for c in frame.columns if c not in TRACE_COLUMNS]
    return frame[TRACE_COLUMNS + extra]


def write_trace(out_dir, entries, stem="trace"):
    return _write_frame(Path(out_dir) / f"{stem}.csv", trace_frame(entries))


def sweep_frame(T_list, f_norms=None, inverse_norms=None):
    count = len(T_list)
    return pd.DataFrame({
        "T": list(T_list),
        "f_norm": list(f_norms) if f_norms is not None else [np.nan] * count,
        "inverse_norm": list(inverse_norms) if inverse_norms is not None else [np.nan] * count,
    })


def write_sweep(out_dir, T_list, f_norms=None, inverse_norms=None, stem="sweep"):
    return _write_frame(Path(out_dir) / f"{stem}.csv", sweep_frame(T_list, f_norms, inverse_norms))

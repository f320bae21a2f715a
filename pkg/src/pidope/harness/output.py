"""Deterministic result files: JSON payloads, CSV tables and a run manifest.

Result files never carry timestamps or timings, so identical inputs give
byte-identical files; the manifest holds those instead.
"""
from __future__ import annotations

import csv
import json
import math
import platform
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1


def clean(obj):
    """Convert numpy scalars and arrays to plain Python; non-finite floats become strings or None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def _cell(v) -> str:
    v = clean(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows: Sequence[dict], columns: Optional[Iterable[str]] = None) -> Path:
    """Write dict rows; columns default to first-seen key order across rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    columns = list(columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    return path


def versions() -> dict:
    import scipy
    import sklearn

    from .. import __version__

    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "pidope": __version__,
    }


def write_manifest(path, config: dict, seed: int, wall_time: float, started: str,
                   files: Sequence[str]) -> Path:
    return write_json(path, {
        "config": config,
        "seed": seed,
        "versions": versions(),
        "wall_time_seconds": wall_time,
        "started": started,
        "files": sorted(files),
        "schema_version": SCHEMA_VERSION,
    })

"""CSV and metadata-sidecar helpers shared by every serialisable type."""

import json
from pathlib import Path

import numpy as np

from . import __version__


def metadata_path(csv_path):
    """``run/cat.csv`` -> ``run/cat.meta.json``."""
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def write_metadata(path, meta):
    meta = {"tool_version": __version__, **_jsonable(meta)}
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_metadata(path):
    return json.loads(Path(path).read_text())


def write_table(path, header, columns):
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def read_table(path):
    """Return ``(header, 2-d array)`` for a headed numeric CSV."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = data.reshape(0, len(header))
    return header, data

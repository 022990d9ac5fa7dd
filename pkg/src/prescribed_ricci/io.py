"""CSV/JSON readers and writers for fields, spectra and reports."""

from __future__ import annotations

import csv
import json
import time

import numpy as np

from . import tensor_core as tc


def write_sym_field(h, path):
    """CSV ``node_index,i,j,value`` for ``i <= j``; node index is the C-order flat index."""
    n = h.shape[0]
    size = int(np.prod(h.shape[2:]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", "i", "j", "value"])
        flat = h.reshape(n, n, size)
        for node in range(size):
            for i, j in tc.sym_pairs(n):
                w.writerow([node, i, j, repr(float(flat[i, j, node]))])


def read_sym_field(path, n, shape):
    size = int(np.prod(shape))
    out = np.zeros((n, n, size))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            node, i, j = int(row["node_index"]), int(row["i"]), int(row["j"])
            out[i, j, node] = out[j, i, node] = float(row["value"])
    return out.reshape((n, n) + tuple(shape))


def write_eigenvalues(rows, path):
    """Rows of ``(operator, index, real, imag, residual)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["operator", "index", "real", "imag", "residual"])
        for r in rows:
            w.writerow(r)


def write_table(header, rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_json(data, path, timestamp=True):
    """Deterministic JSON (sorted keys); only the ``timestamp`` field varies between runs."""
    data = dict(_clean(data))
    if timestamp:
        data["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")

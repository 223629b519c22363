"""Writers for result rows (CSV) and summaries (JSON).

Numbers are written with repr() and keys are sorted, so the same config
and seed give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

ROW_HEADER = ("run", "iteration", "metric", "value", "se")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r[0], r[1]))


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_result(result, out_dir) -> dict:
    """Write rows.csv, summary.json and any extra tables; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"rows": os.path.join(out_dir, "rows.csv"), "summary": os.path.join(out_dir, "summary.json")}
    write_table(paths["rows"], ROW_HEADER, sort_rows(result.rows))
    with open(paths["summary"], "w") as fh:
        json.dump(_jsonable(result.summary), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    for name, (header, rows) in result.tables.items():
        paths[name] = os.path.join(out_dir, name)
        write_table(paths[name], header, rows)
    return paths

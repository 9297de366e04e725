"""On-disk formats: ``hjbgrid/1`` node dumps, report JSON and the error-table CSV."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .lattice import Grid

MAGIC = "hjbgrid/1"
CSV_HEADER = ("h", "error", "M1", "M2", "M3", "M4")


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def _g12(x: float) -> str:
    return format(float(x), ".12g")


def dump_grid(grid: Grid, values=None) -> str:
    """Text dump: header lines, then one line per valued node with integer
    indices, class tag (I/B) and, for solutions, the value to 17 digits."""
    vals = None if values is None else np.asarray(getattr(values, "values", values))
    out = io.StringIO()
    out.write(f"{MAGIC}\n")
    out.write(f"dim {grid.dim}\n")
    out.write(f"h {_g17(grid.h)}\n")
    out.write("origin " + " ".join("0" for _ in range(grid.dim)) + "\n")
    out.write("index_range " + " ".join(f"{a} {b}" for a, b in grid.index_box) + "\n")
    out.write(f"kind {'solution' if vals is not None else 'grid'}\n")
    out.write(f"count {grid.n_nodes}\n")
    for r in range(grid.n_nodes):
        idx = " ".join(str(int(i)) for i in grid.nodes[r])
        tag = "I" if grid.is_interior[r] else "B"
        line = f"{idx} {tag}"
        if vals is not None:
            line += f" {_g17(vals[r])}"
        out.write(line + "\n")
    return out.getvalue()


def load_grid(text: str) -> dict:
    """Parse an ``hjbgrid/1`` dump into header fields and node arrays."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError(f"not an {MAGIC} dump")
    header = {}
    i = 1
    while i < len(lines) and not lines[i].split()[0].lstrip("-").isdigit():
        key, *rest = lines[i].split()
        header[key] = rest
        i += 1
    dim = int(header["dim"][0])
    count = int(header["count"][0])
    body = [ln.split() for ln in lines[i:] if ln.strip()]
    if len(body) != count:
        raise ValueError(f"expected {count} node lines, found {len(body)}")
    nodes = np.array([[int(t) for t in row[:dim]] for row in body], dtype=np.int64).reshape(-1, dim)
    tags = np.array([row[dim] for row in body])
    values = None
    if header["kind"][0] == "solution":
        values = np.array([float(row[dim + 1]) for row in body])
    rng = [int(t) for t in header["index_range"]]
    return {
        "dim": dim,
        "h": float(header["h"][0]),
        "origin": [float(t) for t in header["origin"]],
        "index_range": list(zip(rng[::2], rng[1::2])),
        "nodes": nodes,
        "interior": tags == "I",
        "values": values,
    }


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, obj) -> None:
    Path(path).write_text(to_json(obj))


def error_table_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([_g12(x) for x in row])
    return out.getvalue()


def format_table(rows, header=CSV_HEADER) -> str:
    """Fixed-width human table, 12 significant digits."""
    cells = [list(header)] + [[_g12(x) for x in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)

"""CSV/JSON writers: 17 significant digits, provenance header, no timestamps."""

from __future__ import annotations

import hashlib
import json
import math
import os

import mpmath
import numpy as np

from . import __version__

DIGITS = 17


def config_hash(config):
    """sha256 of the canonical JSON form of a resolved config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def provenance(config):
    return {"tool": "gramstab", "version": __version__, "config_sha256": config_hash(config)}


def format_number(x):
    """Text for one scalar; floats and mpf values get 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, mpmath.mpf) or hasattr(x, "_mpf_"):
        if mpmath.isnan(x):
            return "nan"
        if mpmath.isinf(x):
            return "inf" if x > 0 else "-inf"
        if x == 0:
            return "0"
        return mpmath.nstr(x, DIGITS)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, f".{DIGITS}g")
    return str(x)


def write_csv(path, header, rows, config):
    """Provenance as leading ``#`` comment lines, then the exact header."""
    prov = provenance(config)
    lines = [
        f"# tool={prov['tool']} version={prov['version']}",
        f"# config_sha256={prov['config_sha256']}",
        ",".join(header),
    ]
    lines += [",".join(format_number(v) for v in row) for row in rows]
    _write_text(path, "\n".join(lines) + "\n")


def _to_json(obj, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_to_json(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _to_json(v, indent + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    text = format_number(obj)
    # JSON has no literal for non-finite values
    return json.dumps(text) if text in ("nan", "inf", "-inf") else text


def write_json(path, payload, config):
    doc = {"provenance": provenance(config), **payload}
    _write_text(path, _to_json(doc) + "\n")


def write_table(path_stem, header, rows, config, fmt="csv", extra=None):
    """Write a table as ``<stem>.csv`` or ``<stem>.json``; returns the path."""
    if fmt == "csv":
        path = f"{path_stem}.csv"
        write_csv(path, header, rows, config)
    else:
        path = f"{path_stem}.json"
        write_json(path, {**(extra or {}), "columns": list(header), "rows": [list(r) for r in rows]}, config)
    return path


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)

"""Deterministic CSV/JSON writers. Every file carries the code version and,
when given, the hash of the config that produced it."""

from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from . import __version__


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    if x is None:
        return ""
    return str(x)


def config_hash(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; strings keep the file valid and round-trippable
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path, payload: dict, config_sha: str | None = None) -> None:
    body = {"version": __version__, "config_sha256": config_sha}
    body.update(payload)
    with open(path, "w") as fh:
        json.dump(_jsonable(body), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows, config_sha: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# cwbnlw {__version__} config_sha256={config_sha or ''}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_csv(path) -> list:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))

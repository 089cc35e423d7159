"""Input specs and output files (CSV with LF endings, JSON with sorted keys)."""

from __future__ import annotations

import csv
import json
import os
from typing import Iterable, Sequence

import numpy as np

from .measures import AtomicMeasure, Arcsine, Semicircle, Uniform

__all__ = ["parse_measure", "read_config", "write_csv", "write_json"]


def _numbers(text, count):
    parts = [float(p) for p in text.split(",")] if text else []
    if len(parts) != count:
        raise ValueError(f"expected {count} number(s), got {text!r}")
    return parts


def parse_measure(spec: str):
    """Measure from ``family:params`` or from a ``location,weight`` CSV file.

    Families: ``uniform:lo,hi``, ``semicircle:var``, ``arcsine:radius``,
    ``bernoulli:a`` (atoms at +-a) and ``point:a``.
    """
    if os.path.isfile(spec):
        return AtomicMeasure.from_csv(spec)
    name, _, params = spec.partition(":")
    name = name.strip().lower()
    if name == "uniform":
        lo, hi = _numbers(params, 2)
        return Uniform(lo, hi)
    if name == "semicircle":
        return Semicircle(_numbers(params or "1", 1)[0])
    if name == "arcsine":
        return Arcsine(_numbers(params or "2", 1)[0])
    if name == "bernoulli":
        return AtomicMeasure.bernoulli(_numbers(params or "1", 1)[0])
    if name == "point":
        return AtomicMeasure.point(_numbers(params or "0", 1)[0])
    raise ValueError(f"unknown measure spec {spec!r}")


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")

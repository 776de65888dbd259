"""Deterministic JSON reports: stable key order, shortest round-trip floats,
atomic writes, and a config hash embedded in every payload."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile

import numpy as np

__all__ = ["to_jsonable", "canonical_json", "config_hash", "write_report"]


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays, dataclasses and tuples into
    plain JSON types; floats stay floats (json serializes them via repr,
    which is byte-stable)."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            return repr(obj)
        return obj
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return to_jsonable(float(obj))
    if isinstance(obj, np.ndarray):
        return [to_jsonable(x) for x in obj.tolist()]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [to_jsonable(x) for x in seq]
    raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


def canonical_json(payload) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2) + "\n"


def config_hash(cfg: dict) -> str:
    blob = json.dumps(to_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_report(path, payload) -> None:
    """Serialize and replace atomically so partial reports never land."""
    text = canonical_json(payload)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

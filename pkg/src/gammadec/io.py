"""File formats: model-class JSON, canonical report JSON, CSV and run manifests.

Canonical JSON uses sorted keys, two-space indentation and Python's
shortest round-trip float repr, so equal data always gives equal bytes.
Non-finite floats are written as the strings ``"nan"``, ``"inf"`` and
``"-inf"``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
import time
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import __version__
from .errors import InputError, SchemaError
from .model_core import ActionSpace, Model, ModelClass, Noise

NOISE_NAMES = tuple(n.value for n in Noise)


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj))
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows: Iterable[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="raise")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_cell(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _csv_cell(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# model classes


def _reject_constant(token: str):
    raise ValueError(f"non-finite number {token}")


def _no_duplicate_keys(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def parse_json(text: str) -> Any:
    try:
        return json.loads(text, parse_constant=_reject_constant, object_pairs_hook=_no_duplicate_keys)
    except ValueError as exc:
        raise SchemaError([f"invalid JSON: {exc}"]) from exc


def _validate_model(i: int, raw: Any, n: int | None, problems: list[str]) -> dict | None:
    where = f"models[{i}]"
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected an object")
        return None
    ok = True
    mid = raw.get("id")
    if not isinstance(mid, str) or not mid:
        problems.append(f"{where}: 'id' must be a nonempty string")
        ok = False
    else:
        where = f"model {mid!r}"
    mean = raw.get("mean")
    if not isinstance(mean, list) or not mean:
        problems.append(f"{where}: 'mean' must be a nonempty list of numbers")
        ok = False
    else:
        for j, x in enumerate(mean):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                problems.append(f"{where}: mean[{j}] is not a number")
                ok = False
            elif not math.isfinite(x):
                problems.append(f"{where}: mean[{j}] is not finite")
                ok = False
            elif not (-1e-12 <= x <= 1 + 1e-12):
                problems.append(f"{where}: mean[{j}] = {x} outside [0, 1]")
                ok = False
        if n is not None and len(mean) != n:
            problems.append(f"{where}: {len(mean)} means for {n} actions")
            ok = False
    noise = raw.get("noise", Noise.GAUSSIAN.value)
    if noise not in NOISE_NAMES:
        problems.append(f"{where}: noise must be one of {list(NOISE_NAMES)}")
        ok = False
    extra = set(raw) - {"id", "mean", "noise"}
    if extra:
        problems.append(f"{where}: unknown keys {sorted(extra)}")
        ok = False
    return {"id": mid, "mean": mean, "noise": noise} if ok else None


def class_from_dict(doc: Any) -> ModelClass:
    """Validate a model-class document, collecting every problem before failing."""
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise SchemaError(["top level must be an object with 'actions' and 'models'"])
    actions = doc.get("actions")
    n = None
    if not isinstance(actions, list) or not actions or not all(isinstance(a, str) for a in actions):
        problems.append("'actions' must be a nonempty list of strings")
    elif len(set(actions)) != len(actions):
        problems.append("action labels must be distinct")
    else:
        n = len(actions)
    models = doc.get("models")
    checked = []
    if not isinstance(models, list) or not models:
        problems.append("'models' must be a nonempty list")
    else:
        seen: set[str] = set()
        for i, raw in enumerate(models):
            m = _validate_model(i, raw, n, problems)
            mid = raw.get("id") if isinstance(raw, dict) else None
            if isinstance(mid, str):
                if mid in seen:
                    problems.append(f"duplicate model id {mid!r}")
                seen.add(mid)
            if m is not None:
                checked.append(m)
    extra = set(doc) - {"actions", "models"}
    if extra:
        problems.append(f"unknown top-level keys {sorted(extra)}")
    if problems:
        raise SchemaError(problems)
    space = ActionSpace(tuple(actions))
    return ModelClass(space, tuple(Model(m["id"], m["mean"], Noise(m["noise"])) for m in checked))


def class_to_dict(model_class: ModelClass) -> dict:
    return {
        "actions": list(model_class.actions.labels),
        "models": [{"id": m.id, "mean": [float(x) for x in m.mean], "noise": m.noise.value} for m in model_class],
    }


def load_class(path: str | os.PathLike) -> ModelClass:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return class_from_dict(parse_json(text))


def save_class(model_class: ModelClass, path: str | os.PathLike) -> None:
    atomic_write(path, canonical_json(class_to_dict(model_class)))


def model_from_dict(doc: Any, n: int) -> Model:
    problems: list[str] = []
    m = _validate_model(0, doc, n, problems)
    if problems:
        raise SchemaError(problems)
    return Model(m["id"], m["mean"], Noise(m["noise"]))


def resolve_model(model_class: ModelClass, spec: str) -> Model:
    """A model given by id in ``model_class`` or by a path to a single-model JSON file."""
    if spec in model_class.ids:
        return model_class.get(spec)
    path = Path(spec)
    if path.is_file():
        return model_from_dict(parse_json(path.read_text(encoding="utf-8")), model_class.actions.n)
    raise InputError(f"{spec!r} is neither a model id in the class nor a model file")


# ---------------------------------------------------------------------------
# manifests


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest(command: str, params: dict, inputs: Iterable[str], seed: int | None, outputs: Iterable[str]) -> dict:
    return {
        "command": command,
        "parameters": params,
        "input_digests": {str(p): file_digest(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": [str(p) for p in outputs],
    }


def write_with_manifest(path: str | os.PathLike, text: str, man: dict) -> Path:
    """Write ``text`` and a sibling ``<path>.manifest.json``; returns the manifest path."""
    atomic_write(path, text)
    side = Path(f"{path}.manifest.json")
    atomic_write(side, canonical_json(man))
    return side

"""Versioned JSON parameter checkpoints.

Layout (version 1)::

    {
      "format": "clozeqa-checkpoint",
      "version": 1,
      "meta": {...},                        # seed, config hash, tool version
      "params": {
        "<name>": {"shape": [d0, ...], "values": [...]}   # row-major float64
      }
    }

Values serialize via Python's shortest round-trip float repr, so a load
restores bit-identical float64 data and two runs with the same seed write
byte-identical files.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import ShapeError, Tensor

FORMAT_NAME = "clozeqa-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable or mismatched checkpoint files."""


def params_to_document(params: Mapping[str, Tensor], meta: dict | None = None) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": dict(meta or {}),
        "params": {
            name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
            for name, t in params.items()
        },
    }


def save_params(path: str | Path, params: Mapping[str, Tensor], meta: dict | None = None) -> None:
    doc = params_to_document(params, meta)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')!r}")
    loaded = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        arr = np.asarray(entry["values"], dtype=np.float64)
        if arr.size != int(np.prod(shape)) if shape else arr.size != 1:
            raise CheckpointError(f"{path}: {name} has {arr.size} values for shape {shape}")
        loaded[name] = arr.reshape(shape)
    return loaded, doc.get("meta", {})


def apply_params(params: Mapping[str, Tensor], loaded: Mapping[str, np.ndarray]) -> None:
    """Copy loaded arrays into model tensors, name- and shape-checked."""
    missing = sorted(set(params) - set(loaded))
    extra = sorted(set(loaded) - set(params))
    if missing or extra:
        raise CheckpointError(f"parameter names differ: missing={missing} extra={extra}")
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.shape:
            raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {tensor.shape}")
        tensor.data = arr.astype(np.float64).copy()
        tensor.grad = None

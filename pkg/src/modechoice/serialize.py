"""Versioned JSON persistence for trained models.

Dataclasses, tuples and numpy arrays are tagged so that a load reproduces
the saved object exactly (floats round-trip through ``repr``).
"""
from __future__ import annotations

import dataclasses
import json

import numpy as np

from .classifiers import NaiveBayesModel, NeuralNet
from .dataset import WideLayout
from .logit import FittedLogit, RandomCoefSpec, Term, UtilitySpec
from .models import ModelSpec, TrainedModel
from .trees import BoostModel, CartModel, Ensemble, Tree

FORMAT = "modechoice-model"
FORMAT_VERSION = 1

_TYPES = {c.__name__: c for c in (
    TrainedModel, ModelSpec, WideLayout, FittedLogit, UtilitySpec, Term, RandomCoefSpec,
    CartModel, Ensemble, BoostModel, Tree, NaiveBayesModel, NeuralNet)}


class FormatError(ValueError):
    """Unreadable or incompatible model file."""


def _encode(obj):
    if isinstance(obj, Tree):
        return {"__type__": "Tree", **obj.to_dict()}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        name = type(obj).__name__
        if name not in _TYPES:
            raise TypeError(f"cannot serialize {name}")
        return {"__type__": name, **{f.name: _encode(getattr(obj, f.name))
                                     for f in dataclasses.fields(obj)}}
    if isinstance(obj, np.ndarray):
        return {"__nd__": obj.tolist(), "dtype": str(obj.dtype), "shape": list(obj.shape)}
    if isinstance(obj, tuple):
        return {"__tuple__": [_encode(v) for v in obj]}
    if isinstance(obj, list):
        return [_encode(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _decode(obj):
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    if not isinstance(obj, dict):
        return obj
    if "__nd__" in obj:
        return np.array(obj["__nd__"], dtype=obj["dtype"]).reshape(obj["shape"])
    if "__tuple__" in obj:
        return tuple(_decode(v) for v in obj["__tuple__"])
    if "__type__" in obj:
        name = obj["__type__"]
        if name == "Tree":
            return Tree.from_dict(obj)
        if name not in _TYPES:
            raise FormatError(f"unknown object type {name!r}")
        return _TYPES[name](**{k: _decode(v) for k, v in obj.items() if k != "__type__"})
    return {k: _decode(v) for k, v in obj.items()}


def dumps(model: TrainedModel, meta: dict | None = None) -> str:
    doc = {"_meta": {"format": FORMAT, "format_version": FORMAT_VERSION, **(meta or {})},
           "model": _encode(model)}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads(text: str) -> TrainedModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"not a JSON model file: {e}") from None
    meta = doc.get("_meta", {}) if isinstance(doc, dict) else {}
    if meta.get("format") != FORMAT:
        raise FormatError("not a model file (missing format header)")
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {meta.get('format_version')!r}")
    return _decode(doc["model"])


def save_model(model: TrainedModel, path, meta: dict | None = None):
    with open(path, "w") as fh:
        fh.write(dumps(model, meta))


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        try:
            return loads(fh.read())
        except FormatError as e:
            raise FormatError(f"{path}: {e}") from None

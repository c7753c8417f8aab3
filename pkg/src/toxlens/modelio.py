"""Versioned on-disk model format for dense and graph-convolution nets.

A single JSON document: format tag, version number, network kind, metadata
(seed, training settings, fingerprint configuration), and every parameter
matrix as row-major little-endian float64 bytes in base64. Serialization
is byte-deterministic for equal models; loading anything with the wrong
format tag or version fails loudly.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .densenet import DenseNet
from .gcn import AtomFeaturizer, GraphConvNet

__all__ = ["save_model", "load_model", "ModelFormatError",
           "dumps_model", "loads_model"]

FORMAT_TAG = "toxlens-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "dtype": "<f8",
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_array(entry: dict) -> np.ndarray:
    if entry.get("dtype") != "<f8":
        raise ModelFormatError(f"unsupported array dtype {entry.get('dtype')!r}")
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()


def dumps_model(net, meta: dict | None = None) -> str:
    """Serialize a DenseNet or GraphConvNet to a JSON string."""
    doc = {"format": FORMAT_TAG, "version": FORMAT_VERSION,
           "meta": dict(meta or {})}
    if isinstance(net, DenseNet):
        doc["kind"] = "dense"
        doc["dense"] = _dense_section(net)
    elif isinstance(net, GraphConvNet):
        doc["kind"] = "gcn"
        doc["gcn"] = {
            "pool": net.pool,
            "skip_connections": net.skip_connections,
            "featurizer": {"elements": list(net.featurizer.elements),
                           "bond_orders": list(net.featurizer.bond_orders)},
            "conv_weights": [_encode_array(w) for w in net.conv_weights],
            "head": _dense_section(net.head),
        }
    else:
        raise TypeError(f"cannot serialize {type(net).__name__}")
    return json.dumps(doc, sort_keys=True, indent=1)


def _dense_section(net: DenseNet) -> dict:
    return {
        "output": net.output,
        "weights": [_encode_array(w) for w in net.weights],
        "biases": [_encode_array(b) for b in net.biases],
    }


def _dense_from_section(section: dict) -> DenseNet:
    weights = [_decode_array(w) for w in section["weights"]]
    biases = [_decode_array(b) for b in section["biases"]]
    return DenseNet(weights, biases, output=section.get("output", "sigmoid"))


def loads_model(text: str):
    """Parse a model document; returns ``(net, meta)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a model file: {exc}") from exc
    if doc.get("format") != FORMAT_TAG:
        raise ModelFormatError(
            f"format tag {doc.get('format')!r} is not {FORMAT_TAG!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"model version {doc.get('version')!r} not supported "
            f"(expected {FORMAT_VERSION})")
    meta = doc.get("meta", {})
    kind = doc.get("kind")
    if kind == "dense":
        return _dense_from_section(doc["dense"]), meta
    if kind == "gcn":
        section = doc["gcn"]
        featurizer = AtomFeaturizer(
            elements=tuple(section["featurizer"]["elements"]),
            bond_orders=tuple(section["featurizer"]["bond_orders"]))
        net = GraphConvNet(
            conv_weights=[_decode_array(w) for w in section["conv_weights"]],
            head=_dense_from_section(section["head"]),
            pool=section["pool"],
            skip_connections=section["skip_connections"],
            featurizer=featurizer)
        return net, meta
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(net, path, meta: dict | None = None):
    with open(path, "w") as handle:
        handle.write(dumps_model(net, meta))


def load_model(path):
    with open(path) as handle:
        return loads_model(handle.read())

"""Model files for NNP ensembles and ET parameters.

Two encodings of the same content:

JSON
    ``{"format": "mlffbench-model", "version": 1, "type": "nnp" | "et",
    "meta": {...}, "arrays": {name: {"shape": [...], "data": [...]}}}``
    with ``data`` the row-major flattening.

binary
    ``b"MLFFMODL"`` magic, then little-endian ``uint32`` version,
    ``uint32`` length of a UTF-8 JSON header, the header, and the arrays
    back to back as little-endian float64 in the order the header lists
    them (``{"type", "meta", "arrays": [[name, shape], ...]}``).

NNP array names are ``<symbol>/<member>/w<layer>`` and ``.../b<layer>``,
weights stored (out, in).  ET names are ``embedding``, ``readout/...``
and ``layer<l>/<wq|wk|wm|ws|wv|wr>``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .et import EtLayer, EtParams
from .nnp import MlpParams, NnpModel

MAGIC = b"MLFFMODL"
VERSION = 1
_LAYER_KEYS = ("wq", "wk", "wm", "ws", "wv", "wr")


class ModelFormatError(ValueError):
    pass


def _flatten(model):
    if isinstance(model, NnpModel):
        meta = {"species": list(model.species), "ensemble_size": model.ensemble_size,
                "widths": list(model.widths), "energy_shifts": dict(model.energy_shifts),
                "alpha": next(iter(model.members.values()))[0].alpha}
        arrays = []
        for sym, nets in model.members.items():
            for m, net in enumerate(nets):
                for k, (w, b) in enumerate(zip(net.weights, net.biases)):
                    arrays.append((f"{sym}/{m}/w{k}", w))
                    arrays.append((f"{sym}/{m}/b{k}", b))
        return "nnp", meta, arrays
    if isinstance(model, EtParams):
        meta = {"channels": model.channels, "heads": model.heads, "rbf_count": model.rbf_count,
                "cutoff": model.cutoff, "rbf_beta": model.rbf_beta, "layers": model.n_layers,
                "readout_b2": model.readout_b2, "species": list(model.species)}
        arrays = [("embedding", model.embedding), ("readout/w1", model.readout_w1),
                  ("readout/b1", model.readout_b1), ("readout/w2", model.readout_w2)]
        for l, layer in enumerate(model.layers):
            arrays += [(f"layer{l}/{key}", getattr(layer, key)) for key in _LAYER_KEYS]
        return "et", meta, arrays
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _build(kind, meta, arrays: dict):
    try:
        if kind == "nnp":
            n_layers = len(meta["widths"]) - 1
            members = {}
            for sym in meta["species"]:
                members[sym] = [
                    MlpParams([arrays[f"{sym}/{m}/w{k}"] for k in range(n_layers)],
                              [arrays[f"{sym}/{m}/b{k}"] for k in range(n_layers)], meta["alpha"])
                    for m in range(meta["ensemble_size"])
                ]
            model = NnpModel(members, dict(meta["energy_shifts"]))
            if model.widths != tuple(meta["widths"]):
                raise ModelFormatError("stored widths do not match the weight shapes")
            return model
        if kind == "et":
            layers = [EtLayer(*(arrays[f"layer{l}/{key}"] for key in _LAYER_KEYS)) for l in range(meta["layers"])]
            return EtParams(meta["channels"], meta["heads"], meta["rbf_count"], meta["cutoff"],
                            embedding=arrays["embedding"], layers=layers,
                            readout_w1=arrays["readout/w1"], readout_b1=arrays["readout/b1"],
                            readout_w2=arrays["readout/w2"], readout_b2=meta["readout_b2"],
                            rbf_beta=meta["rbf_beta"], species=meta["species"])
    except KeyError as exc:
        raise ModelFormatError(f"missing entry {exc}") from None
    raise ModelFormatError(f"unknown model type {kind!r}")


def _check_finite(arrays):
    for name, a in arrays:
        if not np.all(np.isfinite(a)):
            raise ModelFormatError(f"non-finite values in {name}")


def to_json(model) -> str:
    kind, meta, arrays = _flatten(model)
    _check_finite(arrays)
    body = {name: {"shape": list(np.shape(a)), "data": np.asarray(a, dtype=float).ravel().tolist()}
            for name, a in arrays}
    return json.dumps({"format": "mlffbench-model", "version": VERSION, "type": kind,
                       "meta": meta, "arrays": body})


def from_json(text: str):
    doc = json.loads(text)
    if doc.get("format") != "mlffbench-model":
        raise ModelFormatError("not a model file")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported version {doc.get('version')}")
    arrays = {name: np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
              for name, entry in doc["arrays"].items()}
    return _build(doc["type"], doc["meta"], arrays)


def to_bytes(model) -> bytes:
    kind, meta, arrays = _flatten(model)
    _check_finite(arrays)
    header = json.dumps({"type": kind, "meta": meta,
                         "arrays": [[name, list(np.shape(a))] for name, a in arrays]}).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    return b"".join(parts)


def from_bytes(data: bytes):
    if data[:8] != MAGIC:
        raise ModelFormatError("bad magic")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    header = json.loads(data[16:16 + hlen].decode())
    pos = 16 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(data):
            raise ModelFormatError("truncated model file")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float).reshape(shape)
        pos += 8 * count
    if pos != len(data):
        raise ModelFormatError("trailing bytes after the last array")
    return _build(header["type"], header["meta"], arrays)


def save_model(model, path) -> None:
    """Write ``.json`` as JSON and anything else in the binary encoding."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(to_json(model))
    else:
        path.write_bytes(to_bytes(model))


def load_model(path):
    path = Path(path)
    data = path.read_bytes()
    if data[:8] == MAGIC:
        return from_bytes(data)
    return from_json(data.decode())

"""Versioned binary checkpoints for networks and multi-exit models.

Layout: 4-byte magic, uint32 format version, uint64 header length, JSON
header (layer specs, shapes, branch table, tensor table with frozen flags),
then the tensors as raw little-endian float64 in table order. Writing the
same model twice produces identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .multiexit import BranchSpec, MultiExitModel
from .nn.layers import LayerSpec
from .nn.network import Network
from .nn.params import ParameterStore

MAGIC = b"BWCK"
FORMAT_VERSION = 1


def _tensor_entries(prefix: str, net: Network) -> list[dict]:
    return [{
        "name": f"{prefix}{name}",
        "shape": list(net.params.values[name].shape),
        "frozen": net.params.is_frozen(name),
    } for name in net.params.names()]


def _header(obj: Network | MultiExitModel) -> dict:
    if isinstance(obj, Network):
        return {
            "kind": "network",
            "input_shape": list(obj.input_shape),
            "layers": [s.to_dict() for s in obj.layers],
            "tensors": _tensor_entries("", obj),
        }
    header = {
        "kind": "multi_exit",
        "input_shape": list(obj.backbone.input_shape),
        "layers": [s.to_dict() for s in obj.backbone.layers],
        "branches": [{
            "location": b,
            "spec": {
                "location": spec.location,
                "conv_filters": spec.conv_filters,
                "conv_kernel": spec.conv_kernel,
                "pool": spec.pool,
                "dense_units": list(spec.dense_units),
                "dropout_rate": spec.dropout_rate,
            },
            "layers": [s.to_dict() for s in obj.branches[b].layers],
        } for b, spec in ((b, obj.branch_specs[b]) for b in obj.locations)],
        "tensors": _tensor_entries("backbone/", obj.backbone),
    }
    for b in obj.locations:
        header["tensors"].extend(_tensor_entries(f"branch{b}/", obj.branches[b]))
    return header


def _all_values(obj: Network | MultiExitModel):
    if isinstance(obj, Network):
        yield from (obj.params.values[n] for n in obj.params.names())
        return
    yield from (obj.backbone.params.values[n] for n in obj.backbone.params.names())
    for b in obj.locations:
        yield from (obj.branches[b].params.values[n] for n in obj.branches[b].params.names())


def save_checkpoint(path, obj: Network | MultiExitModel) -> None:
    header = json.dumps(_header(obj), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for value in _all_values(obj):
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def _rebuild_network(layers_dicts: list[dict], input_shape, tensors: list[dict],
                     data: memoryview, offsets: dict[str, int], prefix: str) -> Network:
    specs = [LayerSpec.from_dict(d) for d in layers_dicts]
    store = ParameterStore()
    for entry in tensors:
        name = entry["name"]
        if not name.startswith(prefix):
            continue
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = offsets[name]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(shape).copy()
        store.add(name[len(prefix):], arr, frozen=entry["frozen"])
    return Network(specs, store, tuple(input_shape))


def load_checkpoint(path) -> Network | MultiExitModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r} at byte 0, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported "
                              f"(this build reads {FORMAT_VERSION})")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    body_start = 16 + header_len
    if len(raw) < body_start:
        raise CheckpointError(f"{path}: truncated header at byte {len(raw)}")
    try:
        header = json.loads(raw[16:body_start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from None

    offsets: dict[str, int] = {}
    cursor = body_start
    for entry in header["tensors"]:
        offsets[entry["name"]] = cursor
        cursor += int(np.prod(entry["shape"]) if entry["shape"] else 1) * 8
    if cursor != len(raw):
        raise CheckpointError(f"{path}: tensor data ends at byte {len(raw)}, "
                              f"expected {cursor}")

    data = memoryview(raw)
    if header["kind"] == "network":
        return _rebuild_network(header["layers"], header["input_shape"],
                                header["tensors"], data, offsets, "")
    if header["kind"] != "multi_exit":
        raise CheckpointError(f"{path}: unknown checkpoint kind {header['kind']!r}")
    backbone = _rebuild_network(header["layers"], header["input_shape"],
                                header["tensors"], data, offsets, "backbone/")
    model = MultiExitModel(backbone)
    for bdict in header["branches"]:
        b = int(bdict["location"])
        sdict = dict(bdict["spec"])
        sdict["dense_units"] = tuple(sdict["dense_units"])
        model.branch_specs[b] = BranchSpec(**sdict)
        model.branches[b] = _rebuild_network(bdict["layers"], backbone.shapes[b],
                                             header["tensors"], data, offsets, f"branch{b}/")
    return model

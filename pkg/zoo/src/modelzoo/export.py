"""NWB1 serialization, independent of the engine's loader.

The writer quantizes weights to float32 and records golden fixtures
computed by its own float64 forward pass over the quantized weights, so a
bundle certifies the exact file the engine will read.
"""

import json
import os
import struct
import zlib

import numpy as np

MAGIC = b"NWB1"


def quantize(arr):
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def reference_forward(layers, x):
    """Float64 forward over quantized weights; mirrors the engine contract."""
    h = np.asarray(x, dtype=np.float64)
    for layer in layers:
        kind = layer["kind"]
        if kind == "dense":
            h = quantize(layer["W"]) @ h + quantize(layer["b"])
        elif kind == "tanh":
            h = np.tanh(h)
        elif kind == "relu":
            h = np.maximum(h, 0.0)
        elif kind == "leaky_relu":
            slope = layer["params"]["slope"]
            h = np.where(h > 0, h, slope * h)
        elif kind == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
        elif kind == "softmax":
            e = np.exp(h - h.max())
            h = e / e.sum()
        elif kind == "reshape":
            h = h.reshape(layer["params"]["shape"])
        else:
            raise ValueError(f"unsupported layer kind {kind!r}")
    return h


def write_bundle(path, name, input_shape, output_kind, layers,
                 fixture_inputs=(), metadata=None):
    """Serialize layers and record (input, output) golden pairs inline."""
    payload = bytearray()
    manifest_layers = []
    for layer in layers:
        entry = {"kind": layer["kind"], "params": layer.get("params", {})}
        if layer["kind"] == "dense":
            tensors = {}
            for key in ("W", "b"):
                arr = np.ascontiguousarray(layer[key], dtype="<f4")
                tensors[key] = {"shape": list(arr.shape),
                                "offset": len(payload)}
                payload.extend(arr.tobytes())
            entry["tensors"] = tensors
        manifest_layers.append(entry)
    fixtures = [{"input": np.asarray(x).tolist(),
                 "output": reference_forward(layers, x).tolist()}
                for x in fixture_inputs]
    manifest = {
        "name": name,
        "input_shape": list(input_shape),
        "output_kind": output_kind,
        "layers": manifest_layers,
        "fixtures": fixtures,
        "crc32": zlib.crc32(bytes(payload)) & 0xFFFFFFFF,
    }
    if metadata:
        manifest["metadata"] = metadata
    header = json.dumps(manifest, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(bytes(payload))
    os.replace(tmp, path)
    return path

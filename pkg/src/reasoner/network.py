"""Feed-forward network bundles in the NWB1 container format.

Layout (all integers little-endian):

  bytes 0-3    ASCII magic "NWB1"
  bytes 4-7    u32 header length H
  bytes 8-8+H  UTF-8 JSON manifest
  remainder    float32 tensor payloads, row-major, at manifest offsets
               (relative to the payload start)

Manifest keys: name, input_shape, output_kind, layers, fixtures, crc32,
plus an optional free-form metadata object.  Weights are stored in 32-bit
and promoted to 64-bit at load; evaluation is entirely 64-bit.
"""

import json
import os
import struct
import zlib

import numpy as np

from . import tensor as T

MAGIC = b"NWB1"

_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "softmax")
_LAYER_KINDS = ("dense",) + _ACTIVATIONS + ("reshape",)
_OUTPUT_KINDS = ("probabilities", "logits", "image", "scalar")
_MANIFEST_KEYS = {"name", "input_shape", "output_kind", "layers", "fixtures",
                  "crc32", "metadata"}


class BundleError(ValueError):
    """Base class for weight-bundle load failures."""


class BadMagicError(BundleError):
    pass


class TruncatedBundleError(BundleError):
    pass


class ChecksumError(BundleError):
    pass


class InvalidManifestError(BundleError):
    pass


class ShapeCompatibilityError(BundleError):
    pass


class LayerSpec:
    """One layer: kind, scalar params, and dense weight/bias tensors."""

    __slots__ = ("kind", "params", "weight", "bias")

    def __init__(self, kind, params=None, weight=None, bias=None):
        self.kind = kind
        self.params = dict(params or {})
        self.weight = weight
        self.bias = bias


class NetworkBundle:
    """A loaded feed-forward network; immutable and shareable."""

    def __init__(self, name, input_shape, output_kind, layers, fixtures=(),
                 metadata=None):
        self.name = name
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_kind = output_kind
        self.layers = list(layers)
        self.fixtures = list(fixtures)
        self.metadata = dict(metadata or {})
        self.output_shape = _propagate_shapes(self.input_shape, self.layers,
                                              name)
        if output_kind == "probabilities":
            if not self.layers or self.layers[-1].kind != "softmax":
                raise InvalidManifestError(
                    f"bundle {name!r}: output_kind 'probabilities' requires a "
                    "final softmax layer")

    def __repr__(self):
        return (f"NetworkBundle({self.name!r}, {self.input_shape}->"
                f"{self.output_shape}, {self.output_kind})")


def _propagate_shapes(input_shape, layers, name):
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        where = f"bundle {name!r} layer {i} ({layer.kind})"
        if layer.kind == "dense":
            w, b = layer.weight, layer.bias
            if len(shape) != 1:
                raise ShapeCompatibilityError(
                    f"{where}: dense needs rank-1 input, have {shape}")
            if len(w.shape) != 2 or w.shape[1] != shape[0]:
                raise ShapeCompatibilityError(
                    f"{where}: weight {w.shape} incompatible with input {shape}")
            if b.shape != (w.shape[0],):
                raise ShapeCompatibilityError(
                    f"{where}: bias {b.shape} incompatible with weight {w.shape}")
            shape = (w.shape[0],)
        elif layer.kind == "softmax":
            if len(shape) != 1:
                raise ShapeCompatibilityError(
                    f"{where}: softmax needs rank-1 input, have {shape}")
        elif layer.kind == "reshape":
            target = tuple(int(s) for s in layer.params["shape"])
            if int(np.prod(target)) != int(np.prod(shape)):
                raise ShapeCompatibilityError(
                    f"{where}: cannot reshape {shape} to {target}")
            shape = target
        elif layer.kind in _ACTIVATIONS:
            pass
        else:
            raise InvalidManifestError(f"{where}: unknown layer kind")
    return shape


def forward(net, x, tape=None):
    """Evaluate the bundle on ``x``; weights are constants, never differentiated."""
    if x.shape != net.input_shape:
        raise ValueError(
            f"forward({net.name}): input shape {x.shape} != declared "
            f"{net.input_shape}")
    h = x
    for layer in net.layers:
        kind = layer.kind
        if kind == "dense":
            h = T.add(T.matvec(layer.weight, h, tape), layer.bias, tape)
        elif kind == "relu":
            h = T.relu(h, tape)
        elif kind == "leaky_relu":
            h = T.leaky_relu(h, layer.params["slope"], tape)
        elif kind == "tanh":
            h = T.tanh(h, tape)
        elif kind == "sigmoid":
            h = T.sigmoid(h, tape)
        elif kind == "softmax":
            h = T.softmax(h, tape)
        elif kind == "reshape":
            h = T.reshape(h, layer.params["shape"], tape)
        else:  # pragma: no cover - rejected at load
            raise AssertionError(kind)
    return h


def concatenate(nets):
    """Compose bundles in order into a single bundle."""
    if not nets:
        raise ValueError("concatenate: need at least one bundle")
    for left, right in zip(nets, nets[1:]):
        if left.output_shape != right.input_shape:
            raise ShapeCompatibilityError(
                f"concatenate: {left.name!r} outputs {left.output_shape} but "
                f"{right.name!r} expects {right.input_shape}")
    layers = [layer for net in nets for layer in net.layers]
    return NetworkBundle(
        name="+".join(net.name for net in nets),
        input_shape=nets[0].input_shape,
        output_kind=nets[-1].output_kind,
        layers=layers,
    )


def _layer_from_manifest(entry, payload, name, index):
    where = f"bundle {name!r} layer {index}"
    if not isinstance(entry, dict):
        raise InvalidManifestError(f"{where}: layer entry must be an object")
    unknown = set(entry) - {"kind", "params", "tensors"}
    if unknown:
        raise InvalidManifestError(f"{where}: unknown keys {sorted(unknown)}")
    kind = entry.get("kind")
    if kind not in _LAYER_KINDS:
        raise InvalidManifestError(f"{where}: unknown layer kind {kind!r}")
    params = entry.get("params", {})
    weight = bias = None
    if kind == "dense":
        tensors = entry.get("tensors")
        if not tensors or "W" not in tensors or "b" not in tensors:
            raise InvalidManifestError(f"{where}: dense layer needs W and b")
        weight = _read_tensor(tensors["W"], payload, where + " W")
        bias = _read_tensor(tensors["b"], payload, where + " b")
    elif kind == "leaky_relu":
        if "slope" not in params:
            raise InvalidManifestError(f"{where}: leaky_relu needs params.slope")
    elif kind == "reshape":
        if "shape" not in params:
            raise InvalidManifestError(f"{where}: reshape needs params.shape")
    return LayerSpec(kind, params, weight, bias)


def _read_tensor(desc, payload, where):
    shape = tuple(int(s) for s in desc["shape"])
    offset = int(desc["offset"])
    count = int(np.prod(shape)) if shape else 1
    end = offset + 4 * count
    if offset < 0 or end > len(payload):
        raise TruncatedBundleError(
            f"{where}: payload range [{offset}:{end}] exceeds "
            f"{len(payload)} bytes")
    raw = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
    return T.Tensor(raw.astype(np.float64).reshape(shape), const=True)


def load_bundle(path):
    """Load and fully validate an NWB1 bundle from disk."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise TruncatedBundleError(f"{path}: only {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if 8 + header_len > len(blob):
        raise TruncatedBundleError(
            f"{path}: header claims {header_len} bytes, file has "
            f"{len(blob) - 8} after the fixed prefix")
    try:
        manifest = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise InvalidManifestError(f"{path}: manifest is not valid JSON ({err})")
    if not isinstance(manifest, dict):
        raise InvalidManifestError(f"{path}: manifest must be a JSON object")
    unknown = set(manifest) - _MANIFEST_KEYS
    if unknown:
        raise InvalidManifestError(f"{path}: unknown manifest keys {sorted(unknown)}")
    for key in ("name", "input_shape", "output_kind", "layers", "crc32"):
        if key not in manifest:
            raise InvalidManifestError(f"{path}: manifest missing key {key!r}")
    if manifest["output_kind"] not in _OUTPUT_KINDS:
        raise InvalidManifestError(
            f"{path}: unknown output_kind {manifest['output_kind']!r}")

    payload = blob[8 + header_len:]
    needed = 0
    for entry in manifest["layers"]:
        for desc in (entry.get("tensors") or {}).values():
            count = int(np.prod(desc["shape"])) if desc["shape"] else 1
            needed = max(needed, int(desc["offset"]) + 4 * count)
    if len(payload) < needed:
        raise TruncatedBundleError(
            f"{path}: payload has {len(payload)} bytes, tensors need {needed}")
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    if crc != int(manifest["crc32"]):
        raise ChecksumError(
            f"{path}: payload crc32 {crc:#010x} != manifest "
            f"{int(manifest['crc32']):#010x}")

    name = manifest["name"]
    layers = [_layer_from_manifest(entry, payload, name, i)
              for i, entry in enumerate(manifest["layers"])]
    fixtures = []
    for i, fx in enumerate(manifest.get("fixtures", [])):
        if set(fx) != {"input", "output"}:
            raise InvalidManifestError(
                f"{path}: fixture {i} must have exactly input and output")
        fixtures.append((np.asarray(fx["input"], dtype=np.float64),
                         np.asarray(fx["output"], dtype=np.float64)))
    return NetworkBundle(name, manifest["input_shape"],
                         manifest["output_kind"], layers, fixtures,
                         manifest.get("metadata"))


def write_bundle(path, name, input_shape, output_kind, layers, fixtures=(),
                 metadata=None):
    """Serialize a bundle; ``layers`` entries are dicts with kind/params/W/b.

    Weights are quantized to float32 on write; callers recording golden
    fixtures should evaluate the quantized weights, not the originals.
    """
    payload = bytearray()
    manifest_layers = []
    for entry in layers:
        kind = entry["kind"]
        m = {"kind": kind, "params": entry.get("params", {})}
        if kind == "dense":
            tensors = {}
            for key in ("W", "b"):
                arr = np.ascontiguousarray(entry[key], dtype="<f4")
                tensors[key] = {"shape": list(arr.shape), "offset": len(payload)}
                payload.extend(arr.tobytes())
            m["tensors"] = tensors
        manifest_layers.append(m)
    manifest = {
        "name": name,
        "input_shape": list(input_shape),
        "output_kind": output_kind,
        "layers": manifest_layers,
        "fixtures": [{"input": np.asarray(i).tolist(),
                      "output": np.asarray(o).tolist()} for i, o in fixtures],
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


def quantized_float32(arr):
    """Round-trip an array through the storage precision."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def verify_fixtures(net, rtol=1e-5):
    """Check every recorded golden pair; returns per-fixture reports."""
    reports = []
    for index, (x, expected) in enumerate(net.fixtures):
        got = forward(net, T.Tensor(x.reshape(net.input_shape))).arr
        got = got.reshape(expected.shape)
        denom = np.maximum(np.abs(expected) + np.abs(got), 1e-12)
        rel = float(np.max(np.abs(got - expected) / denom)) if got.size else 0.0
        reports.append({"fixture": index, "max_rel_err": rel,
                        "ok": rel <= rtol})
    return reports

"""Compile declarative problem descriptions into a differentiable posterior.

A problem is a set of latent blocks with standard-normal priors, named
pipelines (networks, linear degradations, softmax, expectations) hanging off
them, and likelihood terms over pipeline outputs:

  * Gaussian terms: data with diagonal noise covariance,
  * tempered categorical terms: alpha * log p[target],
  * logic-tensor terms: alpha * log of a 0/1 tensor contracted with
    classification probabilities.

The compiled graph exposes the unnormalized posterior log-density and its
exact gradient with respect to the stacked latent vector.  Tempered terms
(categorical and logic) additionally accept a global alpha multiplier so
annealing schedules can sweep constraint strength without recompiling.
"""

import json
import math
import os

import jsonschema
import numpy as np

from . import network as N
from . import tensor as T

LOG_2PI = math.log(2.0 * math.pi)
PROB_FLOOR = 1e-300

_DEGRADATION_KINDS = ("grayscale-sum", "coarsen", "mask", "rescale-pool")


class SpecError(ValueError):
    """Problem description rejected; message carries the JSON path."""


class UnknownBundleError(SpecError):
    pass


class ExternalDataError(ValueError):
    """A gaussian term declared external was evaluated without data."""


def _clamped_log(t, tape=None):
    # log(max(p, floor)) built from the closed primitive set; the relu
    # keeps gradients flowing on the unclamped branch only.  Above the
    # floor the construction reduces bitwise to log(p) with the same
    # gradient, so the common case skips the three extra ops.
    arr = t.arr
    small = arr[0] if arr.ndim == 1 and arr.shape[0] == 1 else arr.min()
    if small > PROB_FLOOR:
        return T.log(t, tape)
    shifted = T.adds(t, -PROB_FLOOR, tape)
    return T.log(T.adds(T.relu(shifted, tape), PROB_FLOOR, tape), tape)


# ---------------------------------------------------------------------------
# degradation operators


class DegradationOp:
    """A linear map from image/data space to measurement space."""

    def __init__(self, kind, matrix, params=None):
        self.kind = kind
        self.params = dict(params or {})
        arr = np.ascontiguousarray(matrix, dtype=np.float64)
        self.matrix = T.Tensor(arr, const=True)

    @property
    def input_size(self):
        return self.matrix.shape[1]

    @property
    def output_size(self):
        return self.matrix.shape[0]

    def __repr__(self):
        return f"DegradationOp({self.kind}, {self.matrix.shape})"


def grayscale_sum(shape):
    """Sum the channel axis of a [channels, h, w] image."""
    c, h, w = (int(s) for s in shape)
    m = np.zeros((h * w, c * h * w))
    for ch in range(c):
        for px in range(h * w):
            m[px, ch * h * w + px] = 1.0
    return DegradationOp("grayscale-sum", m, {"shape": [c, h, w]})


def _pool_matrix(shape, factor):
    h, w = (int(s) for s in shape)
    f = int(factor)
    if h % f or w % f:
        raise ValueError(f"pooling factor {f} does not divide image {h}x{w}")
    oh, ow = h // f, w // f
    m = np.zeros((oh * ow, h * w))
    weight = 1.0 / (f * f)
    for oy in range(oh):
        for ox in range(ow):
            row = oy * ow + ox
            for dy in range(f):
                for dx in range(f):
                    m[row, (oy * f + dy) * w + (ox * f + dx)] = weight
    return m


def coarsen(shape, factor):
    """Average-pool a [h, w] image by an integer factor."""
    return DegradationOp("coarsen", _pool_matrix(shape, factor),
                         {"shape": list(shape), "factor": int(factor)})


def rescale_pool(shape, factor):
    """Average pooling used to link network interfaces, not measurements."""
    return DegradationOp("rescale-pool", _pool_matrix(shape, factor),
                         {"shape": list(shape), "factor": int(factor)})


def mask(size, masked):
    """Drop the masked indices; the kept entries carry the likelihood."""
    size = int(size)
    masked = sorted(int(i) for i in masked)
    bad = [i for i in masked if not 0 <= i < size]
    if bad:
        raise ValueError(f"mask indices {bad} out of range for size {size}")
    keep = [i for i in range(size) if i not in set(masked)]
    m = np.zeros((len(keep), size))
    for row, idx in enumerate(keep):
        m[row, idx] = 1.0
    op = DegradationOp("mask", m, {"masked": masked})
    op.keep = keep
    return op


def compose(ops):
    """Chain degradation operators; the result is itself an operator."""
    if not ops:
        raise ValueError("compose: need at least one operator")
    m = ops[0].matrix.arr
    for op in ops[1:]:
        if op.input_size != m.shape[0]:
            raise ValueError(
                f"compose: {op.kind} expects {op.input_size} inputs, "
                f"previous stage emits {m.shape[0]}")
        m = op.matrix.arr @ m
    return DegradationOp("composed", m,
                         {"stages": [op.kind for op in ops]})


def apply_degradation(op, x, tape=None):
    """Apply the linear operator to a tensor (flattened row-major)."""
    if x.size != op.input_size:
        raise ValueError(
            f"apply_degradation({op.kind}): input has {x.size} values, "
            f"operator expects {op.input_size}")
    flat = x if len(x.shape) == 1 else T.reshape(x, (x.size,), tape)
    return T.matvec(op.matrix, flat, tape)


# ---------------------------------------------------------------------------
# logic tensors


class LogicTensor:
    """Sparse 0/1 tensor over class-index tuples marking valid combinations."""

    def __init__(self, entries, dims, alpha=1.0):
        dims = tuple(int(d) for d in dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"logic tensor arity must be 1..3, got {len(dims)}")
        seen = set()
        for entry in entries:
            entry = tuple(int(i) for i in entry)
            if len(entry) != len(dims):
                raise ValueError(
                    f"entry {entry} has arity {len(entry)}, tensor has {len(dims)}")
            for i, d in zip(entry, dims):
                if not 0 <= i < d:
                    raise ValueError(f"entry {entry} out of bounds for dims {dims}")
            seen.add(entry)
        self.entries = sorted(seen)
        self.dims = dims
        self.alpha = float(alpha)
        self._dense = self._build_dense()

    @property
    def arity(self):
        return len(self.dims)

    def _build_dense(self):
        if self.arity == 1:
            m = np.zeros(self.dims[0])
            for (i,) in self.entries:
                m[i] = 1.0
        elif self.arity == 2:
            m = np.zeros(self.dims)
            for i, j in self.entries:
                m[i, j] = 1.0
        else:
            n1, n2, n3 = self.dims
            m = np.zeros((n1, n2 * n3))
            for i, j, k in self.entries:
                m[i, j * n3 + k] = 1.0
        return T.Tensor(m, const=True)


def contract_logic(logic, probs, tape=None):
    """Sum over entries of the product of indexed probabilities.

    With probability-vector inputs the result lies in [0, 1]; with one-hot
    inputs it is exactly 1 when the tuple is an entry and 0 otherwise.
    """
    if len(probs) != logic.arity:
        raise ValueError(
            f"contract_logic: tensor has arity {logic.arity}, "
            f"got {len(probs)} inputs")
    for p, d in zip(probs, logic.dims):
        if p.shape != (d,):
            raise ValueError(
                f"contract_logic: input shape {p.shape} does not match "
                f"declared classes {d}")
    dense = logic._dense
    if logic.arity == 1:
        return T.sum(T.mul(dense, probs[0], tape), tape)
    if logic.arity == 2:
        return T.sum(T.mul(probs[0], T.matvec(dense, probs[1], tape), tape), tape)
    n2, n3 = logic.dims[1], logic.dims[2]
    col = T.reshape(probs[1], (n2, 1), tape)
    row = T.reshape(probs[2], (1, n3), tape)
    pair = T.reshape(T.matmul(col, row, tape), (n2 * n3,), tape)
    return T.sum(T.mul(probs[0], T.matvec(dense, pair, tape), tape), tape)


# ---------------------------------------------------------------------------
# likelihood terms


class GaussianTerm:
    """N(target | pipeline output, diag noise)."""

    tempered = False

    def __init__(self, name, pipeline, target, noise_var, size):
        self.name = name
        self.pipeline = pipeline
        self.size = int(size)
        var = np.asarray(noise_var, dtype=np.float64)
        if var.ndim == 0:
            var = np.full(self.size, float(var))
        if var.shape != (self.size,):
            raise ValueError(
                f"constraint {name!r}: noise_cov has {var.shape}, "
                f"data size is {self.size}")
        if not (var > 0).all():
            raise ValueError(f"constraint {name!r}: noise variances must be > 0")
        self.noise_var = var
        self._inv_var = T.Tensor(1.0 / var, const=True)
        self._norm = -0.5 * float(np.log(2.0 * np.pi * var).sum())
        self.target = None
        if target is not None:
            self.bind(target)

    def bind(self, target):
        arr = np.asarray(target, dtype=np.float64).reshape(-1)
        if arr.shape != (self.size,):
            raise ValueError(
                f"constraint {self.name!r}: data has {arr.shape[0]} values, "
                f"pipeline emits {self.size}")
        self.target = T.Tensor(arr, const=True)

    def contribution(self, value, tape, alpha_scale):
        if self.target is None:
            raise ExternalDataError(
                f"constraint {self.name!r} declares external data; bind a "
                "measurement before evaluating")
        flat = value if len(value.shape) == 1 else T.reshape(value, (value.size,), tape)
        r = T.sub(flat, self.target, tape)
        quad = T.sum(T.mul(T.mul(r, self._inv_var, tape), r, tape), tape)
        return T.adds(T.muls(quad, -0.5, tape), self._norm, tape)


class CategoricalTerm:
    """Tempered categorical: alpha * log p[target], unnormalized."""

    tempered = True

    def __init__(self, name, pipeline, target, alpha, n_classes):
        self.name = name
        self.pipeline = pipeline
        self.target = int(target)
        self.alpha = float(alpha)
        self.n_classes = int(n_classes)
        if not 0 <= self.target < self.n_classes:
            raise ValueError(
                f"constraint {name!r}: target {target} outside the "
                f"{n_classes} classes")
        if self.alpha <= 0:
            raise ValueError(f"constraint {name!r}: alpha must be > 0")

    def contribution(self, value, tape, alpha_scale):
        py = T.slice(value, self.target, self.target + 1, tape)
        return T.sum(T.muls(_clamped_log(py, tape),
                            self.alpha * alpha_scale, tape), tape)

    def satisfaction(self, value_arr):
        return float(value_arr[self.target])


class LogicTerm:
    """alpha * log of the logic-tensor contraction over probability inputs."""

    tempered = True

    def __init__(self, name, pipelines, logic):
        self.name = name
        self.pipelines = list(pipelines)
        self.logic = logic
        if logic.alpha <= 0:
            raise ValueError(f"constraint {name!r}: alpha must be > 0")

    def contribution(self, probs, tape, alpha_scale):
        c = contract_logic(self.logic, probs, tape)
        return T.muls(_clamped_log(c, tape), self.logic.alpha * alpha_scale, tape)

    def satisfaction(self, prob_arrs):
        value = contract_logic(self.logic, [T.Tensor(p) for p in prob_arrs])
        return float(value.arr)


# ---------------------------------------------------------------------------
# the compiled model graph


class LatentBlock:
    __slots__ = ("name", "dim", "offset")

    def __init__(self, name, dim, offset):
        self.name = name
        self.dim = int(dim)
        self.offset = int(offset)


class ModelGraph:
    """Latent blocks, pipelines, and likelihood terms over them.

    Immutable after construction; evaluations own a private tape, so
    concurrent calls are safe.
    """

    def __init__(self, blocks, networks, pipelines, terms, metadata=None):
        self.blocks = list(blocks)
        self.networks = dict(networks)
        self.pipelines = list(pipelines)  # (name, input_name, steps)
        self.terms = list(terms)
        self.metadata = dict(metadata or {})
        self.total_dim = sum(b.dim for b in self.blocks)
        self._log_prior_norm = -0.5 * self.total_dim * LOG_2PI

    # -- evaluation ---------------------------------------------------

    def _values(self, xi, tape):
        values = {}
        for block in self.blocks:
            values[block.name] = T.slice(xi, block.offset,
                                         block.offset + block.dim, tape)
        for name, input_name, steps in self.pipelines:
            h = values[input_name]
            for step in steps:
                kind = step[0]
                if kind == "net":
                    h = N.forward(self.networks[step[1]], h, tape)
                elif kind == "degrade":
                    h = apply_degradation(step[1], h, tape)
                elif kind == "softmax":
                    h = T.softmax(h, tape)
                elif kind == "expectation":
                    h = T.matvec(step[1], h, tape)
                else:  # pragma: no cover - rejected at compile
                    raise AssertionError(kind)
            values[name] = h
        return values

    def _term_inputs(self, term, values):
        if isinstance(term, LogicTerm):
            return [values[p] for p in term.pipelines]
        return values[term.pipeline]

    def _log_density(self, xi, tape, alpha_scale, include_prior=True):
        values = self._values(xi, tape)
        logp = None
        if include_prior:
            quad = T.sum(T.mul(xi, xi, tape), tape)
            logp = T.adds(T.muls(quad, -0.5, tape), self._log_prior_norm, tape)
        for term in self.terms:
            part = term.contribution(self._term_inputs(term, values), tape,
                                     alpha_scale)
            logp = part if logp is None else T.add(logp, part, tape)
        if logp is None:
            logp = T.constant(0.0)
        return logp

    def _wrap_xi(self, xi):
        arr = np.array(xi, dtype=np.float64).reshape(-1)
        if arr.shape != (self.total_dim,):
            raise ValueError(
                f"latent vector has {arr.shape[0]} entries, graph has "
                f"{self.total_dim}")
        return T.Tensor._wrap(arr)

    def log_density(self, xi, alpha_scale=1.0):
        """Unnormalized posterior log-density at the stacked latent vector."""
        return float(self._log_density(self._wrap_xi(xi), None, alpha_scale).arr)

    def logp_and_grad(self, xi, alpha_scale=1.0):
        """Log-density and its exact reverse-mode gradient."""
        xi_t = self._wrap_xi(xi)
        tape = T.Tape()
        out = self._log_density(xi_t, tape, alpha_scale)
        grads = T.gradient(tape, out)
        grad = grads[xi_t].arr if xi_t in grads else np.zeros(self.total_dim)
        return float(out.arr), grad

    def grad_log_density(self, xi, alpha_scale=1.0):
        return self.logp_and_grad(xi, alpha_scale)[1]

    def log_lik(self, xi, alpha_scale=1.0):
        """Sum of likelihood-term contributions, prior excluded."""
        return float(self._log_density(self._wrap_xi(xi), None, alpha_scale,
                                       include_prior=False).arr)

    def loglik_and_grad(self, xi, alpha_scale=1.0):
        xi_t = self._wrap_xi(xi)
        tape = T.Tape()
        out = self._log_density(xi_t, tape, alpha_scale, include_prior=False)
        grads = T.gradient(tape, out)
        grad = grads[xi_t].arr if xi_t in grads else np.zeros(self.total_dim)
        return float(out.arr), grad

    def pipeline_values(self, xi, names=None):
        """Forward pipeline outputs (no gradients) as plain arrays."""
        values = self._values(self._wrap_xi(xi), None)
        if names is None:
            names = [name for name, _, _ in self.pipelines]
        return {name: values[name].arr for name in names}

    def _satisfactions(self, values):
        out = {}
        for term in self.terms:
            if isinstance(term, LogicTerm):
                out[term.name] = term.satisfaction(
                    [values[p].arr for p in term.pipelines])
            elif isinstance(term, CategoricalTerm):
                out[term.name] = term.satisfaction(values[term.pipeline].arr)
        return out

    def term_satisfactions(self, xi):
        """Per tempered-term probability that the constraint holds."""
        return self._satisfactions(self._values(self._wrap_xi(xi), None))

    def snapshot(self, xi, pipeline_names):
        """One forward pass: named pipeline outputs plus term satisfactions."""
        values = self._values(self._wrap_xi(xi), None)
        return ({name: values[name].arr for name in pipeline_names},
                self._satisfactions(values))

    def external_terms(self):
        return [t for t in self.terms
                if isinstance(t, GaussianTerm) and t.target is None]

    def bind_external(self, data):
        """Bind measurement arrays to external gaussian terms by name."""
        unbound = {t.name for t in self.external_terms()}
        unknown = set(data) - unbound
        if unknown:
            raise ValueError(f"no external term named {sorted(unknown)}")
        missing = unbound - set(data)
        if missing:
            raise ExternalDataError(f"missing data for terms {sorted(missing)}")
        for term in self.external_terms():
            term.bind(data[term.name])

    def prior_sample(self, rng):
        return rng.standard_normal(self.total_dim)


# ---------------------------------------------------------------------------
# ProblemSpec documents

PROBLEM_SPEC_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ProblemSpec",
    "type": "object",
    "additionalProperties": False,
    "required": ["latents"],
    "properties": {
        "metadata": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer"},
                "description": {"type": "string"},
            },
        },
        "latents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "dim"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "dim": {"type": "integer", "minimum": 1},
                },
            },
        },
        "networks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "bundle"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "bundle": {"type": "string", "minLength": 1},
                },
            },
        },
        "pipelines": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "input", "steps"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "input": {"type": "string", "minLength": 1},
                    "steps": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "oneOf": [
                                {
                                    "additionalProperties": False,
                                    "required": ["net"],
                                    "properties": {"net": {"type": "string"}},
                                },
                                {
                                    "additionalProperties": False,
                                    "required": ["op", "shape"],
                                    "properties": {
                                        "op": {"const": "grayscale-sum"},
                                        "shape": {
                                            "type": "array",
                                            "items": {"type": "integer", "minimum": 1},
                                            "minItems": 3, "maxItems": 3,
                                        },
                                    },
                                },
                                {
                                    "additionalProperties": False,
                                    "required": ["op", "shape", "factor"],
                                    "properties": {
                                        "op": {"enum": ["coarsen", "rescale-pool"]},
                                        "shape": {
                                            "type": "array",
                                            "items": {"type": "integer", "minimum": 1},
                                            "minItems": 2, "maxItems": 2,
                                        },
                                        "factor": {"type": "integer", "minimum": 1},
                                    },
                                },
                                {
                                    "additionalProperties": False,
                                    "required": ["op", "masked"],
                                    "properties": {
                                        "op": {"const": "mask"},
                                        "masked": {
                                            "type": "array",
                                            "items": {"type": "integer", "minimum": 0},
                                        },
                                    },
                                },
                                {
                                    "additionalProperties": False,
                                    "required": ["op"],
                                    "properties": {"op": {"const": "softmax"}},
                                },
                                {
                                    "additionalProperties": False,
                                    "required": ["op", "values"],
                                    "properties": {
                                        "op": {"const": "expectation"},
                                        "values": {
                                            "type": "array",
                                            "items": {"type": "number"},
                                            "minItems": 1,
                                        },
                                    },
                                },
                            ],
                        },
                    },
                },
            },
        },
        "constraints": {
            "type": "array",
            "items": {
                "type": "object",
                "oneOf": [
                    {
                        "additionalProperties": False,
                        "required": ["type", "input", "target", "alpha"],
                        "properties": {
                            "name": {"type": "string"},
                            "type": {"const": "categorical"},
                            "input": {"type": "string"},
                            "target": {"type": "integer", "minimum": 0},
                            "alpha": {"type": "number"},
                        },
                    },
                    {
                        "additionalProperties": False,
                        "required": ["type", "input", "target", "noise_cov"],
                        "properties": {
                            "name": {"type": "string"},
                            "type": {"const": "gaussian"},
                            "input": {"type": "string"},
                            "target": {
                                "oneOf": [
                                    {"const": "external"},
                                    {"type": "array", "items": {"type": "number"}},
                                ],
                            },
                            "noise_cov": {
                                "oneOf": [
                                    {"type": "number"},
                                    {"type": "array", "items": {"type": "number"},
                                     "minItems": 1},
                                ],
                            },
                        },
                    },
                    {
                        "additionalProperties": False,
                        "required": ["type", "inputs", "entries", "alpha"],
                        "properties": {
                            "name": {"type": "string"},
                            "type": {"const": "logic"},
                            "inputs": {
                                "type": "array",
                                "items": {"type": "string"},
                                "minItems": 1, "maxItems": 3,
                            },
                            "entries": {
                                "type": "array",
                                "items": {
                                    "type": "array",
                                    "items": {"type": "integer", "minimum": 0},
                                    "minItems": 1, "maxItems": 3,
                                },
                            },
                            "alpha": {"type": "number"},
                        },
                    },
                ],
            },
        },
    },
}


def validate_spec(doc):
    """Structural validation; returns a list of 'path: message' strings."""
    validator = jsonschema.Draft202012Validator(PROBLEM_SPEC_SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        path = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        errors.append(f"{path}: {err.message}")
    return errors


def _constraint_name(entry, index):
    return entry.get("name", f"constraint[{index}]")


def compile_spec(doc, base_dir=".", networks=None):
    """Compile a validated ProblemSpec document into a ModelGraph.

    ``networks`` may inject preloaded bundles by name, bypassing file
    loading (bundle paths otherwise resolve relative to ``base_dir``).
    """
    errors = validate_spec(doc)
    if errors:
        raise SpecError("; ".join(errors))

    blocks = []
    offset = 0
    names = set()
    for entry in doc["latents"]:
        if entry["name"] in names:
            raise SpecError(f"duplicate latent name {entry['name']!r}")
        names.add(entry["name"])
        blocks.append(LatentBlock(entry["name"], entry["dim"], offset))
        offset += entry["dim"]

    loaded = dict(networks or {})
    for entry in doc.get("networks", []):
        name = entry["name"]
        if name in loaded:
            continue
        path = os.path.join(base_dir, entry["bundle"])
        if not os.path.exists(path):
            raise UnknownBundleError(f"network {name!r}: no bundle at {path}")
        loaded[name] = N.load_bundle(path)

    # propagate shape and kind through each pipeline
    shapes = {b.name: (b.dim,) for b in blocks}
    kinds = {b.name: "latent" for b in blocks}
    pipelines = []
    for entry in doc.get("pipelines", []):
        name, input_name = entry["name"], entry["input"]
        if name in names:
            raise SpecError(f"duplicate pipeline name {name!r}")
        names.add(name)
        if input_name not in shapes:
            raise SpecError(
                f"pipeline {name!r}: dangling input {input_name!r} (latents "
                "and earlier pipelines only)")
        shape, kind = shapes[input_name], kinds[input_name]
        steps = []
        for snum, step in enumerate(entry["steps"]):
            where = f"pipeline {name!r} step {snum}"
            if "net" in step:
                net_name = step["net"]
                if net_name not in loaded:
                    raise SpecError(f"{where}: unknown network {net_name!r}")
                net = loaded[net_name]
                if net.input_shape != shape:
                    raise SpecError(
                        f"{where}: network {net_name!r} expects "
                        f"{net.input_shape}, pipeline carries {shape}")
                steps.append(("net", net_name))
                shape, kind = net.output_shape, net.output_kind
            else:
                op_name = step["op"]
                size = int(np.prod(shape))
                if op_name == "softmax":
                    if len(shape) != 1:
                        raise SpecError(f"{where}: softmax needs a vector")
                    steps.append(("softmax",))
                    kind = "probabilities"
                elif op_name == "expectation":
                    values = step["values"]
                    if kind != "probabilities":
                        raise SpecError(
                            f"{where}: expectation needs probabilities input, "
                            f"have {kind}")
                    if len(values) != size:
                        raise SpecError(
                            f"{where}: {len(values)} class values for "
                            f"{size} classes")
                    steps.append(("expectation",
                                  T.Tensor(np.asarray(values).reshape(1, -1),
                                           const=True)))
                    shape, kind = (1,), "scalar"
                else:
                    try:
                        if op_name == "grayscale-sum":
                            op = grayscale_sum(step["shape"])
                        elif op_name in ("coarsen", "rescale-pool"):
                            builder = coarsen if op_name == "coarsen" else rescale_pool
                            op = builder(step["shape"], step["factor"])
                        elif op_name == "mask":
                            op = mask(size, step["masked"])
                        else:  # pragma: no cover - schema rejects
                            raise AssertionError(op_name)
                    except ValueError as err:
                        raise SpecError(f"{where}: {err}")
                    if op.input_size != size:
                        raise SpecError(
                            f"{where}: operator expects {op.input_size} "
                            f"values, pipeline carries {size}")
                    steps.append(("degrade", op))
                    shape, kind = (op.output_size,), "data"
        pipelines.append((name, input_name, steps))
        shapes[name], kinds[name] = shape, kind

    pipeline_names = {p[0] for p in pipelines}
    terms = []
    for index, entry in enumerate(doc.get("constraints", [])):
        cname = _constraint_name(entry, index)
        ctype = entry["type"]
        try:
            if ctype == "categorical":
                pipe = entry["input"]
                if pipe not in pipeline_names:
                    raise SpecError(f"dangling input {pipe!r}")
                if kinds[pipe] != "probabilities":
                    raise SpecError(
                        f"input {pipe!r} has kind {kinds[pipe]!r}, "
                        "categorical needs probabilities")
                terms.append(CategoricalTerm(cname, pipe, entry["target"],
                                             entry["alpha"],
                                             int(np.prod(shapes[pipe]))))
            elif ctype == "gaussian":
                pipe = entry["input"]
                if pipe not in pipeline_names:
                    raise SpecError(f"dangling input {pipe!r}")
                size = int(np.prod(shapes[pipe]))
                target = entry["target"]
                terms.append(GaussianTerm(
                    cname, pipe, None if target == "external" else target,
                    entry["noise_cov"], size))
            else:
                pipes = entry["inputs"]
                dims = []
                for pipe in pipes:
                    if pipe not in pipeline_names:
                        raise SpecError(f"dangling input {pipe!r}")
                    if kinds[pipe] != "probabilities":
                        raise SpecError(
                            f"input {pipe!r} has kind {kinds[pipe]!r}, logic "
                            "tensors need probabilities")
                    dims.append(int(np.prod(shapes[pipe])))
                logic = LogicTensor(entry["entries"], dims, entry["alpha"])
                terms.append(LogicTerm(cname, pipes, logic))
        except (SpecError, ValueError) as err:
            raise SpecError(f"constraint {cname!r}: {err}") from None

    return ModelGraph(blocks, loaded, pipelines, terms,
                      doc.get("metadata"))


def compile_file(path, networks=None):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return compile_spec(doc, base_dir=os.path.dirname(os.path.abspath(path)),
                        networks=networks)


def log_density(graph, xi, alpha_scale=1.0):
    return graph.log_density(xi, alpha_scale)


def grad_log_density(graph, xi, alpha_scale=1.0):
    return graph.grad_log_density(xi, alpha_scale)

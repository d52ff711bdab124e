"""Dense float64 tensors with tape-based reverse-mode differentiation.

The primitive set is deliberately closed: add, sub, mul, div, scalar
add/mul, matvec, matmul, exp, log, tanh, relu, leaky_relu, sigmoid,
softmax, reshape, sum, slice, concat.  Everything the engine evaluates is
composed from these, so gradient correctness reduces to auditing the
adjoint rule of each primitive.

Broadcasting is limited to tensor-vs-python-scalar; anything else needs an
explicit reshape.  Tensors marked ``const`` (network weights, observed
data) are never differentiated and their adjoint work is skipped.
"""

import numpy as np

from .kernels import K

__all__ = [
    "Tensor", "Tape", "tensor", "constant", "elementwise", "add", "sub",
    "mul", "div", "adds", "muls", "exp", "log", "tanh", "relu",
    "leaky_relu", "sigmoid", "softmax", "matvec", "matmul", "reshape",
    "sum", "slice", "concat", "gradient",
]

# opcodes for the backward dispatch
_ADD, _SUB, _MUL, _DIV, _ADDS, _MULS = 0, 1, 2, 3, 4, 5
_EXP, _LOG, _TANH, _RELU, _LEAKY, _SIGMOID, _SOFTMAX = 6, 7, 8, 9, 10, 11, 12
_MATVEC, _MATMUL, _RESHAPE, _SUM, _SLICE, _CONCAT = 13, 14, 15, 16, 17, 18


class Tensor:
    """Immutable dense array of 64-bit reals."""

    __slots__ = ("arr", "shape", "const")

    def __init__(self, values, const=False):
        arr = np.array(values, dtype=np.float64, order="C")
        arr.flags.writeable = False
        self.arr = arr
        self.shape = arr.shape
        self.const = const

    @classmethod
    def _wrap(cls, arr, const=False):
        # fast path for kernel outputs: float64, C-contiguous, freshly
        # owned arrays that no other code mutates (skips the flag locking
        # of the public constructor; it costs more than the kernels here)
        t = cls.__new__(cls)
        t.arr = arr
        t.shape = arr.shape
        t.const = const
        return t

    @property
    def data(self):
        """Flat row-major view of the values."""
        return self.arr.reshape(-1)

    @property
    def size(self):
        return self.arr.size

    def item(self):
        return float(self.arr)

    def tolist(self):
        return self.arr.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, const={self.const})"


def tensor(values):
    return Tensor(values)


def constant(values):
    return Tensor(values, const=True)


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    __slots__ = ("records", "consumed")

    def __init__(self):
        self.records = []
        self.consumed = False

    def __len__(self):
        return len(self.records)


def _shape_error(op, a, b):
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _binary(op, kern, a, b, tape):
    if a.shape != b.shape:
        _shape_error(op, a, b)
    out = Tensor._wrap(kern(a.arr, b.arr), a.const and b.const)
    if tape is not None and not out.const:
        tape.records.append((op, out, a, b, None))
    return out


def add(a, b, tape=None):
    if isinstance(b, (int, float)):
        return adds(a, b, tape)
    return _binary(_ADD, K.add, a, b, tape)


def sub(a, b, tape=None):
    if isinstance(b, (int, float)):
        return adds(a, -b, tape)
    return _binary(_SUB, K.sub, a, b, tape)


def mul(a, b, tape=None):
    if isinstance(b, (int, float)):
        return muls(a, b, tape)
    return _binary(_MUL, K.mul, a, b, tape)


def div(a, b, tape=None):
    if isinstance(b, (int, float)):
        return muls(a, 1.0 / b, tape)
    return _binary(_DIV, K.div, a, b, tape)


def adds(a, c, tape=None):
    out = Tensor._wrap(K.adds(a.arr, float(c)), a.const)
    if tape is not None and not out.const:
        tape.records.append((_ADDS, out, a, None, None))
    return out


def muls(a, c, tape=None):
    c = float(c)
    out = Tensor._wrap(K.muls(a.arr, c), a.const)
    if tape is not None and not out.const:
        tape.records.append((_MULS, out, a, c, None))
    return out


def _unary(op, kern, a, tape):
    out = Tensor._wrap(kern(a.arr), a.const)
    if tape is not None and not out.const:
        tape.records.append((op, out, a, None, None))
    return out


def exp(a, tape=None):
    return _unary(_EXP, K.exp, a, tape)


def log(a, tape=None):
    return _unary(_LOG, K.log, a, tape)


def tanh(a, tape=None):
    return _unary(_TANH, K.tanh, a, tape)


def relu(a, tape=None):
    return _unary(_RELU, K.relu, a, tape)


def sigmoid(a, tape=None):
    return _unary(_SIGMOID, K.sigmoid, a, tape)


def leaky_relu(a, slope, tape=None):
    slope = float(slope)
    out = Tensor._wrap(K.leaky_relu(a.arr, slope), a.const)
    if tape is not None and not out.const:
        tape.records.append((_LEAKY, out, a, slope, None))
    return out


def softmax(z, tape=None):
    if len(z.shape) != 1:
        raise ValueError(f"softmax: expected rank-1 input, got shape {z.shape}")
    if np.isnan(np.max(z.arr)):
        raise ValueError("softmax: NaN input rejected")
    out = Tensor._wrap(K.softmax(z.arr), z.const)
    if tape is not None and not out.const:
        tape.records.append((_SOFTMAX, out, z, None, None))
    return out


def matvec(w, x, tape=None):
    if len(w.shape) != 2 or len(x.shape) != 1 or w.shape[1] != x.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {w.shape} and {x.shape}")
    out = Tensor._wrap(K.matvec(w.arr, x.arr), w.const and x.const)
    if tape is not None and not out.const:
        tape.records.append((_MATVEC, out, w, x, None))
    return out


def matmul(a, b, tape=None):
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor._wrap(K.matmul(a.arr, b.arr), a.const and b.const)
    if tape is not None and not out.const:
        tape.records.append((_MATMUL, out, a, b, None))
    return out


def reshape(a, shape, tape=None):
    shape = tuple(int(s) for s in shape)
    out = Tensor._wrap(a.arr.reshape(shape), a.const)
    if tape is not None and not out.const:
        tape.records.append((_RESHAPE, out, a, None, None))
    return out


def sum(a, tape=None):
    out = Tensor._wrap(np.asarray(K.total(a.arr)), a.const)
    if tape is not None and not out.const:
        tape.records.append((_SUM, out, a, None, None))
    return out


def slice(a, start, stop, tape=None):
    if len(a.shape) != 1:
        raise ValueError(f"slice: expected rank-1 input, got shape {a.shape}")
    if not (0 <= start <= stop <= a.shape[0]):
        raise ValueError(f"slice: bounds [{start}:{stop}] invalid for length {a.shape[0]}")
    out = Tensor._wrap(a.arr[start:stop], a.const)
    if tape is not None and not out.const:
        tape.records.append((_SLICE, out, a, start, None))
    return out


def concat(parts, tape=None):
    for p in parts:
        if len(p.shape) != 1:
            raise ValueError(f"concat: expected rank-1 parts, got shape {p.shape}")
    out = Tensor._wrap(np.concatenate([p.arr for p in parts]),
                       all(p.const for p in parts))
    if tape is not None and not out.const:
        tape.records.append((_CONCAT, out, tuple(parts), None, None))
    return out


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "exp": exp, "log": log, "tanh": tanh, "relu": relu,
    "sigmoid": sigmoid,
}


def elementwise(kind, a, b=None, tape=None):
    """Generic elementwise entry point; dispatches on the op kind."""
    fn = _ELEMENTWISE.get(kind)
    if fn is None:
        raise ValueError(f"elementwise: unknown op kind {kind!r}")
    if b is None:
        return fn(a, tape=tape)
    return fn(a, b, tape=tape)


def gradient(tape, output):
    """Reverse-mode gradients of a scalar output for all non-const leaves.

    Consumes the tape: a second backward pass on the same tape is an error.
    Returns a dict mapping each reached leaf Tensor to its gradient Tensor.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a backward pass")
    if output.size != 1:
        raise ValueError(f"gradient: output must be scalar, got shape {output.shape}")
    tape.consumed = True

    K_mul, K_div, K_muls, K_adds, K_iadd = K.mul, K.div, K.muls, K.adds, K.iadd

    adj = {id(output): np.ones_like(output.arr)}
    owned = {id(adj[id(output)])}
    produced = {id(rec[1]) for rec in tape.records}
    leaves = {}

    def _acc(t, contrib):
        key = id(t)
        cur = adj.get(key)
        if cur is None:
            if id(contrib) in owned:
                contrib = contrib.copy()
            owned.add(id(contrib))
            adj[key] = contrib
            if key not in produced and not t.const:
                leaves[key] = t
        else:
            K_iadd(cur, contrib)

    for rec in reversed(tape.records):
        op, out, a, b, aux = rec
        g = adj.get(id(out))
        if g is None:
            continue
        if op == _MUL:
            if not a.const:
                _acc(a, K_mul(g, b.arr))
            if not b.const:
                _acc(b, K_mul(g, a.arr))
        elif op == _ADD:
            if not a.const:
                _acc(a, g)
            if not b.const:
                _acc(b, g)
        elif op == _MATVEC:
            if not b.const:
                _acc(b, K.matvec_t(a.arr, g))
            if not a.const:
                _acc(a, K.outer(g, b.arr))
        elif op == _SUM:
            _acc(a, np.full(a.shape, g[()] if g.ndim == 0 else g.ravel()[0]))
        elif op == _MULS:
            _acc(a, K_muls(g, b))
        elif op == _ADDS:
            _acc(a, g)
        elif op == _SUB:
            if not a.const:
                _acc(a, g)
            if not b.const:
                _acc(b, K_muls(g, -1.0))
        elif op == _DIV:
            if not a.const:
                _acc(a, K_div(g, b.arr))
            if not b.const:
                _acc(b, K.muls(K.mul(K_div(g, b.arr), out.arr), -1.0))
        elif op == _EXP:
            _acc(a, K_mul(g, out.arr))
        elif op == _LOG:
            _acc(a, K.div(g, a.arr))
        elif op == _TANH:
            _acc(a, K.mul(g, K.adds(K.muls(K.mul(out.arr, out.arr), -1.0), 1.0)))
        elif op == _RELU:
            _acc(a, K.relu_mask_mul(a.arr, g))
        elif op == _LEAKY:
            _acc(a, K.leaky_mask_mul(a.arr, g, b))
        elif op == _SIGMOID:
            _acc(a, K.mul(g, K.mul(out.arr, K.adds(K.muls(out.arr, -1.0), 1.0))))
        elif op == _SOFTMAX:
            _acc(a, K.softmax_vjp(out.arr, g))
        elif op == _RESHAPE:
            _acc(a, g.reshape(a.shape))
        elif op == _SLICE:
            buf = np.zeros(a.shape)
            K.slice_add(buf, g, b)
            _acc(a, buf)
        elif op == _CONCAT:
            off = 0
            for p in a:
                if not p.const:
                    _acc(p, g[off:off + p.arr.size].copy())
                off += p.arr.size
        elif op == _MATMUL:
            if not a.const:
                _acc(a, K.matmul_nt(g, b.arr))
            if not b.const:
                _acc(b, K.matmul_tn(a.arr, g))
        else:  # pragma: no cover
            raise AssertionError(f"unknown opcode {op}")

    return {t: Tensor._wrap(adj[key]) for key, t in leaves.items()}

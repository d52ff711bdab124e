"""NumPy fallback for the hot kernels.

Same surface as the compiled module ``reasoner._ckernels``; used when the
extension is unavailable or when REASONER_KERNELS=py forces it.  All inputs
are C-contiguous float64 arrays.
"""

import numpy as np

BACKEND = "python"


def add(a, b):
    return np.add(a, b)


def sub(a, b):
    return np.subtract(a, b)


def mul(a, b):
    return np.multiply(a, b)


def div(a, b):
    return np.divide(a, b)


def adds(a, c):
    return a + c


def muls(a, c):
    return a * c


def exp(a):
    return np.exp(a)


def log(a):
    return np.log(a)


def tanh(a):
    return np.tanh(a)


def sigmoid(a):
    out = np.empty_like(a)
    np.negative(a, out)
    np.exp(out, out)
    out += 1.0
    np.reciprocal(out, out)
    return out


def relu(a):
    return np.maximum(a, 0.0)


def leaky_relu(a, slope):
    return np.where(a > 0.0, a, a * slope)


def relu_mask_mul(x, g):
    return np.where(x > 0.0, g, 0.0)


def leaky_mask_mul(x, g, slope):
    return np.where(x > 0.0, g, g * slope)


def softmax(z):
    shifted = z - z.max()
    np.exp(shifted, shifted)
    shifted /= shifted.sum()
    return shifted


def softmax_vjp(p, g):
    return p * (g - np.dot(p, g))


def matvec(w, x):
    return w @ x


def matvec_t(w, g):
    return w.T @ g


def outer(g, x):
    return np.outer(g, x)


def matmul(a, b):
    return a @ b


def matmul_nt(a, b):
    return a @ b.T


def matmul_tn(a, b):
    return a.T @ b


def total(a):
    return float(a.sum())


def dot(a, b):
    return float(np.dot(a.ravel(), b.ravel()))


def iadd(acc, g):
    acc += g


def slice_add(acc, g, start):
    acc[start:start + g.size] += g

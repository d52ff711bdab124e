# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Raw-pointer loops over C-contiguous float64 buffers: the win over NumPy on
the tiny vectors that dominate leapfrog and ELBO evaluations is per-call
overhead, so even the buffer-protocol handshake of typed memoryviews costs
too much here.  Large matrix products dispatch to NumPy's BLAS, which beats
scalar loops once arithmetic dominates.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, log as c_log, tanh as c_tanh

cnp.import_array()

BACKEND = "compiled"

DEF BLAS_CUTOFF = 2048   # matrix elements above which BLAS wins


cdef inline double* dptr(cnp.ndarray a) except NULL:
    if not cnp.PyArray_CHKFLAGS(a, cnp.NPY_ARRAY_C_CONTIGUOUS) \
            or cnp.PyArray_TYPE(a) != cnp.NPY_FLOAT64:
        raise TypeError("kernel inputs must be C-contiguous float64")
    return <double*> cnp.PyArray_DATA(a)


cdef inline cnp.ndarray empty_like(cnp.ndarray a):
    return cnp.PyArray_EMPTY(cnp.PyArray_NDIM(a), cnp.PyArray_DIMS(a),
                             cnp.NPY_FLOAT64, 0)


def add(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] + b[i]
    return out_nd


def sub(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] - b[i]
    return out_nd


def mul(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] * b[i]
    return out_nd


def div(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] / b[i]
    return out_nd


def adds(cnp.ndarray a_nd, double c):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] + c
    return out_nd


def muls(cnp.ndarray a_nd, double c):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] * c
    return out_nd


def exp(cnp.ndarray a_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = c_exp(a[i])
    return out_nd


def log(cnp.ndarray a_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = c_log(a[i])
    return out_nd


def tanh(cnp.ndarray a_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = c_tanh(a[i])
    return out_nd


def sigmoid(cnp.ndarray a_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = 1.0 / (1.0 + c_exp(-a[i]))
    return out_nd


def relu(cnp.ndarray a_nd):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] if a[i] > 0.0 else 0.0
    return out_nd


def leaky_relu(cnp.ndarray a_nd, double slope):
    cdef cnp.ndarray out_nd = empty_like(a_nd)
    cdef double* a = dptr(a_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    for i in range(n):
        out[i] = a[i] if a[i] > 0.0 else a[i] * slope
    return out_nd


def relu_mask_mul(cnp.ndarray x_nd, cnp.ndarray g_nd):
    cdef cnp.ndarray out_nd = empty_like(x_nd)
    cdef double* x = dptr(x_nd)
    cdef double* g = dptr(g_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(x_nd)
    for i in range(n):
        out[i] = g[i] if x[i] > 0.0 else 0.0
    return out_nd


def leaky_mask_mul(cnp.ndarray x_nd, cnp.ndarray g_nd, double slope):
    cdef cnp.ndarray out_nd = empty_like(x_nd)
    cdef double* x = dptr(x_nd)
    cdef double* g = dptr(g_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(x_nd)
    for i in range(n):
        out[i] = g[i] if x[i] > 0.0 else g[i] * slope
    return out_nd


def softmax(cnp.ndarray z_nd):
    cdef cnp.ndarray out_nd = empty_like(z_nd)
    cdef double* z = dptr(z_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(z_nd)
    cdef double m = z[0], s = 0.0
    for i in range(1, n):
        if z[i] > m:
            m = z[i]
    for i in range(n):
        out[i] = c_exp(z[i] - m)
        s += out[i]
    for i in range(n):
        out[i] /= s
    return out_nd


def softmax_vjp(cnp.ndarray p_nd, cnp.ndarray g_nd):
    cdef cnp.ndarray out_nd = empty_like(p_nd)
    cdef double* p = dptr(p_nd)
    cdef double* g = dptr(g_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(p_nd)
    cdef double pg = 0.0
    for i in range(n):
        pg += p[i] * g[i]
    for i in range(n):
        out[i] = p[i] * (g[i] - pg)
    return out_nd


def matvec(cnp.ndarray w_nd, cnp.ndarray x_nd):
    cdef cnp.npy_intp m = cnp.PyArray_DIM(w_nd, 0)
    cdef cnp.npy_intp k = cnp.PyArray_DIM(w_nd, 1)
    if m * k > BLAS_CUTOFF:
        return np.dot(w_nd, x_nd)
    cdef cnp.ndarray out_nd = cnp.PyArray_EMPTY(1, &m, cnp.NPY_FLOAT64, 0)
    cdef double* w = dptr(w_nd)
    cdef double* x = dptr(x_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(m):
        s = 0.0
        for j in range(k):
            s += w[i * k + j] * x[j]
        out[i] = s
    return out_nd


def matvec_t(cnp.ndarray w_nd, cnp.ndarray g_nd):
    cdef cnp.npy_intp m = cnp.PyArray_DIM(w_nd, 0)
    cdef cnp.npy_intp k = cnp.PyArray_DIM(w_nd, 1)
    if m * k > BLAS_CUTOFF:
        return np.dot(w_nd.T, g_nd)
    cdef cnp.ndarray out_nd = cnp.PyArray_ZEROS(1, &k, cnp.NPY_FLOAT64, 0)
    cdef double* w = dptr(w_nd)
    cdef double* g = dptr(g_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, j
    cdef double gi
    for i in range(m):
        gi = g[i]
        if gi != 0.0:
            for j in range(k):
                out[j] += w[i * k + j] * gi
    return out_nd


def outer(cnp.ndarray g_nd, cnp.ndarray x_nd):
    cdef cnp.npy_intp dims[2]
    dims[0] = cnp.PyArray_DIM(g_nd, 0)
    dims[1] = cnp.PyArray_DIM(x_nd, 0)
    cdef cnp.ndarray out_nd = cnp.PyArray_EMPTY(2, dims, cnp.NPY_FLOAT64, 0)
    cdef double* g = dptr(g_nd)
    cdef double* x = dptr(x_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, j
    cdef double gi
    for i in range(dims[0]):
        gi = g[i]
        for j in range(dims[1]):
            out[i * dims[1] + j] = gi * x[j]
    return out_nd


def matmul(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef cnp.npy_intp dims[2]
    dims[0] = cnp.PyArray_DIM(a_nd, 0)
    dims[1] = cnp.PyArray_DIM(b_nd, 1)
    cdef Py_ssize_t k = cnp.PyArray_DIM(a_nd, 1)
    if dims[0] * dims[1] * k > BLAS_CUTOFF:
        return np.matmul(a_nd, b_nd)
    cdef cnp.ndarray out_nd = cnp.PyArray_EMPTY(2, dims, cnp.NPY_FLOAT64, 0)
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, j, l
    cdef double s
    for i in range(dims[0]):
        for j in range(dims[1]):
            s = 0.0
            for l in range(k):
                s += a[i * k + l] * b[l * dims[1] + j]
            out[i * dims[1] + j] = s
    return out_nd


def matmul_nt(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef cnp.npy_intp dims[2]
    dims[0] = cnp.PyArray_DIM(a_nd, 0)
    dims[1] = cnp.PyArray_DIM(b_nd, 0)
    cdef Py_ssize_t k = cnp.PyArray_DIM(a_nd, 1)
    if dims[0] * dims[1] * k > BLAS_CUTOFF:
        return np.matmul(a_nd, b_nd.T)
    cdef cnp.ndarray out_nd = cnp.PyArray_EMPTY(2, dims, cnp.NPY_FLOAT64, 0)
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, j, l
    cdef double s
    for i in range(dims[0]):
        for j in range(dims[1]):
            s = 0.0
            for l in range(k):
                s += a[i * k + l] * b[j * k + l]
            out[i * dims[1] + j] = s
    return out_nd


def matmul_tn(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef cnp.npy_intp dims[2]
    dims[0] = cnp.PyArray_DIM(a_nd, 1)
    dims[1] = cnp.PyArray_DIM(b_nd, 1)
    cdef Py_ssize_t k = cnp.PyArray_DIM(a_nd, 0)
    if dims[0] * dims[1] * k > BLAS_CUTOFF:
        return np.matmul(a_nd.T, b_nd)
    cdef cnp.ndarray out_nd = cnp.PyArray_ZEROS(2, dims, cnp.NPY_FLOAT64, 0)
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef double* out = <double*> cnp.PyArray_DATA(out_nd)
    cdef Py_ssize_t i, j, l
    cdef double al
    for l in range(k):
        for i in range(dims[0]):
            al = a[l * dims[0] + i]
            if al != 0.0:
                for j in range(dims[1]):
                    out[i * dims[1] + j] += al * b[l * dims[1] + j]
    return out_nd


def total(cnp.ndarray a_nd):
    cdef double* a = dptr(a_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    cdef double s = 0.0
    for i in range(n):
        s += a[i]
    return s


def dot(cnp.ndarray a_nd, cnp.ndarray b_nd):
    cdef double* a = dptr(a_nd)
    cdef double* b = dptr(b_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(a_nd)
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


def iadd(cnp.ndarray acc_nd, cnp.ndarray g_nd):
    cdef double* acc = dptr(acc_nd)
    cdef double* g = dptr(g_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(acc_nd)
    for i in range(n):
        acc[i] += g[i]


def slice_add(cnp.ndarray acc_nd, cnp.ndarray g_nd, Py_ssize_t start):
    cdef double* acc = dptr(acc_nd)
    cdef double* g = dptr(g_nd)
    cdef Py_ssize_t i, n = cnp.PyArray_SIZE(g_nd)
    for i in range(n):
        acc[start + i] += g[i]

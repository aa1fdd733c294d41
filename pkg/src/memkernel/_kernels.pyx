# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for weighted discrete convolutions of matrix sequences."""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport zgemm

ctypedef double complex cplx

cnp.import_array()

# below this size plain loops beat a BLAS call per product
DEF SMALL = 12


cdef inline double _weight(Py_ssize_t n, Py_ssize_t j,
                           const double[:, ::1] table, const double[::1] ends) noexcept nogil:
    cdef Py_ssize_t m = table.shape[0]
    cdef Py_ssize_t e = ends.shape[0]
    if n < m:
        return table[n, j]
    if j < e:
        return ends[j]
    if n - j < e:
        return ends[n - j]
    return 1.0


cdef inline void _gemm_acc(cplx *a, cplx *b, cplx *c, int d, int p, int k,
                           cplx alpha) noexcept nogil:
    # c (d x k) += alpha * a (d x p) @ b (p x k), all row-major
    cdef int i, j, l
    cdef cplx s
    cdef cplx one = 1.0
    if d <= SMALL and p <= SMALL and k <= SMALL:
        for i in range(d):
            for j in range(k):
                s = 0
                for l in range(p):
                    s = s + a[i * p + l] * b[l * k + j]
                c[i * k + j] = c[i * k + j] + alpha * s
    else:
        # row-major C = A B is column-major C^T = B^T A^T
        zgemm(b"N", b"N", &k, &d, &p, &alpha, b, &k, a, &p, &one, c, &k)


def conv(cplx[:, :, ::1] a, cplx[:, :, ::1] b, double h,
         const double[:, ::1] table, const double[::1] ends):
    """out[i] = h * sum_j w^{(i)}_j a[i - j] @ b[j].

    Rows past the starter table have unit interior weights, so each is one
    BLAS product of the reversed, horizontally stacked ``a`` with the
    vertically stacked ``b`` plus corrections for the end weights.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef int d = <int>a.shape[1]
    cdef int p = <int>a.shape[2]
    cdef int k = <int>b.shape[2]
    if b.shape[0] != n or b.shape[1] != p:
        raise ValueError("shape mismatch in conv")
    out_arr = np.zeros((n, d, k), dtype=np.complex128)
    cdef cplx[:, :, ::1] out = out_arr
    # rev[r, m, c] = a[n - 1 - m, r, c]
    rev_arr = np.ascontiguousarray(np.asarray(a)[::-1].transpose(1, 0, 2))
    cdef cplx[:, :, ::1] rev = rev_arr
    cdef Py_ssize_t m_rows = table.shape[0]
    cdef Py_ssize_t e = ends.shape[0]
    cdef Py_ssize_t i, j
    cdef int length, lda = <int>(n * p)
    cdef double w
    cdef cplx alpha = h, zero = 0.0
    with nogil:
        for i in range(n):
            if i < m_rows or i + 1 < 2 * e:
                for j in range(i + 1):
                    w = h * _weight(i, j, table, ends)
                    if w != 0.0:
                        _gemm_acc(&a[i - j, 0, 0], &b[j, 0, 0], &out[i, 0, 0], d, p, k, w)
                continue
            length = <int>((i + 1) * p)
            # out[i] = h * [a[i] ... a[0]] @ [b[0]; ...; b[i]] in column-major form
            zgemm(b"N", b"N", &k, &d, &length, &alpha, &b[0, 0, 0], &k,
                  &rev[0, n - 1 - i, 0], &lda, &zero, &out[i, 0, 0], &k)
            for j in range(e):
                w = h * (ends[j] - 1.0)
                if w != 0.0:
                    _gemm_acc(&a[i - j, 0, 0], &b[j, 0, 0], &out[i, 0, 0], d, p, k, w)
                    _gemm_acc(&a[j, 0, 0], &b[i - j, 0, 0], &out[i, 0, 0], d, p, k, w)
    return out_arr


def history(cplx[:, :, ::1] w_seq, cplx[:, :, ::1] y, Py_ssize_t step,
            const double[::1] weights, double h):
    """h * sum_{j < step} weights[j] * w_seq[step - j] @ y[j]."""
    cdef int d = <int>w_seq.shape[1]
    cdef int p = <int>w_seq.shape[2]
    cdef int k = <int>y.shape[2]
    out_arr = np.zeros((d, k), dtype=np.complex128)
    cdef cplx[:, ::1] out = out_arr
    cdef Py_ssize_t j
    cdef double w
    if step > w_seq.shape[0] - 1 or step > y.shape[0] or weights.shape[0] < step:
        raise ValueError("history step out of range")
    with nogil:
        for j in range(step):
            w = h * weights[j]
            if w != 0.0:
                _gemm_acc(&w_seq[step - j, 0, 0], &y[j, 0, 0], &out[0, 0], d, p, k, w)
    return out_arr

"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def _row(n, table, ends):
    if n < len(table):
        return table[n, : n + 1]
    row = np.ones(n + 1)
    e = len(ends)
    row[:e] = ends
    row[n - e + 1 :] = ends[::-1]
    return row


def conv(a, b, h, table, ends):
    """out[i] = h * sum_j w^{(i)}_j a[i - j] @ b[j]."""
    n, d, p = a.shape
    if b.shape[0] != n or b.shape[1] != p:
        raise ValueError("shape mismatch in conv")
    out = np.zeros((n, d, b.shape[2]), dtype=complex)
    for i in range(n):
        w = h * _row(i, table, ends)
        if not w.any():
            continue
        out[i] = np.tensordot(a[i::-1] * w[:, None, None], b[: i + 1], axes=([0, 2], [0, 1]))
    return out


def history(w_seq, y, step, weights, h):
    """h * sum_{j < step} weights[j] * w_seq[step - j] @ y[j]."""
    if step > w_seq.shape[0] - 1 or step > y.shape[0] or len(weights) < step:
        raise ValueError("history step out of range")
    if step == 0:
        return np.zeros((w_seq.shape[1], y.shape[2]), dtype=complex)
    w = h * np.asarray(weights[:step])
    return np.tensordot(w_seq[step:0:-1] * w[:, None, None], y[:step], axes=([0, 2], [0, 1]))

"""Discrete convolution kernels, compiled when available.

``BACKEND`` is ``"compiled"`` when the Cython extension imported and
``"numpy"`` otherwise. Setting ``MEMKERNEL_PURE_PYTHON=1`` forces the numpy
path.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback
from .quadrature import weight_tables

try:
    if os.environ.get("MEMKERNEL_PURE_PYTHON") == "1":
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _fallback
    BACKEND = "numpy"


def _as_seq(x):
    x = np.ascontiguousarray(x, dtype=complex)
    if x.ndim == 2:
        x = x[:, :, None]
    return x


def conv(a, b, h: float, scheme: str = "gregory", backend: str | None = None) -> np.ndarray:
    """Discrete causal convolution ``(a * b)(t_i) = int_0^{t_i} a(t_i - s) b(s) ds``.

    ``a`` has shape ``(N, D, P)`` and ``b`` shape ``(N, P, K)``; the product is
    the matrix product, so operator order is preserved.
    """
    a = _as_seq(a)
    b = _as_seq(b)
    table, ends = weight_tables(scheme)
    impl = _select(backend)
    return impl.conv(a, b, float(h), np.ascontiguousarray(table), np.ascontiguousarray(ends))


def history(w_seq, y, step: int, weights, h: float, backend: str | None = None) -> np.ndarray:
    """``h * sum_{j < step} weights[j] * w_seq[step - j] @ y[j]``."""
    impl = _select(backend)
    return impl.history(
        w_seq, y, int(step), np.ascontiguousarray(weights, dtype=float), float(h)
    )


def _select(backend):
    if backend is None:
        return _impl
    if backend == "numpy":
        return _fallback
    if backend == "compiled":
        if _impl is _fallback:
            raise RuntimeError("compiled kernels are not available")
        return _impl
    raise ValueError(f"unknown backend {backend!r}")

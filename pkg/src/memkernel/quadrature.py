"""Uniform-grid quadrature rules shared by every time-domain solver.

Two weight schemes are available for integrals over ``[0, n h]`` sampled at
``n + 1`` equispaced nodes:

``"trapezoid"``
    composite trapezoid, second order.
``"gregory"``
    symmetric rules with positive weights: trapezoid, Simpson, 3/8 and
    composite Simpson for ``n < 5`` and the fourth-order Gregory end
    correction ``(3/8, 7/6, 23/24, 1, ..., 1, 23/24, 7/6, 3/8)`` beyond.

Every rule is symmetric, so discrete convolutions of commuting sequences
commute, and every weight is positive, so weighted sums of completely
positive maps stay completely positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SCHEMES = ("trapezoid", "gregory")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * t_max / n_steps`` for ``i = 0..n_steps``."""

    t_max: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t_max) and self.t_max > 0):
            raise ValueError(f"t_max must be positive and finite, got {self.t_max}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def h(self) -> float:
        return self.t_max / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps + 1)

    def __len__(self) -> int:
        return self.n_steps + 1

    def coarsened(self) -> "TimeGrid":
        """Grid with twice the step (requires an even number of steps)."""
        if self.n_steps % 2:
            raise ValueError("coarsening needs an even number of steps")
        return TimeGrid(self.t_max, self.n_steps // 2)

    @classmethod
    def from_times(cls, times, rtol: float = 1e-9) -> "TimeGrid":
        """Build a grid from explicit sample times, rejecting non-uniform input."""
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("need at least two sample times")
        if times[0] != 0.0:
            raise ValueError("grids start at t = 0")
        steps = np.diff(times)
        h = (times[-1] - times[0]) / (times.size - 1)
        if np.any(np.abs(steps - h) > rtol * max(h, 1.0)):
            raise ValueError("grid is not uniform")
        return cls(float(times[-1]), times.size - 1)


@lru_cache(maxsize=None)
def weight_tables(scheme: str) -> tuple[np.ndarray, np.ndarray]:
    """Compact description of the weight rows of a scheme.

    Returns ``(table, ends)``: row ``n`` of ``table`` (for ``n < len(table)``)
    holds the ``n + 1`` weights for ``[0, n h]``; longer rows are ones with
    ``ends`` applied symmetrically at both ends.
    """
    if scheme == "trapezoid":
        table = np.zeros((1, 1))
        ends = np.array([0.5])
    elif scheme == "gregory":
        table = np.zeros((5, 5))
        table[1, :2] = [0.5, 0.5]
        table[2, :3] = [1 / 3, 4 / 3, 1 / 3]
        table[3, :4] = [3 / 8, 9 / 8, 9 / 8, 3 / 8]
        table[4, :5] = [1 / 3, 4 / 3, 2 / 3, 4 / 3, 1 / 3]
        ends = np.array([3 / 8, 7 / 6, 23 / 24])
    else:
        raise ValueError(f"unknown quadrature scheme {scheme!r}; expected one of {SCHEMES}")
    table.setflags(write=False)
    ends.setflags(write=False)
    return table, ends


def weight_row(n: int, scheme: str = "gregory") -> np.ndarray:
    """Weights (in units of ``h``) for ``n + 1`` nodes spanning ``[0, n h]``."""
    table, ends = weight_tables(scheme)
    if n < len(table):
        return table[n, : n + 1].copy()
    row = np.ones(n + 1)
    e = len(ends)
    row[:e] = ends
    row[n - e + 1 :] = ends[::-1]
    return row


def cumulative(values, h: float, scheme: str = "gregory") -> np.ndarray:
    """``Q_i = h * sum_j w^{(i)}_j v_j``: integrals of ``v`` over ``[0, t_i]``.

    Works along the first axis, so ``values`` may carry trailing dimensions.
    """
    v = np.asarray(values)
    n_pts = v.shape[0]
    out = np.zeros_like(v, dtype=np.result_type(v, float))
    table, ends = weight_tables(scheme)
    m = len(table)
    for n in range(1, min(m, n_pts)):
        out[n] = np.tensordot(table[n, : n + 1], v[: n + 1], axes=(0, 0))
    if n_pts > m:
        csum = np.cumsum(v, axis=0)
        n = np.arange(m, n_pts)
        acc = csum[n].copy()
        for k, e in enumerate(ends):
            acc -= (1.0 - e) * v[k]
            acc -= (1.0 - e) * v[n - k]
        out[m:] = acc
    return h * out


def fd_derivative(values, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative along the first axis."""
    v = np.asarray(values)
    n = v.shape[0]
    if n < 5:
        return np.gradient(v, h, axis=0, edge_order=2)
    d = np.empty_like(v, dtype=np.result_type(v, float))
    d[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    # one-sided five-point stencils
    d[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * h)
    d[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * h)
    d[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * h)
    d[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * h)
    return d


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def laplace_weights(n_steps: int, h: float, u: complex, method: str = "filon") -> np.ndarray:
    """Weights ``c_k`` with ``sum_k c_k y(t_k) ~ int_0^{T} exp(-u t) y(t) dt``.

    ``"filon"`` integrates the exponential exactly against a local cubic
    interpolant of ``y`` (error independent of ``u``); ``"trapezoid"`` is the
    plain composite rule on ``exp(-u t) y(t)``.
    """
    n_pts = n_steps + 1
    t = h * np.arange(n_pts)
    if method == "trapezoid":
        w = np.full(n_pts, h, dtype=complex)
        w[0] = w[-1] = h / 2
        return w * np.exp(-u * t)
    if method != "filon":
        raise ValueError(f"unknown Laplace quadrature {method!r}")
    if n_steps < 3:
        raise ValueError("Filon quadrature needs at least three steps")
    k = np.arange(n_steps)
    start = np.clip(k - 1, 0, n_steps - 3)
    offset = (k - start)[:, None]  # interval position inside the 4-node stencil
    x = offset + 0.5 * (_GL_X[None, :] + 1.0)  # (intervals, gl)
    gw = 0.5 * _GL_W
    nodes = np.arange(4.0)
    basis = np.ones((4,) + x.shape)
    for j in range(4):
        for m in range(4):
            if m != j:
                basis[j] *= (x - nodes[m]) / (nodes[j] - nodes[m])
    expo = np.exp(-u * h * (start[:, None] + x))
    contrib = h * np.einsum("g,kg,jkg->kj", gw, expo, basis)
    w = np.zeros(n_pts, dtype=complex)
    np.add.at(w, start[:, None] + np.arange(4)[None, :], contrib)
    return w

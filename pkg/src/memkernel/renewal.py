"""Waiting-time laws, renewal densities and scalar memory functions.

Three families of waiting-time distributions are supported:

* :class:`Exponential` -- memoryless jumps at a constant rate;
* :class:`PhaseType` -- absorption time of a finite Markov chain, initial
  vector ``alpha`` and subgenerator ``A``; densities ``alpha exp(A t) a`` with
  exit vector ``a = -A 1`` and rational Laplace transforms;
* :class:`Tabulated` -- piecewise-linear density on a finite support.

Rational transforms make the scalar kernel ``k`` with ``k^(u) = f^(u)/g^(u)``
available in closed form (delta part plus exponential-polynomial terms).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg

from . import kernels
from .quadrature import TimeGrid, cumulative, weight_row


class UnsupportedLawError(ValueError):
    """The requested operation needs a rational (phase-type) transform."""


def _check_times(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("waiting-time functions are defined for finite t >= 0")
    return t


def _check_u(u):
    u = np.asarray(u, dtype=complex)
    if np.any(u.real <= 0):
        raise ValueError("Laplace transforms are evaluated at Re u > 0")
    return u


class WaitingTimeDistribution:
    """Common interface; see the concrete subclasses."""

    smooth = True

    def density(self, t):
        raise NotImplementedError

    def survival(self, t):
        raise NotImplementedError

    def derivative(self, t):
        """Time derivative of the density."""
        raise NotImplementedError

    def laplace(self, u):
        """``(f^(u), g^(u))`` for ``Re u > 0``."""
        raise NotImplementedError

    def sample(self, rng, size=None):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def phase_type(self):
        """``(alpha, A)`` representation, if the law has one."""
        raise UnsupportedLawError(f"{type(self).__name__} has no phase-type representation")

    def grid_density(self, times) -> np.ndarray:
        """Density sampled for quadrature (midpoint values at jumps)."""
        return np.asarray(self.density(times), dtype=float)

    def endpoint_density(self, times) -> np.ndarray:
        """Left limits ``f(t-)`` (right limit at ``t = 0``).

        Used where ``t`` is the upper end of an integration range, so a jump
        located there must not be averaged.
        """
        return self.grid_density(times)

    @property
    def f0(self) -> float:
        return float(self.grid_density(np.zeros(1))[0])

    def laplace_matrix(self, z):
        """``(f^(Z), g^(Z))`` for a square matrix argument ``Z``."""
        alpha, a_sub = self.phase_type()
        return _ph_laplace_matrix(alpha, a_sub, z)


@dataclass(frozen=True)
class Exponential(WaitingTimeDistribution):
    rate: float

    def __post_init__(self):
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"rate must be positive, got {self.rate}")

    def density(self, t):
        t = _check_times(t)
        return self.rate * np.exp(-self.rate * t)

    def survival(self, t):
        return np.exp(-self.rate * _check_times(t))

    def derivative(self, t):
        return -self.rate * self.density(t)

    def laplace(self, u):
        u = _check_u(u)
        return self.rate / (u + self.rate), 1.0 / (u + self.rate)

    def laplace_matrix(self, z):
        z = np.asarray(z, dtype=complex)
        res = np.linalg.inv(z + self.rate * np.eye(z.shape[0]))
        return self.rate * res, res

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size=size)

    @property
    def mean(self):
        return 1.0 / self.rate

    def phase_type(self):
        return np.array([1.0]), np.array([[-self.rate]])


@dataclass(frozen=True, eq=False)
class PhaseType(WaitingTimeDistribution):
    alpha: np.ndarray
    subgenerator: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        a_sub = np.asarray(self.subgenerator, dtype=float)
        m = alpha.size
        if a_sub.shape != (m, m):
            raise ValueError("subgenerator shape does not match alpha")
        if np.any(alpha < 0) or abs(alpha.sum() - 1) > 1e-12:
            raise ValueError("alpha must be a probability vector")
        off = a_sub - np.diag(np.diag(a_sub))
        if np.any(np.diag(a_sub) >= 0) or np.any(off < 0):
            raise ValueError("subgenerator needs negative diagonal and nonnegative off-diagonal")
        exit_rates = -a_sub.sum(axis=1)
        if np.any(exit_rates < -1e-12) or exit_rates.max() <= 0:
            raise ValueError("subgenerator rows must sum to <= 0 with some absorption")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "subgenerator", a_sub)

    @property
    def exit_vector(self):
        return np.clip(-self.subgenerator.sum(axis=1), 0.0, None)

    def _propagated(self, t):
        t = _check_times(t)
        flat = np.atleast_1d(t).ravel()
        mats = scipy.linalg.expm(flat[:, None, None] * self.subgenerator[None])
        return t, self.alpha @ mats  # (n, m): alpha exp(A t)

    def density(self, t):
        t, row = self._propagated(t)
        return (row @ self.exit_vector).reshape(t.shape)

    def survival(self, t):
        t, row = self._propagated(t)
        return row.sum(axis=1).reshape(t.shape)

    def derivative(self, t):
        t, row = self._propagated(t)
        return (row @ self.subgenerator @ self.exit_vector).reshape(t.shape)

    def laplace(self, u):
        u = _check_u(u)
        flat = np.atleast_1d(u).ravel()
        m = self.alpha.size
        rhs = np.stack([self.exit_vector, np.ones(m)], axis=1)
        out = np.array(
            [self.alpha @ np.linalg.solve(s * np.eye(m) - self.subgenerator, rhs) for s in flat]
        )
        return out[:, 0].reshape(u.shape), out[:, 1].reshape(u.shape)

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = _ph_sample(self.alpha, self.subgenerator, rng, n)
        return out[0] if size is None else out.reshape(size)

    @property
    def mean(self):
        return float(self.alpha @ np.linalg.solve(-self.subgenerator, np.ones(self.alpha.size)))

    def phase_type(self):
        return self.alpha, self.subgenerator


@dataclass(frozen=True, eq=False)
class Tabulated(WaitingTimeDistribution):
    """Piecewise-linear density through ``(grid, values)``, zero elsewhere."""

    grid: np.ndarray
    values: np.ndarray
    mass: float = field(init=False)
    smooth = False

    def __post_init__(self):
        x = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 2:
            raise ValueError("grid and values must be 1-d arrays of equal length >= 2")
        if x[0] < 0 or np.any(np.diff(x) <= 0):
            raise ValueError("grid must be increasing and start at t >= 0")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and nonnegative")
        object.__setattr__(self, "grid", x)
        object.__setattr__(self, "values", v)
        seg = 0.5 * (v[1:] + v[:-1]) * np.diff(x)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))
        object.__setattr__(self, "mass", float(self._cum[-1]))

    @property
    def mass_defect(self) -> float:
        return 1.0 - self.mass

    @property
    def continuous(self) -> bool:
        """Density continuous on ``(0, inf)``."""
        x, v = self.grid, self.values
        return v[-1] == 0 and (x[0] == 0 or v[0] == 0)

    def density(self, t):
        t = _check_times(t)
        return np.interp(t, self.grid, self.values, left=0.0, right=0.0)

    def grid_density(self, times):
        t = _check_times(times)
        x0, x1 = self.grid[0], self.grid[-1]
        inner = np.interp(t, self.grid, self.values)
        right = np.where((t >= x0) & (t < x1), inner, 0.0)
        left = np.where((t > x0) & (t <= x1), inner, 0.0)
        return np.where(t == 0, right, 0.5 * (left + right))

    def endpoint_density(self, times):
        t = _check_times(times)
        x0, x1 = self.grid[0], self.grid[-1]
        inner = np.interp(t, self.grid, self.values)
        left = np.where((t > x0) & (t <= x1), inner, 0.0)
        right = np.where((t >= x0) & (t < x1), inner, 0.0)
        return np.where(t == 0, right, left)

    def _integral(self, t):
        t = np.clip(t, self.grid[0], self.grid[-1])
        k = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.grid.size - 2)
        x, v = self.grid, self.values
        slope = (v[k + 1] - v[k]) / (x[k + 1] - x[k])
        dt = t - x[k]
        return self._cum[k] + v[k] * dt + 0.5 * slope * dt * dt

    def survival(self, t):
        return 1.0 - self._integral(_check_times(t))

    def derivative(self, t):
        t = _check_times(t)
        x, v = self.grid, self.values
        slopes = np.diff(v) / np.diff(x)
        k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 2)
        inside = (t >= x[0]) & (t < x[-1])
        return np.where(inside, slopes[k], 0.0)

    def laplace(self, u):
        u = _check_u(u)
        flat = np.atleast_1d(u).ravel()
        gx, gw = np.polynomial.legendre.leggauss(16)
        a, b = self.grid[:-1], self.grid[1:]
        nodes = 0.5 * (b - a)[:, None] * (gx[None, :] + 1) + a[:, None]
        weights = 0.5 * (b - a)[:, None] * gw[None, :]
        dens = np.interp(nodes, self.grid, self.values)
        fh = np.array([np.sum(weights * dens * np.exp(-s * nodes)) for s in flat])
        fh = fh.reshape(u.shape)
        return fh, (1.0 - fh) / u

    def laplace_matrix(self, z):
        """Gauss-Legendre quadrature per segment against ``exp(-Z t)``."""
        z = np.asarray(z, dtype=complex)
        knots = np.unique(np.concatenate([[0.0], self.grid]))
        gx, gw = np.polynomial.legendre.leggauss(16)
        a, b = knots[:-1], knots[1:]
        nodes = (0.5 * (b - a)[:, None] * (gx[None, :] + 1) + a[:, None]).ravel()
        weights = (0.5 * (b - a)[:, None] * gw[None, :]).ravel()
        expo = scipy.linalg.expm(-nodes[:, None, None] * z[None])
        fh = np.tensordot(weights * self.density(nodes), expo, axes=(0, 0))
        gh = np.tensordot(weights * self.survival(nodes), expo, axes=(0, 0))
        if self.mass_defect != 0:
            tail = scipy.linalg.expm(-knots[-1] * z) @ np.linalg.inv(z)
            gh = gh + self.mass_defect * tail
        return fh, gh

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        r = rng.random(n)
        out = np.full(n, np.inf)
        ok = r < self.mass
        k = np.clip(np.searchsorted(self._cum, r[ok], side="right") - 1, 0, self.grid.size - 2)
        x, v = self.grid, self.values
        slope = (v[k + 1] - v[k]) / (x[k + 1] - x[k])
        rem = r[ok] - self._cum[k]
        disc = np.sqrt(np.maximum(v[k] ** 2 + 2 * slope * rem, 0.0))
        denom = v[k] + disc
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = np.where(denom > 0, 2 * rem / denom, 0.0)
        out[ok] = np.minimum(x[k] + dt, x[k + 1])
        return out[0] if size is None else out.reshape(size)

    @property
    def mean(self):
        if abs(self.mass_defect) > 1e-6:
            return np.inf
        x, v = self.grid, self.values
        dx = np.diff(x)
        # exact integral of t * f(t) for piecewise-linear f
        m = dx * (x[:-1] * (2 * v[:-1] + v[1:]) + x[1:] * (v[:-1] + 2 * v[1:])) / 6
        return float(m.sum())


# ---------------------------------------------------------------- constructors


def erlang(k: int, rate: float) -> PhaseType:
    """Sum of ``k`` independent exponential stages of the given rate."""
    if int(k) != k or k < 1:
        raise ValueError("Erlang order must be a positive integer")
    k = int(k)
    a_sub = -rate * np.eye(k) + rate * np.eye(k, k=1)
    alpha = np.zeros(k)
    alpha[0] = 1.0
    return PhaseType(alpha, a_sub)


def hyperexponential(probs, rates) -> PhaseType:
    probs = np.asarray(probs, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if probs.shape != rates.shape:
        raise ValueError("probs and rates must have equal length")
    return PhaseType(probs / probs.sum(), -np.diag(rates))


def uniform(a: float = 0.0, b: float = 1.0) -> Tabulated:
    if not 0 <= a < b:
        raise ValueError("uniform law needs 0 <= a < b")
    return Tabulated(np.array([a, b]), np.full(2, 1.0 / (b - a)))


# ---------------------------------------------------------------- functional API


def density(w: WaitingTimeDistribution, t):
    return w.density(t)


def survival(w: WaitingTimeDistribution, t):
    return w.survival(t)


def laplace(w: WaitingTimeDistribution, u):
    return w.laplace(u)


def sample(w: WaitingTimeDistribution, rng, size=None):
    return w.sample(rng, size)


def _ph_sample(alpha, a_sub, rng, n):
    m = alpha.size
    exit_rates = np.clip(-a_sub.sum(axis=1), 0.0, None)
    out_rates = -np.diag(a_sub)
    # next-state table: phases 0..m-1, absorption = m
    trans = np.zeros((m, m + 1))
    trans[:, :m] = a_sub - np.diag(np.diag(a_sub))
    trans[:, m] = exit_rates
    cdf = np.cumsum(trans / out_rates[:, None], axis=1)
    cdf[:, -1] = 1.0
    phase = np.minimum(np.searchsorted(np.cumsum(alpha), rng.random(n), side="right"), m - 1)
    t = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    while alive.any():
        idx = np.nonzero(alive)[0]
        p = phase[idx]
        t[idx] += rng.exponential(1.0, idx.size) / out_rates[p]
        r = rng.random(idx.size)
        nxt = (r[:, None] > cdf[p]).sum(axis=1)
        phase[idx] = np.minimum(nxt, m - 1)
        alive[idx[nxt >= m]] = False
    return t


def _ph_laplace_matrix(alpha, a_sub, z):
    """``f^(Z) = (alpha (x) I)(I (x) Z - A (x) I)^{-1}(a (x) I)`` and the survival analogue."""
    z = np.asarray(z, dtype=complex)
    d = z.shape[0]
    m = alpha.size
    eye = np.eye(d)
    big = np.kron(np.eye(m), z) - np.kron(a_sub, eye)
    exit_vec = np.clip(-a_sub.sum(axis=1), 0.0, None)
    rhs = np.concatenate([np.kron(exit_vec[:, None], eye), np.kron(np.ones((m, 1)), eye)], axis=1)
    sol = np.linalg.solve(big, rhs)
    left = np.kron(alpha[None, :], eye)
    out = left @ sol
    return out[:, :d], out[:, d:]


# ---------------------------------------------------------------- renewal specs


def stationary_first(w: WaitingTimeDistribution) -> WaitingTimeDistribution:
    """First-gap law ``g(t) / <tau>`` of a stationary (equilibrium) renewal process."""
    mean = w.mean
    if not np.isfinite(mean):
        raise ValueError("stationary first waiting time needs a finite mean")
    if isinstance(w, Exponential):
        return w
    if isinstance(w, PhaseType):
        alpha1 = np.linalg.solve(-w.subgenerator.T, w.alpha) / mean
        return PhaseType(np.clip(alpha1, 0.0, None) / np.clip(alpha1, 0.0, None).sum(), w.subgenerator)
    if isinstance(w, Tabulated):
        x = w.grid
        fine = np.unique(
            np.concatenate([np.linspace(x[i], x[i + 1], 17) for i in range(x.size - 1)])
        )
        if fine[0] > 0:
            fine = np.concatenate([[0.0], fine])
        return Tabulated(fine, w.survival(fine) / mean)
    raise UnsupportedLawError(f"no stationary first law for {type(w).__name__}")


@dataclass(frozen=True)
class RenewalSpec:
    """Ordinary (``first is None``) or modified renewal process."""

    base: WaitingTimeDistribution
    first: WaitingTimeDistribution | None = None
    stationary: bool = False

    def __post_init__(self):
        if self.stationary:
            if self.first is not None:
                raise ValueError("give either an explicit first law or stationary=True, not both")
            object.__setattr__(self, "first", stationary_first(self.base))
        if not np.isfinite(self.base.mean) and self.stationary:
            raise ValueError("stationary renewal needs a finite mean waiting time")

    @property
    def modified(self) -> bool:
        return self.first is not None

    @property
    def first_law(self) -> WaitingTimeDistribution:
        return self.first if self.first is not None else self.base


def as_renewal(spec) -> RenewalSpec:
    return spec if isinstance(spec, RenewalSpec) else RenewalSpec(spec)


def preferred_scheme(*laws) -> str:
    """Fourth-order rules for smooth densities, trapezoid otherwise."""
    return "gregory" if all(w is None or w.smooth for w in laws) else "trapezoid"


# ---------------------------------------------------------------- scalar kernels


@dataclass(frozen=True, eq=False)
class ScalarKernel:
    """``k(t) = w delta(t) + sum_j exp(z_j t) sum_p c_jp t^p / p!``."""

    delta_weight: float
    poles: np.ndarray
    coeffs: tuple
    laplace_residual: float = 0.0

    def smooth(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for z, cs in zip(self.poles, self.coeffs):
            poly = sum(c * t**p / factorial(p) for p, c in enumerate(cs))
            out += poly * np.exp(z * t)
        return out.real

    def laplace(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        out = np.full(u.shape, self.delta_weight, dtype=complex)
        for z, cs in zip(self.poles, self.coeffs):
            for p, c in enumerate(cs):
                out += c / (u - z) ** (p + 1)
        return out


def _cluster(values, tol):
    values = sorted(np.asarray(values, dtype=complex), key=lambda z: (z.real, z.imag))
    groups = []
    for z in values:
        for g in groups:
            if abs(np.mean(g) - z) <= tol * max(1.0, abs(z)):
                g.append(z)
                break
        else:
            groups.append([z])
    return [(complex(np.mean(g)), len(g)) for g in groups]


def _fit_partial_fractions(func, candidates, const, scale, rng):
    """Least-squares residues for fixed poles; returns (poles, coeffs, residual)."""
    best = None
    for tol in (1e-10, 1e-7, 1e-5, 1e-3):
        groups = _cluster(candidates, tol)
        if any(m > 4 for _, m in groups):
            continue
        n_unknown = sum(m for _, m in groups)
        if n_unknown == 0:
            fit = ([], [], 0.0)
        else:
            r = scale * np.exp(rng.uniform(np.log(0.3), np.log(4.0), 4 * n_unknown + 8))
            theta = rng.uniform(-1.3, 1.3, r.size)
            us = r * np.exp(1j * theta)
            cols = [1.0 / (us - z) ** (k + 1) for z, m in groups for k in range(m)]
            mat = np.stack(cols, axis=1)
            rhs = func(us) - const
            coef, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
            it = iter(coef)
            fit = (
                [z for z, _ in groups],
                [np.array([next(it) for _ in range(m)]) for _, m in groups],
                None,
            )
        poles, coeffs, _ = fit
        check = scale * np.exp(rng.uniform(np.log(0.2), np.log(5.0), 8)) * np.exp(
            1j * rng.uniform(-1.4, 1.4, 8)
        )
        model = ScalarKernel(const, np.array(poles, dtype=complex), tuple(coeffs))
        resid = float(np.abs(model.laplace(check) - func(check)).max())
        if best is None or resid < best[2]:
            best = (poles, coeffs, resid)
        if resid <= 1e-9:
            break
    return best


def _kernel_from_transform(func, candidates, const, scale) -> ScalarKernel:
    rng = np.random.default_rng(20240611)
    poles, coeffs, resid = _fit_partial_fractions(func, candidates, const, scale, rng)
    if resid > 1e-9:
        raise ArithmeticError(f"partial-fraction fit residual {resid:.2e} exceeds 1e-9")
    return ScalarKernel(float(const), np.array(poles, dtype=complex), tuple(coeffs), resid)


def _renewal_poles(w):
    alpha, a_sub = w.phase_type()
    exit_vec = np.clip(-a_sub.sum(axis=1), 0.0, None)
    ev = np.linalg.eigvals(a_sub + np.outer(exit_vec, alpha))
    drop = np.argmin(np.abs(ev))  # f^(0) = 1 always puts a root at u = 0
    return np.delete(ev, drop), a_sub


def scalar_kernel(w: WaitingTimeDistribution) -> ScalarKernel:
    """Kernel with ``k^(u) = f^(u) / g^(u)``."""
    if not isinstance(w, (Exponential, PhaseType)):
        raise UnsupportedLawError("scalar kernels need a rational (phase-type) transform")
    poles, a_sub = _renewal_poles(w)
    scale = 1.0 + max(np.abs(np.linalg.eigvals(a_sub)).max(), 1.0)

    def func(u):
        fh, gh = w.laplace(u)
        return fh / gh

    return _kernel_from_transform(func, poles, w.f0, scale)


def scalar_kernel_first(spec: RenewalSpec) -> ScalarKernel:
    """Kernel with ``k1^(u) = f1^(u) / g^(u)`` of a modified renewal process."""
    w, w1 = spec.base, spec.first_law
    for law in (w, w1):
        if not isinstance(law, (Exponential, PhaseType)):
            raise UnsupportedLawError("scalar kernels need rational (phase-type) transforms")
    poles, a_sub = _renewal_poles(w)
    _, a1 = w1.phase_type()
    cand = np.concatenate([poles, np.linalg.eigvals(a1)])
    scale = 1.0 + max(np.abs(np.linalg.eigvals(a_sub)).max(), np.abs(np.linalg.eigvals(a1)).max())

    def func(u):
        f1h, _ = w1.laplace(u)
        _, gh = w.laplace(u)
        return f1h / gh

    return _kernel_from_transform(func, cand, w1.f0, scale)


# ---------------------------------------------------------------- sprinkling


@dataclass(frozen=True)
class Sprinkling:
    times: np.ndarray
    density: np.ndarray
    first: np.ndarray | None
    residual: float


def _grid_of(grid) -> TimeGrid:
    return grid if isinstance(grid, TimeGrid) else TimeGrid.from_times(grid)


_START = 4
_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def starter_weights(density_fn, h: float, n_start: int = _START) -> np.ndarray:
    """Product-integration weights for the first ``n_start`` steps.

    Row ``i - 1`` holds ``c_ij = int_0^{t_i} f(t_i - s) l_j(s) ds`` where
    ``l_j`` are the Lagrange polynomials on nodes ``0..n_start``; ``f`` is
    evaluated off-grid, so the start is as accurate as the interior rule.
    """
    nodes = np.arange(n_start + 1.0)
    c = np.zeros((n_start, n_start + 1))
    for i in range(1, n_start + 1):
        x = (np.arange(i)[:, None] + 0.5 * (_GL_X[None, :] + 1)).ravel()
        w = np.tile(0.5 * _GL_W, i)
        fx = density_fn(h * (i - x))
        for j in range(n_start + 1):
            lj = np.prod([(x - nodes[m]) / (nodes[j] - nodes[m]) for m in nodes.astype(int) if m != j], axis=0)
            c[i - 1, j] = h * np.sum(w * fx * lj)
    return c


def solve_renewal_equation(forcing, f_vals, h, scheme, start=None, f_end=None):
    """Solve ``S = forcing + f * S`` on a uniform grid (product quadrature).

    ``start`` (from :func:`starter_weights`) replaces the low-order first
    rows by a jointly solved block. ``f_end`` holds left limits used for the
    ``s = 0`` endpoint of each convolution (defaults to ``f_vals``).
    """
    n = len(f_vals)
    f_end = f_vals if f_end is None else f_end
    s = np.zeros(n)
    s[0] = forcing[0]
    first = 1
    if start is not None and n > start.shape[0] + 1:
        k = start.shape[0]
        mat = np.eye(k) - start[:, 1:]
        s[1 : k + 1] = np.linalg.solve(mat, forcing[1 : k + 1] + start[:, 0] * s[0])
        first = k + 1
    for i in range(first, n):
        w = weight_row(i, scheme)
        acc = forcing[i] + h * np.dot(w[1:i], f_vals[i - 1 : 0 : -1] * s[1:i])
        acc += h * w[0] * f_end[i] * s[0]
        s[i] = acc / (1.0 - h * w[i] * f_vals[0])
    return s


def _renewal_residual(s, forcing, f_vals, h, scheme, start=None, f_end=None):
    conv = kernels.conv(f_vals[:, None, None], s[:, None, None], h, scheme)[:, 0, 0].real
    if f_end is not None:
        conv += h * endpoint_weights(len(s), scheme) * (f_end - f_vals) * s[0]
    if start is not None and len(s) > start.shape[0] + 1:
        k = start.shape[0]
        conv[1 : k + 1] = start @ s[: k + 1]
    return float(np.abs(s - forcing - conv).max())


def sprinkling(spec, grid, scheme: str | None = None) -> Sprinkling:
    """Renewal density ``S = f + f * S`` (and ``S1 = f1 + f * S1`` if modified)."""
    spec = as_renewal(spec)
    grid = _grid_of(grid)
    t = grid.times
    scheme = scheme or preferred_scheme(spec.base, spec.first)
    start = starter_weights(spec.base.density, grid.h) if scheme == "gregory" else None
    f = spec.base.grid_density(t)
    f_end = spec.base.endpoint_density(t)
    s = solve_renewal_equation(f, f, grid.h, scheme, start, f_end)
    resid = _renewal_residual(s, f, f, grid.h, scheme, start, f_end)
    s1 = None
    if spec.modified:
        f1 = spec.first.grid_density(t)
        s1 = solve_renewal_equation(f1, f, grid.h, scheme, start, f_end)
        resid = max(resid, _renewal_residual(s1, f1, f, grid.h, scheme, start, f_end))
    return Sprinkling(t, s, s1, resid)


def endpoint_weights(n_pts: int, scheme: str) -> np.ndarray:
    """``w^{(i)}_0``: weight of the endpoint node in the rule over ``[0, t_i]``."""
    return np.array([weight_row(i, scheme)[0] for i in range(n_pts)])


def discrete_survival(w: WaitingTimeDistribution, times, h, scheme) -> np.ndarray:
    """Survival consistent with the quadrature: ``g_i = 1 - Q_i[f]``.

    ``Q_i`` uses midpoint values at interior jumps and the left limit at
    ``t_i`` itself.
    """
    f = w.grid_density(times)
    df = w.endpoint_density(times) - f
    return 1.0 - cumulative(f, h, scheme) - h * endpoint_weights(len(f), scheme) * df

"""Time-domain and Laplace-domain solution of generalized master equations.

The solver handles Volterra integro-differential equations

    y'(t) = A y(t) + int_0^t W(t - s) y(s) ds + I(t) y(0),

where delta components of a memory kernel have been folded into ``A``.
The local part is integrated exactly (exponential integrator); the memory
and inhomogeneous terms are interpolated by a polynomial through the current
and up to three previous nodes (implicit in the newest node) and the memory
integral uses the grid quadrature. ``order=2`` restricts both to the
trapezoid level.

Laplace-domain checks compare a quadrature transform of computed
propagators with closed forms built from ``f^(u - L)``, ``g^(u - L)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np
import scipy.linalg

from . import kernels, liouville
from .quadrature import TimeGrid, fd_derivative, laplace_weights, weight_row
from .renewal import (
    Exponential,
    PhaseType,
    Tabulated,
    UnsupportedLawError,
    as_renewal,
    scalar_kernel,
)
from .series import EvolutionConfig, Semigroup


@dataclass(frozen=True, eq=False)
class VolterraProblem:
    local: np.ndarray
    kernel: np.ndarray
    grid: TimeGrid
    inhomogeneity: np.ndarray | None = None
    scheme: str = "gregory"

    def __post_init__(self):
        a = np.asarray(self.local, dtype=complex)
        w = np.ascontiguousarray(self.kernel, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("local term must be a square matrix")
        if w.shape != (len(self.grid),) + a.shape:
            raise ValueError("kernel must be sampled on every grid point")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(w))):
            raise ValueError("kernel or local term not finite on the grid")
        object.__setattr__(self, "local", a)
        object.__setattr__(self, "kernel", w)
        if self.inhomogeneity is not None:
            inh = np.asarray(self.inhomogeneity, dtype=complex)
            if inh.shape != w.shape or not np.all(np.isfinite(inh)):
                raise ValueError("inhomogeneity must be finite and sampled like the kernel")
            object.__setattr__(self, "inhomogeneity", inh)


@dataclass(frozen=True, eq=False)
class GMEResult:
    grid: TimeGrid
    propagators: np.ndarray
    trace_defect: np.ndarray
    min_choi_eig: np.ndarray
    method: str
    ordering: str = "R"
    flags: tuple = field(default_factory=tuple)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def ok(self) -> bool:
        return not self.flags

    def states(self, rho0) -> np.ndarray:
        rho0 = np.asarray(rho0, dtype=complex)
        vec = self.propagators @ liouville.vectorize(rho0)
        return liouville.devectorize(vec, rho0.shape[0])


# ---------------------------------------------------------------- integrator


def phi_functions(z, k_max: int) -> list:
    """``phi_0(Z) .. phi_kmax(Z)`` with ``phi_k(Z) = int_0^1 e^{(1-s)Z} s^{k-1}/(k-1)! ds``."""
    z = np.asarray(z, dtype=complex)
    d = z.shape[0]
    big = np.zeros(((k_max + 1) * d, (k_max + 1) * d), dtype=complex)
    big[:d, :d] = z
    for k in range(k_max):
        big[k * d : (k + 1) * d, (k + 1) * d : (k + 2) * d] = np.eye(d)
    top = scipy.linalg.expm(big)[:d]
    return [top[:, k * d : (k + 1) * d] for k in range(k_max + 1)]


@lru_cache(maxsize=None)
def _node_inverse(nodes: tuple) -> np.ndarray:
    vander = np.array([[th**m / factorial(m) for m in range(len(nodes))] for th in nodes])
    return np.linalg.inv(vander)


def adams_weights(phis, nodes) -> list:
    """``B_n`` with ``int_0^h e^{(h-s)A} r(t_i + s) ds ~ h sum_n B_n r(t_i + theta_n h)``."""
    inv = _node_inverse(tuple(nodes))
    return [sum(phis[m + 1] * inv[m, n] for m in range(len(nodes))) for n in range(len(nodes))]


def solve_volterra(problem: VolterraProblem, y0=None, order: int = 4, backend=None) -> np.ndarray:
    """Trajectory ``y(t_i)`` (shape ``(N, D, K)``); ``y0`` defaults to the identity."""
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    grid = problem.grid
    h = grid.h
    n_pts = len(grid)
    a = problem.local
    d = a.shape[0]
    y0 = np.eye(d, dtype=complex) if y0 is None else np.asarray(y0, dtype=complex)
    if y0.ndim == 1:
        y0 = y0[:, None]
    scheme = "trapezoid" if order == 2 else problem.scheme
    node_sets = [(1.0, 0.0)] if order == 2 else [(1.0, 0.0), (1.0, 0.0, -1.0), (1.0, 0.0, -1.0, -2.0)]
    phis = phi_functions(h * a, max(len(s) for s in node_sets))
    coeffs = [adams_weights(phis, s) for s in node_sets]
    w_seq = problem.kernel
    inh = problem.inhomogeneity

    y = np.zeros((n_pts,) + y0.shape, dtype=complex)
    r = np.zeros_like(y)
    y[0] = y0
    r[0] = inh[0] @ y0 if inh is not None else 0.0
    eye = np.eye(d)
    for i in range(n_pts - 1):
        b = coeffs[min(i, len(coeffs) - 1)]
        wts = weight_row(i + 1, scheme)
        known = kernels.history(w_seq, y, i + 1, wts, h, backend)
        if inh is not None:
            known = known + inh[i + 1] @ y0
        rhs = phis[0] @ y[i] + h * (b[0] @ known)
        for n in range(1, len(b)):
            rhs += h * (b[n] @ r[i + 1 - n])
        lhs = eye - h * h * wts[-1] * (b[0] @ w_seq[0])
        y[i + 1] = np.linalg.solve(lhs, rhs)
        r[i + 1] = known + h * wts[-1] * (w_seq[0] @ y[i + 1])
    return y


def _result(grid, props, method, ordering, trace_tol):
    tr = liouville.trace_defect(props)
    cmin = liouville.choi_spectrum_min(props)
    flags = []
    if tr.max() > trace_tol:
        flags.append(f"trace defect {tr.max():.2e} exceeds {trace_tol:.0e}")
    return GMEResult(grid, props, tr, cmin, method, ordering, tuple(flags))


# ---------------------------------------------------------------- semigroup ansatz


def semigroup_ansatz_problem(generator, channel, wtd, grid: TimeGrid, ordering: str = "R"):
    """Memory kernel ``exp(L t) k(t) M`` (R) or ``M exp(L t) k(t)`` (L), ``M = E - 1``."""
    if ordering not in ("R", "L"):
        raise ValueError("semigroup ansatz ordering must be 'R' or 'L'")
    if not isinstance(wtd, (Exponential, PhaseType)):
        raise UnsupportedLawError("semigroup ansatz needs a phase-type waiting-time law")
    gen = np.asarray(generator, dtype=complex)
    m = np.asarray(channel, dtype=complex) - np.eye(gen.shape[0])
    k = scalar_kernel(wtd)
    sg = liouville.semigroup_on_grid(gen, len(grid), grid.h)
    ks = k.smooth(grid.times)[:, None, None]
    w = ks * (sg @ m) if ordering == "R" else ks * (m @ sg)
    return VolterraProblem(gen + k.delta_weight * m, w, grid)


def solve_semigroup_ansatz(
    generator, channel, wtd, grid: TimeGrid, ordering: str = "R", order: int = 4, trace_tol: float = 1e-7
) -> GMEResult:
    """Propagators of ``rho' = L rho + int K(t - s) rho(s) ds`` with the semigroup-ansatz kernel."""
    problem = semigroup_ansatz_problem(generator, channel, wtd, grid, ordering)
    props = solve_volterra(problem, order=order)
    return _result(grid, props, "semigroup-ansatz", ordering, trace_tol)


# ---------------------------------------------------------------- W-form


def wform_problem(channel, family_F, family_G, wtd, grid: TimeGrid) -> VolterraProblem:
    """``rho' = int W(t - s) rho(s) ds + I(t) rho(0)`` for the R ordering.

    ``W = d[f F]/dt E`` with the delta part ``f(0) F(0) E`` moved to the
    local term, and ``I = d[g G]/dt``.
    """
    f0 = wtd.f0
    if not np.isfinite(f0):
        raise ValueError("W-form needs a finite density at t = 0")
    if isinstance(wtd, Tabulated) and not wtd.continuous:
        raise ValueError("W-form needs a density without jumps on (0, inf)")
    chan = np.asarray(channel, dtype=complex)
    t = grid.times
    fam_f = family_F.on_grid(grid)
    fam_g = family_G.on_grid(grid)
    f = wtd.density(t)[:, None, None]
    g = wtd.survival(t)[:, None, None]
    analytic = isinstance(wtd, (Exponential, PhaseType))
    if analytic and isinstance(family_F, Semigroup):
        df = wtd.derivative(t)[:, None, None]
        d_ff = df * fam_f + f * (family_F.generator @ fam_f)
    else:
        d_ff = fd_derivative(f * fam_f, grid.h)
    if analytic and isinstance(family_G, Semigroup):
        d_gg = -f * fam_g + g * (family_G.generator @ fam_g)
    else:
        d_gg = fd_derivative(g * fam_g, grid.h)
    return VolterraProblem(f0 * fam_f[0] @ chan, d_ff @ chan, grid, inhomogeneity=d_gg)


def solve_wform_R(
    channel, family_F, family_G, wtd, grid: TimeGrid, order: int = 4, trace_tol: float = 1e-5
) -> GMEResult:
    problem = wform_problem(channel, family_F, family_G, wtd, grid)
    props = solve_volterra(problem, order=order)
    return _result(grid, props, "wform", "R", trace_tol)


# ---------------------------------------------------------------- Laplace domain


def _family_transforms(law, family, u, grid):
    """``(int f F e^{-ut}, int g F e^{-ut})`` for one law and family."""
    if isinstance(family, Semigroup):
        z = u * np.eye(family.size) - family.generator
        return law.laplace_matrix(z)
    maps = family.on_grid(grid)
    c = laplace_weights(grid.n_steps, grid.h, u)
    fh = np.tensordot(c * law.grid_density(grid.times), maps, axes=(0, 0))
    gh = np.tensordot(c * law.survival(grid.times), maps, axes=(0, 0))
    return fh, gh


def closed_form_laplace(cfg: EvolutionConfig, u, ordering: str | None = None) -> np.ndarray:
    """``Phi^(u)`` from the renewal structure.

    R: ``(1 - F^ E)^{-1} G^``; L: ``G^ (1 - E F^)^{-1}``; modified:
    ``G1^ + G^ (1 - E F^)^{-1} E F1^``, where ``F^ = int f F e^{-ut}`` etc.
    """
    ordering = ordering or cfg.ordering
    spec = cfg.renewal
    chan = cfg.channel
    eye = np.eye(chan.shape[0])
    f_hat, _ = _family_transforms(spec.base, cfg.family_F, u, cfg.grid)
    _, g_hat = _family_transforms(spec.base, cfg.family_G, u, cfg.grid)
    if ordering == "R":
        return np.linalg.solve(eye - f_hat @ chan, g_hat)
    left = np.linalg.solve((eye - chan @ f_hat).T, g_hat.T).T  # G^ (1 - E F^)^{-1}
    if ordering == "L":
        return left
    f1_hat, _ = _family_transforms(spec.first, cfg.family_F, u, cfg.grid)
    _, g1_hat = _family_transforms(spec.first, cfg.family_G, u, cfg.grid)
    return g1_hat + left @ chan @ f1_hat


def quadrature_laplace(propagators, grid: TimeGrid, u) -> np.ndarray:
    """``int_0^T e^{-ut} Phi(t) dt`` by Filon quadrature on the grid."""
    c = laplace_weights(grid.n_steps, grid.h, u)
    return np.tensordot(c, propagators, axes=(0, 0))


def kernel_modified_laplace(generator, channel, renewal, u, cond_max: float = 1e12) -> np.ndarray:
    """``K^(u) = L + [1 - M (S^ - S1^)]^{-1} M k1^``, all transforms at ``u - L``.

    ``S^ = f^/(1 - f^)`` and ``S1^ = f1^/(1 - f^)`` are the sprinkling
    transforms, ``k1^ = f1^/g^`` the first-gap kernel and ``M = E - 1``.
    """
    spec = as_renewal(renewal)
    gen = np.asarray(generator, dtype=complex)
    eye = np.eye(gen.shape[0])
    m = np.asarray(channel, dtype=complex) - eye
    first = spec.first_law
    for law in (spec.base, first):
        if not isinstance(law, (Exponential, PhaseType)):
            raise UnsupportedLawError("kernel transforms need phase-type laws")
    z = u * eye - gen
    f_hat, g_hat = spec.base.laplace_matrix(z)
    f1_hat, _ = first.laplace_matrix(z)
    s_diff = np.linalg.solve(eye - f_hat, f_hat - f1_hat)  # functions of Z commute
    k1_hat = np.linalg.solve(g_hat.T, f1_hat.T).T
    bracket = eye - m @ s_diff
    cond = np.linalg.cond(bracket)
    if not np.isfinite(cond) or cond > cond_max:
        raise ArithmeticError(f"1 - M (S^ - S1^) is singular (condition {cond:.2e})")
    return gen + np.linalg.solve(bracket, m @ k1_hat)


@dataclass(frozen=True)
class LaplacePoint:
    u: complex
    residual: float | None
    kernel_residual: float | None
    tail_bound: float
    status: str


def laplace_identity_check(
    result, cfg: EvolutionConfig, u_points, tol: float = 1e-4, tail_tol: float = 1e-8
) -> list:
    """Compare the quadrature transform of ``result.propagators`` with closed forms.

    Points whose truncation tail ``exp(-Re u t_max)`` exceeds ``tail_tol``
    are reported ``"inconclusive"``. For the modified ordering with
    semigroup families the kernel identity ``(u - K^(u)) Phi^(u) = 1`` is
    checked as well.
    """
    ordering = getattr(result, "ordering", cfg.ordering)
    grid = result.grid
    sup = float(np.linalg.norm(result.propagators, ord=2, axis=(1, 2)).max())
    out = []
    for u in u_points:
        u = complex(u)
        if u.real <= 0:
            raise ValueError("Laplace points need Re u > 0")
        tail = float(np.exp(-u.real * grid.t_max))
        if tail >= tail_tol:
            out.append(LaplacePoint(u, None, None, tail * sup / u.real, "inconclusive"))
            continue
        numeric = quadrature_laplace(result.propagators, grid, u)
        exact = closed_form_laplace(cfg, u, ordering)
        resid = float(np.linalg.norm(numeric - exact, ord=2))
        kres = None
        if ordering == "modified" and isinstance(cfg.family_F, Semigroup) and cfg.family_F is cfg.family_G:
            try:
                k_hat = kernel_modified_laplace(cfg.family_F.generator, cfg.channel, cfg.renewal, u)
            except UnsupportedLawError:
                k_hat = None
            if k_hat is not None:
                eye = np.eye(k_hat.shape[0])
                kres = float(np.linalg.norm((u * eye - k_hat) @ numeric - eye, ord=2))
        worst = max(resid, kres or 0.0)
        out.append(LaplacePoint(u, resid, kres, tail * sup / u.real, "pass" if worst <= tol else "fail"))
    return out

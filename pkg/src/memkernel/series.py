"""Propagators of renewal-driven collision dynamics as truncated convolution series.

With a waiting-time density ``f``, survival ``g``, jump channel ``E`` and map
families ``F(t)``, ``G(t)`` (``G(0) = 1``) the two operator orderings are

    Phi_R = sum_n (f F E)^{*n} * (g G),        Phi_L = sum_n (g G) * (E f F)^{*n},

and a modified renewal process with first-gap density ``f1`` gives

    Phi_M = g1 G + sum_{n >= 1} (g G) * (E f F)^{*(n-1)} * (E f1 F).

Every term is a positive-weight quadrature of compositions of CP maps, so
the discrete propagators are CP by construction; trace preservation is exact
when the survival is the discrete complement ``g_i = 1 - Q_i[f]`` of the same
quadrature (see :func:`memkernel.renewal.discrete_survival`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, liouville
from .quadrature import TimeGrid
from .renewal import (
    RenewalSpec,
    as_renewal,
    discrete_survival,
    endpoint_weights,
    preferred_scheme,
)

ORDERINGS = ("R", "L", "modified")


# ---------------------------------------------------------------- map families


@dataclass(frozen=True, eq=False)
class Semigroup:
    """``F(t) = exp(L t)`` for a Lindblad generator ``L``."""

    generator: np.ndarray

    def __post_init__(self):
        gen = np.asarray(self.generator, dtype=complex)
        if gen.ndim != 2 or gen.shape[0] != gen.shape[1] or not np.all(np.isfinite(gen)):
            raise ValueError("generator must be a finite square matrix")
        object.__setattr__(self, "generator", gen)

    @property
    def size(self) -> int:
        return self.generator.shape[0]

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        return liouville.semigroup_on_grid(self.generator, len(grid), grid.h)


@dataclass(frozen=True, eq=False)
class Sampled:
    """Map family tabulated on a uniform grid; members must be CPTP."""

    times: np.ndarray
    maps: np.ndarray
    tol: float = 1e-8

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        maps = np.asarray(self.maps, dtype=complex)
        if maps.ndim != 3 or maps.shape[0] != times.size or maps.shape[1] != maps.shape[2]:
            raise ValueError("maps must have shape (len(times), D, D)")
        TimeGrid.from_times(times)
        if liouville.choi_spectrum_min(maps).min() < -self.tol:
            raise ValueError("sampled family member not CP")
        if liouville.trace_defect(maps).max() > self.tol:
            raise ValueError("sampled family member not trace preserving")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "maps", maps)

    @property
    def size(self) -> int:
        return self.maps.shape[1]

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        if len(grid) != self.times.size or abs(self.times[-1] - grid.t_max) > 1e-12 * grid.t_max:
            raise ValueError("sampled map family does not share the propagation grid")
        return self.maps


def constant_family(dim: int) -> Semigroup:
    """``F(t) = 1``: the zero generator."""
    return Semigroup(np.zeros((dim * dim, dim * dim)))


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True, eq=False)
class EvolutionConfig:
    channel: np.ndarray
    family_F: Semigroup | Sampled
    family_G: Semigroup | Sampled
    renewal: RenewalSpec
    grid: TimeGrid
    ordering: str = "R"
    series_tol: float = 1e-10
    max_order: int = 64
    scheme: str | None = None
    richardson_tol: float = 1e-5
    cp_tol: float = 1e-8

    def __post_init__(self):
        chan = np.asarray(self.channel, dtype=complex)
        object.__setattr__(self, "channel", chan)
        object.__setattr__(self, "renewal", as_renewal(self.renewal))
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        if not self.series_tol > 0:
            raise ValueError("series_tol must be positive")
        if int(self.max_order) != self.max_order or self.max_order < 1:
            raise ValueError("max_order must be a positive integer")
        size = chan.shape[0]
        if chan.shape != (size, size) or self.family_F.size != size or self.family_G.size != size:
            raise ValueError("channel and map families must act on the same Liouville space")
        report = liouville.is_cptp(chan, self.cp_tol)
        if not report.cp:
            raise ValueError(f"channel not CP (min Choi eigenvalue {report.min_choi_eig:.3e})")
        if not report.tp:
            raise ValueError(f"channel not trace preserving (defect {report.trace_defect:.3e})")
        if isinstance(self.family_G, Sampled):
            if np.abs(self.family_G.maps[0] - np.eye(size)).max() > self.cp_tol:
                raise ValueError("family G must start at the identity map")
        if self.ordering == "modified":
            if not self.renewal.modified:
                raise ValueError("modified ordering needs a first waiting-time law or stationary=True")
            if not (isinstance(self.family_F, Semigroup) and isinstance(self.family_G, Semigroup)):
                raise ValueError("modified renewal propagation is implemented for semigroup families only")

    @classmethod
    def semigroup(cls, generator, channel, renewal, grid, **kwargs) -> "EvolutionConfig":
        """Both families equal to ``exp(L t)``."""
        fam = Semigroup(generator)
        return cls(channel, fam, fam, renewal, grid, **kwargs)

    @property
    def dim(self) -> int:
        return liouville.hilbert_dim(self.channel)

    @property
    def wtd(self):
        return self.renewal.base

    @property
    def quadrature(self) -> str:
        return self.scheme or preferred_scheme(self.renewal.base, self.renewal.first)

    def with_grid(self, grid: TimeGrid) -> "EvolutionConfig":
        return replace(self, grid=grid)


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    grid: TimeGrid
    propagators: np.ndarray
    trace_defect: np.ndarray
    min_choi_eig: np.ndarray
    hermiticity_defect: np.ndarray
    truncation_order: np.ndarray
    last_term_norm: np.ndarray
    ordering: str
    scheme: str
    converged: bool
    remainder_bound: float = 0.0
    richardson_deviation: float | None = None
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


# ---------------------------------------------------------------- series


def _norms(terms) -> np.ndarray:
    return np.linalg.norm(terms, ord=2, axis=(1, 2))


def _scaled(values, maps) -> np.ndarray:
    return values[:, None, None] * maps


def _series_parts(cfg: EvolutionConfig, grid: TimeGrid, scheme: str):
    """Sampled densities, survivals and families.

    ``df`` is the left-limit correction at jump points; it only enters the
    first-order term, where the endpoint sample meets ``T_0(0) = 1``.
    """
    spec = cfg.renewal
    t = grid.times
    w0 = grid.h * endpoint_weights(len(grid), scheme)
    parts = {"F": cfg.family_F.on_grid(grid), "G": cfg.family_G.on_grid(grid)}
    for key, law in (("", spec.base), ("1", spec.first)):
        if law is None:
            continue
        parts["f" + key] = law.grid_density(t)
        parts["g" + key] = discrete_survival(law, t, grid.h, scheme)
        parts["df" + key] = w0 * (law.endpoint_density(t) - parts["f" + key])
    return parts


def _terms(cfg: EvolutionConfig, grid: TimeGrid, ordering: str, scheme: str):
    """Yield the series terms ``T_0, T_1, ...`` (each of shape ``(N, D, D)``)."""
    p = _series_parts(cfg, grid, scheme)
    h = grid.h
    chan = cfg.channel
    survive = _scaled(p["g"], p["G"])
    if ordering == "R":
        kern = p["F"] @ chan
        term = survive
        yield term
        term = kernels.conv(_scaled(p["f"], kern), term, h, scheme) + _scaled(p["df"], kern)
        while True:
            yield term
            term = kernels.conv(_scaled(p["f"], kern), term, h, scheme)
    kern = chan @ p["F"]
    if ordering == "L":
        term = survive
        yield term
        term = kernels.conv(term, _scaled(p["f"], kern), h, scheme) + _scaled(p["df"], kern)
        while True:
            yield term
            term = kernels.conv(term, _scaled(p["f"], kern), h, scheme)
    first_jump = _scaled(p["f1"], kern)
    yield _scaled(p["g1"], p["G"])
    yield kernels.conv(survive, first_jump, h, scheme) + _scaled(p["df1"], kern)
    chain = kernels.conv(survive, _scaled(p["f"], kern), h, scheme) + _scaled(p["df"], kern)
    while True:
        yield kernels.conv(chain, first_jump, h, scheme)
        chain = kernels.conv(chain, _scaled(p["f"], kern), h, scheme)


def _sum_series(cfg: EvolutionConfig, grid: TimeGrid, ordering: str):
    scheme = cfg.quadrature
    terms = _terms(cfg, grid, ordering, scheme)
    term = next(terms)
    total = term.copy()
    n_pts = len(grid)
    order = np.zeros(n_pts, dtype=int)
    last = _norms(term)
    done = last < cfg.series_tol
    prev_sup = last.max()
    sup = prev_sup
    n = 0
    while sup >= cfg.series_tol and n < cfg.max_order:
        n += 1
        term = next(terms)
        norms = _norms(term)
        total += term
        active = ~done
        order[active] = n
        last[active] = norms[active]
        done |= norms < cfg.series_tol
        prev_sup, sup = sup, norms.max()
    converged = sup < cfg.series_tol
    bound = 0.0
    if not converged:
        ratio = sup / prev_sup if prev_sup > 0 else 1.0
        bound = float(sup * ratio / (1 - ratio)) if ratio < 1 else float("inf")
    neg_g = _min_survival(cfg, grid, scheme)
    return total, order, last, converged, bound, scheme, neg_g


def _min_survival(cfg, grid, scheme):
    laws = [cfg.renewal.base] + ([cfg.renewal.first] if cfg.renewal.modified else [])
    return min(discrete_survival(w, grid.times, grid.h, scheme).min() for w in laws)


def _propagate(cfg: EvolutionConfig, ordering: str, richardson: bool = True) -> EvolutionResult:
    grid = cfg.grid
    total, order, last, converged, bound, scheme, neg_g = _sum_series(cfg, grid, ordering)
    tr = liouville.trace_defect(total)
    cmin = liouville.choi_spectrum_min(total)
    herm = liouville.hermiticity_defect(total)
    flags = []
    if not converged:
        flags.append(f"series not converged after {cfg.max_order} orders (remainder ~{bound:.2e})")
    if neg_g < -1e-6:  # beyond quadrature error: the density carries more than unit mass
        flags.append(f"discrete survival negative ({neg_g:.2e}); density mass exceeds one")
    if cmin.min() < -1e-7:
        flags.append(f"propagator not CP (min Choi eigenvalue {cmin.min():.2e})")
    if tr.max() > 1e-6:
        flags.append(f"propagator trace defect {tr.max():.2e}")
    dev = None
    if richardson and grid.n_steps % 2 == 0 and grid.n_steps >= 8:
        coarse, *_ = _sum_series(cfg, grid.coarsened(), ordering)
        dev = float(np.abs(coarse - total[::2]).max())
        if dev > cfg.richardson_tol:
            flags.append(f"step halving changes propagators by {dev:.2e} > {cfg.richardson_tol:.0e}")
    return EvolutionResult(
        grid=grid,
        propagators=total,
        trace_defect=tr,
        min_choi_eig=cmin,
        hermiticity_defect=herm,
        truncation_order=order,
        last_term_norm=last,
        ordering=ordering,
        scheme=scheme,
        converged=converged,
        remainder_bound=bound,
        richardson_deviation=dev,
        flags=tuple(flags),
    )


def propagate_R(cfg: EvolutionConfig, richardson: bool = True) -> EvolutionResult:
    """``Phi_R = sum_n (f F E)^{*n} * (g G)``: survival weight on the first interval."""
    return _propagate(cfg, "R", richardson)


def propagate_L(cfg: EvolutionConfig, richardson: bool = True) -> EvolutionResult:
    """``Phi_L = sum_n (g G) * (E f F)^{*n}``: survival weight on the last interval."""
    return _propagate(cfg, "L", richardson)


def propagate_modified(cfg: EvolutionConfig, richardson: bool = True) -> EvolutionResult:
    """Modified renewal propagator; the first gap follows ``f1``."""
    if not cfg.renewal.modified:
        raise ValueError("modified propagation needs a first waiting-time law")
    if not (isinstance(cfg.family_F, Semigroup) and isinstance(cfg.family_G, Semigroup)):
        raise ValueError("modified renewal propagation is implemented for semigroup families only")
    return _propagate(cfg, "modified", richardson)


def propagate(cfg: EvolutionConfig, richardson: bool = True) -> EvolutionResult:
    return {"R": propagate_R, "L": propagate_L, "modified": propagate_modified}[cfg.ordering](
        cfg, richardson
    )


# ---------------------------------------------------------------- counting


def exclusive_density_norm(renewal, n_max: int, t: float, n_steps: int = 2000, scheme=None) -> float:
    """Probability of at most ``n_max`` jumps in ``[0, t]``.

    Sum of the integrated exclusive densities ``p^0 + ... + p^{n_max}``,
    evaluated by discrete convolutions on ``n_steps`` intervals.
    """
    spec = as_renewal(renewal)
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if t == 0:
        return 1.0
    grid = TimeGrid(float(t), n_steps)
    scheme = scheme or preferred_scheme(spec.base, spec.first)
    times = grid.times
    f = spec.base.grid_density(times)[:, None, None]
    g = spec.base.survival(times)
    if spec.modified:
        f1 = spec.first.grid_density(times)[:, None, None]
        total = spec.first.survival(times)[-1]
        chain = f1
    else:
        total = g[-1]
        chain = None
    g_seq = g[:, None, None]
    for n in range(1, n_max + 1):
        if chain is None:
            chain = f
        elif n > 1 or not spec.modified:
            chain = kernels.conv(chain, f, grid.h, scheme)
        total += kernels.conv(chain, g_seq, grid.h, scheme)[-1, 0, 0].real
    return float(total)

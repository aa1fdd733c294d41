"""Classical semi-Markov jump processes.

``pi[n, k]`` is the probability of jumping from ``k`` to ``n`` (unit column
sums) and state ``k`` is left after a sojourn drawn from ``f_k``. The
transition matrix ``T[n, m](t) = P(state n at t | fresh arrival in m at 0)``
solves the first-jump renewal equation

    T(t) = G(t) + int_0^t T(t - s) Pi F(s) ds,   F = diag(f_k), G = diag(g_k),

whose Laplace transform is the familiar ``w^_nk = g^_n pi_nk f^_k / g^_k``
generalized master equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, liouville
from .quadrature import TimeGrid, weight_row
from .renewal import (
    Exponential,
    PhaseType,
    UnsupportedLawError,
    WaitingTimeDistribution,
    discrete_survival,
    endpoint_weights,
    preferred_scheme,
)
from .series import EvolutionConfig, constant_family, propagate_L, propagate_R


@dataclass(frozen=True, eq=False)
class SemiMarkovSpec:
    pi: np.ndarray
    wtds: tuple

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        n = pi.shape[0]
        if pi.ndim != 2 or pi.shape != (n, n):
            raise ValueError("pi must be square")
        if np.any(pi < 0) or np.abs(pi.sum(axis=0) - 1).max() > 1e-12:
            raise ValueError("pi must be column-stochastic (columns sum to one)")
        wtds = self.wtds
        if isinstance(wtds, WaitingTimeDistribution):
            wtds = (wtds,) * n
        wtds = tuple(wtds)
        if len(wtds) != n:
            raise ValueError("need one waiting-time law per state")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "wtds", wtds)

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]


@dataclass(frozen=True, eq=False)
class TransitionSolution:
    times: np.ndarray
    T: np.ndarray
    residual: float
    column_defect: float


def solve_T(spec: SemiMarkovSpec, grid, scheme: str | None = None) -> TransitionSolution:
    """Transition matrices ``T(t_i)`` from the first-jump renewal equation."""
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid.from_times(grid)
    scheme = scheme or preferred_scheme(*spec.wtds)
    t = grid.times
    h = grid.h
    n = spec.n_states
    f = np.stack([w.grid_density(t) for w in spec.wtds], axis=1)  # (N, n)
    f_end = np.stack([w.endpoint_density(t) for w in spec.wtds], axis=1)
    g = np.stack([discrete_survival(w, t, h, scheme) for w in spec.wtds], axis=1)
    kern = spec.pi[None] * f[:, None, :]  # Pi F(t_i)
    dkern = spec.pi[None] * (f_end - f)[:, None, :]
    kern_t = np.ascontiguousarray(np.swapaxes(kern, 1, 2), dtype=complex)
    w0 = endpoint_weights(len(grid), scheme)
    out = np.zeros((len(grid), n, n), dtype=complex)  # transposes T(t_i)^T
    out[0] = np.diag(g[0])
    eye = np.eye(n)
    for i in range(1, len(grid)):
        wts = weight_row(i, scheme)
        hist = kernels.history(kern_t, out, i, wts, h)
        hist += h * w0[i] * dkern[i].T @ out[0]
        lhs = eye - h * wts[-1] * kern_t[0]
        out[i] = np.linalg.solve(lhs, np.diag(g[i]) + hist)
    T = np.swapaxes(out, 1, 2).real.copy()
    conv = kernels.conv(T, kern, h, scheme).real
    conv += h * w0[:, None, None] * (T[0] @ dkern)
    resid = float(np.abs(T - g[:, None, :] * eye - conv).max())
    defect = float(np.abs(T.sum(axis=1) - 1).max())
    return TransitionSolution(t, T, resid, defect)


def markov_generator(spec: SemiMarkovSpec) -> np.ndarray:
    """``Q[n, k] = lambda_k (pi[n, k] - delta_nk)`` for exponential sojourns."""
    if not all(isinstance(w, Exponential) for w in spec.wtds):
        raise UnsupportedLawError("a rate matrix exists only for exponential sojourns")
    rates = np.array([w.rate for w in spec.wtds])
    return (spec.pi - np.eye(spec.n_states)) * rates[None, :]


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class StatePath:
    jump_times: np.ndarray
    states: np.ndarray

    def state_at(self, t: float) -> int:
        return int(self.states[np.searchsorted(self.jump_times, t, side="right") - 1])


def gillespie_sample(spec: SemiMarkovSpec, t: float, rng, initial: int) -> StatePath:
    """One path on ``[0, t]``; ``jump_times[0] = 0`` marks the initial arrival."""
    times = [0.0]
    states = [int(initial)]
    clock = 0.0
    cdf = np.cumsum(spec.pi, axis=0)
    while True:
        k = states[-1]
        clock += float(spec.wtds[k].sample(rng))
        if clock > t:
            break
        nxt = int(min(np.searchsorted(cdf[:, k], rng.random(), side="right"), spec.n_states - 1))
        times.append(clock)
        states.append(nxt)
    return StatePath(np.array(times), np.array(states))


def occupation(spec: SemiMarkovSpec, times, initial: int, n_paths: int, rng) -> np.ndarray:
    """Empirical state distribution at each of ``times`` over ``n_paths`` paths."""
    times = np.asarray(times, dtype=float)
    n = spec.n_states
    cdf = np.cumsum(spec.pi, axis=0)
    state = np.full(n_paths, int(initial))
    clock = np.zeros(n_paths)
    record = np.full((times.size, n_paths), -1)
    active = np.ones(n_paths, dtype=bool)
    while active.any():
        idx = np.nonzero(active)[0]
        stay = np.empty(idx.size)
        for k in range(n):
            m = state[idx] == k
            if m.any():
                stay[m] = spec.wtds[k].sample(rng, int(m.sum()))
        leave = clock[idx] + stay
        covered = (times[:, None] >= clock[idx][None, :]) & (times[:, None] < leave[None, :])
        rec = record[:, idx]
        rec[covered] = np.broadcast_to(state[idx], covered.shape)[covered]
        record[:, idx] = rec
        clock[idx] = leave
        done = leave > times[-1]
        active[idx[done]] = False
        go = idx[~done]
        r = rng.random(go.size)
        state[go] = np.minimum((r[None, :] > cdf[:, state[go]]).sum(axis=0), n - 1)
    return np.stack([(record == k).mean(axis=1) for k in range(n)], axis=1)


# ---------------------------------------------------------------- quantum embedding


def _same_law(a, b) -> bool:
    if a is b:
        return True
    if isinstance(a, Exponential) and isinstance(b, Exponential):
        return a.rate == b.rate
    if isinstance(a, PhaseType) and isinstance(b, PhaseType):
        return np.array_equal(a.alpha, b.alpha) and np.array_equal(a.subgenerator, b.subgenerator)
    return False


@dataclass(frozen=True)
class EmbeddingCheck:
    deviation_R: float
    deviation_L: float
    ordering_gap: float

    @property
    def max_deviation(self) -> float:
        return max(self.deviation_R, self.deviation_L)


def quantum_classical_embedding_check(spec: SemiMarkovSpec, grid, scheme: str | None = None) -> EmbeddingCheck:
    """Compare populations of the quantum propagators with ``solve_T``.

    The channel is ``rho -> sum pi_nk <k|rho|k> |n><n|`` and both map
    families are the identity, so every factor is diagonal and R and L
    orderings must coincide.
    """
    law = spec.wtds[0]
    if not all(_same_law(law, w) for w in spec.wtds):
        raise UnsupportedLawError("the quantum construction carries a single waiting-time law")
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid.from_times(grid)
    classical = solve_T(spec, grid, scheme).T
    n = spec.n_states
    diag = np.arange(n) * (n + 1)
    fam = constant_family(n)
    chan = liouville.transition_channel(spec.pi)
    devs = []
    props = []
    for prop in (propagate_R, propagate_L):
        cfg = EvolutionConfig(chan, fam, fam, law, grid, ordering="R", scheme=scheme)
        res = prop(cfg, richardson=False)
        pops = res.propagators[:, diag][:, :, diag].real
        devs.append(float(np.abs(pops - classical).max()))
        props.append(res.propagators)
    gap = float(np.abs(props[0] - props[1]).max())
    return EmbeddingCheck(devs[0], devs[1], gap)

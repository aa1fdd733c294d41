"""Trajectory sampling of renewal-driven collision dynamics.

Each trajectory is a realization of the jump times together with the
composition of maps they select:

* L and modified ordering: a forward renewal sequence from ``t = 0`` (first
  gap from ``f1`` when modified); after gap ``s_k`` the state becomes
  ``E F(s_k) sigma``, and the open final interval contributes ``G``.
* R ordering: gaps are read backwards from the evaluation time ``t``; the
  state is ``F(s_1) E ... F(s_n) E G(t - s_1 - ... - s_n) rho0``, so the
  survival factor sits on the first interval.

Randomness comes from counter-based Philox streams keyed by
``(seed, block)``; blocks have a fixed size and are reduced in index order,
so estimates are bit-identical for any number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import liouville
from .quadrature import TimeGrid
from .series import EvolutionConfig, Semigroup


@dataclass(frozen=True, eq=False)
class Trajectory:
    jump_times: np.ndarray
    n_jumps: int
    final_state: np.ndarray


@dataclass(frozen=True, eq=False)
class EnsembleEstimate:
    times: np.ndarray
    mean_state: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    n_trajectories: int
    seed: int
    mean_jumps: np.ndarray

    def agreement(self, reference, nsigma: float = 4.0, atol: float = 1e-7) -> float:
        """Fraction of real/imaginary components with ``|mean - ref| <= max(nsigma * se, atol)``."""
        ref = np.asarray(reference)
        ok_re = np.abs(self.mean_state.real - ref.real) <= np.maximum(nsigma * self.stderr_re, atol)
        ok_im = np.abs(self.mean_state.imag - ref.imag) <= np.maximum(nsigma * self.stderr_im, atol)
        return float(np.concatenate([ok_re.ravel(), ok_im.ravel()]).mean())


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Independent stream for one block of trajectories."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))


def worker_count() -> int:
    env = os.environ.get("MEMKERNEL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------- map application


class _FamilyAction:
    """Applies ``F(s)`` to a batch of vectorized states with per-row ``s``."""

    def __init__(self, family, grid: TimeGrid, cond_max: float = 1e8):
        self.mode = "sampled"
        if isinstance(family, Semigroup):
            gen = family.generator
            if not gen.any():
                self.mode = "identity"
                return
            evals, vecs = np.linalg.eig(gen)
            if np.linalg.cond(vecs) < cond_max:
                self.mode = "eigen"
                self.evals = evals
                self.vecs = vecs
                self.inv = np.linalg.inv(vecs)
            else:
                self.mode = "expm"
                self.gen = gen
        else:
            self.maps = family.on_grid(grid)
            self.h = grid.h

    def __call__(self, s, v):
        if self.mode == "identity":
            return v.copy()  # callers update the result in place
        if self.mode == "eigen":
            coef = (v @ self.inv.T) * np.exp(np.outer(s, self.evals))
            return coef @ self.vecs.T
        if self.mode == "expm":
            mats = scipy.linalg.expm(s[:, None, None] * self.gen[None])
            return np.einsum("bij,bj->bi", mats, v)
        idx = np.clip(np.rint(s / self.h).astype(int), 0, len(self.maps) - 1)
        return np.einsum("bij,bj->bi", self.maps[idx], v)


def _gap_matrix(first, law, horizon: float, rng, size: int) -> np.ndarray:
    """Gaps ``(size, K)`` whose row sums all exceed ``horizon``."""
    mean = law.mean
    k0 = 8 + (int(np.ceil(1.5 * horizon / mean)) if np.isfinite(mean) and mean > 0 else 8)
    cols = [first.sample(rng, (size, 1)), law.sample(rng, (size, k0 - 1))]
    gaps = np.concatenate(cols, axis=1)
    while np.min(gaps.sum(axis=1)) <= horizon:
        gaps = np.concatenate([gaps, law.sample(rng, (size, k0))], axis=1)
    return gaps


def _block(cfg: EvolutionConfig, times, rho_vec, size: int, rng, act_f, act_g):
    spec = cfg.renewal
    first = spec.first if cfg.ordering == "modified" else spec.base
    gaps = _gap_matrix(first, spec.base, times[-1], rng, size)
    cum = np.cumsum(gaps, axis=1)
    chan_t = cfg.channel.T
    d2 = rho_vec.size
    pieces = [[] for _ in times]
    jumps = np.zeros(len(times))
    counts = np.stack([(cum <= t).sum(axis=1) for t in times])  # (E, size)
    zero = np.zeros((size, 1))
    jump_at = np.concatenate([zero, cum], axis=1)  # time of the k-th jump, k = 0..K
    base = np.broadcast_to(rho_vec, (size, d2)).astype(complex)

    def accumulate(e, states):
        pieces[e].append(states)

    if cfg.ordering == "R":
        for e, t in enumerate(times):
            n = counts[e]
            rest = t - jump_at[np.arange(size), n]
            v = act_g(rest, base)
            for k in range(n.max(), 0, -1):
                m = n >= k
                v[m] = act_f(gaps[m, k - 1], v[m] @ chan_t)
            accumulate(e, v)
            jumps[e] = n.sum()
        return _moments(pieces, size) + (jumps,)

    sigma = base.copy()
    k_max = counts.max()
    for k in range(k_max + 1):
        for e, t in enumerate(times):
            m = counts[e] == k
            if m.any():
                accumulate(e, act_g(t - jump_at[m, k], sigma[m]))
        if k < k_max:
            alive = counts[-1] > k
            sigma[alive] = act_f(gaps[alive, k], sigma[alive]) @ chan_t
    jumps[:] = counts.sum(axis=1)
    return _moments(pieces, size) + (jumps,)


def _moments(pieces, size):
    """Block mean and centered second moments (real and imaginary parts)."""
    states = np.stack([np.concatenate(p, axis=0) for p in pieces])  # (E, size, D)
    mean = states.mean(axis=1)
    dev = states - mean[:, None, :]
    return mean, (dev.real**2).sum(axis=1), (dev.imag**2).sum(axis=1)


def _eval_times(grid, cfg):
    if grid is None:
        return cfg.grid.times
    if isinstance(grid, TimeGrid):
        return grid.times
    times = np.asarray(grid, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("evaluation times must be increasing and nonnegative")
    return times


def ensemble_average(
    cfg: EvolutionConfig,
    rho0,
    n_traj: int,
    seed: int = 0,
    grid=None,
    block_size: int | None = None,
    workers: int | None = None,
) -> EnsembleEstimate:
    """Average of ``n_traj`` trajectories at the evaluation times.

    ``grid`` defaults to the configuration grid; Sampled families require
    the evaluation times to lie on it (gap lengths are snapped to the grid).
    """
    if n_traj < 100:
        raise ValueError("ensemble averages need at least 100 trajectories")
    times = _eval_times(grid, cfg)
    rho0 = liouville.check_density_matrix(rho0)
    rho_vec = liouville.vectorize(rho0)
    d2 = rho_vec.size
    if block_size is None:
        block_size = 4096 if d2 <= 16 else 1024
    act_f = _FamilyAction(cfg.family_F, cfg.grid)
    act_g = _FamilyAction(cfg.family_G, cfg.grid)
    sizes = [block_size] * (n_traj // block_size)
    if n_traj % block_size:
        sizes.append(n_traj % block_size)

    def run(b):
        return _block(cfg, times, rho_vec, sizes[b], block_rng(seed, b), act_f, act_g)

    n_workers = min(workers or worker_count(), len(sizes))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    # ordered pairwise combination of block moments (Chan et al.)
    count = 0
    mean = np.zeros((len(times), d2), dtype=complex)
    m2_re = np.zeros((len(times), d2))
    m2_im = np.zeros((len(times), d2))
    jumps = np.zeros(len(times))
    for size, (b_mean, b_re, b_im, b_jumps) in zip(sizes, parts):
        delta = b_mean - mean
        new = count + size
        m2_re += b_re + delta.real**2 * count * size / new
        m2_im += b_im + delta.imag**2 * count * size / new
        mean = mean + delta * size / new
        count = new
        jumps += b_jumps
    var_re = m2_re / (n_traj - 1)
    var_im = m2_im / (n_traj - 1)
    d = rho0.shape[0]
    return EnsembleEstimate(
        times=times,
        mean_state=liouville.devectorize(mean, d),
        stderr_re=liouville.devectorize(np.sqrt(var_re / n_traj), d).real,
        stderr_im=liouville.devectorize(np.sqrt(var_im / n_traj), d).real,
        n_trajectories=n_traj,
        seed=seed,
        mean_jumps=jumps / n_traj,
    )


def sample_trajectory(cfg: EvolutionConfig, t: float, rng, rho0) -> Trajectory:
    """One realization up to time ``t`` (see the module docstring for the ordering rules)."""
    spec = cfg.renewal
    first = spec.first if cfg.ordering == "modified" else spec.base
    gaps = _gap_matrix(first, spec.base, t, rng, 1)[0]
    cum = np.cumsum(gaps)
    n = int((cum <= t).sum())
    act_f = _FamilyAction(cfg.family_F, cfg.grid)
    act_g = _FamilyAction(cfg.family_G, cfg.grid)
    v = liouville.vectorize(liouville.check_density_matrix(rho0))[None].astype(complex)
    chan_t = cfg.channel.T
    if cfg.ordering == "R":
        jump_times = np.sort(t - cum[:n])
        v = act_g(np.array([t - (cum[n - 1] if n else 0.0)]), v)
        for k in range(n, 0, -1):
            v = act_f(gaps[k - 1 : k], v @ chan_t)
    else:
        jump_times = cum[:n]
        for k in range(n):
            v = act_f(gaps[k : k + 1], v) @ chan_t
        v = act_g(np.array([t - (cum[n - 1] if n else 0.0)]), v)
    state = liouville.devectorize(v[0], int(round(np.sqrt(v.shape[1]))))
    return Trajectory(jump_times, n, state)


def jump_count_samples(cfg: EvolutionConfig, t: float, n_samples: int, seed: int = 0) -> np.ndarray:
    """Number of jumps in ``[0, t]`` for ``n_samples`` independent realizations."""
    spec = cfg.renewal
    first = spec.first if cfg.ordering == "modified" else spec.base
    out = []
    block = 4096
    for b in range(-(-n_samples // block)):
        size = min(block, n_samples - b * block)
        gaps = _gap_matrix(first, spec.base, t, block_rng(seed, b), size)
        out.append((np.cumsum(gaps, axis=1) <= t).sum(axis=1))
    return np.concatenate(out)

"""States, channels and generators in Liouville (column-stacked) form.

Conventions
-----------
A density matrix ``rho`` (d x d) is vectorized by stacking columns, so the map
``rho -> A rho B^dagger`` is the d^2 x d^2 matrix ``kron(conj(B), A)``.
Superoperators are plain complex ndarrays of shape ``(d**2, d**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

DEFAULT_TOL = 1e-8


def vectorize(rho) -> np.ndarray:
    """Column-stack a d x d matrix into a length d^2 vector."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    return rho.reshape(-1, order="F")


def devectorize(vec, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec)
    if dim is None:
        dim = int(round(np.sqrt(vec.shape[-1])))
    if dim * dim != vec.shape[-1]:
        raise ValueError(f"length {vec.shape[-1]} is not a perfect square")
    # C-order reshape gives [..., col, row]
    return np.swapaxes(vec.reshape(vec.shape[:-1] + (dim, dim)), -1, -2)


def hilbert_dim(superop) -> int:
    n = np.shape(superop)[-1]
    d = int(round(np.sqrt(n)))
    if d * d != n:
        raise ValueError(f"superoperator size {n} is not a square dimension")
    return d


def sandwich(a, b=None) -> np.ndarray:
    """Superoperator of ``rho -> a rho b^dagger`` (``b`` defaults to ``a``)."""
    a = np.asarray(a, dtype=complex)
    b = a if b is None else np.asarray(b, dtype=complex)
    return np.kron(b.conj(), a)


def identity_map(dim: int) -> np.ndarray:
    return np.eye(dim * dim, dtype=complex)


def apply(superop, rho) -> np.ndarray:
    """Act with a superoperator on a density matrix."""
    rho = np.asarray(rho)
    return devectorize(np.asarray(superop) @ vectorize(rho), rho.shape[0])


def check_density_matrix(rho, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Validate and return ``rho`` as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density matrix has non-finite entries")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real:.3g}, not 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise ValueError("density matrix has negative eigenvalues")
    return rho


@dataclass(frozen=True)
class LindbladSpec:
    """Hamiltonian (units of inverse time, hbar = 1) plus rated jump operators."""

    hamiltonian: np.ndarray
    jump_ops: list = field(default_factory=list)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("Hamiltonian must be square")
        if np.abs(h - h.conj().T).max() > DEFAULT_TOL:
            raise ValueError("Hamiltonian is not Hermitian")
        jumps = []
        for op, rate in self.jump_ops:
            op = np.asarray(op, dtype=complex)
            if op.shape != h.shape:
                raise ValueError("jump operator shape does not match the Hamiltonian")
            if not np.isfinite(rate) or rate < 0:
                raise ValueError(f"jump rates must be nonnegative, got {rate}")
            jumps.append((op, float(rate)))
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "jump_ops", jumps)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


def lindblad_generator(spec: LindbladSpec) -> np.ndarray:
    """Liouville matrix of ``-i[H, rho] + sum_k r_k (J rho J^+ - {J^+ J, rho}/2)``."""
    h = spec.hamiltonian
    eye = np.eye(spec.dim)
    gen = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for op, rate in spec.jump_ops:
        if rate == 0:
            continue
        jj = op.conj().T @ op
        gen += rate * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, jj) - 0.5 * np.kron(jj.T, eye))
    return gen


def expm(superop, t: float = 1.0) -> np.ndarray:
    """``exp(t S)`` by scaling and squaring with Pade approximants."""
    s = np.asarray(superop, dtype=complex)
    if not np.isfinite(t) or not np.all(np.isfinite(s)):
        raise ValueError("matrix exponential of non-finite input")
    return scipy.linalg.expm(t * s)


def semigroup_on_grid(generator, n_points: int, h: float) -> np.ndarray:
    """``exp(L t_i)`` for ``t_i = i h`` by repeated multiplication."""
    gen = np.asarray(generator, dtype=complex)
    step = expm(gen, h)
    out = np.empty((n_points,) + gen.shape, dtype=complex)
    out[0] = np.eye(gen.shape[0])
    for i in range(1, n_points):
        out[i] = step @ out[i - 1]
    return out


def choi_of(superop) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) S(|i><j|)`` (input factor first)."""
    s = np.asarray(superop)
    batch = s.shape[:-2]
    d = hilbert_dim(s)
    # s[..., k + d l, i + d j] -> s4[..., l, k, j, i]
    s4 = s.reshape(batch + (d, d, d, d))
    choi = np.moveaxis(s4, (-4, -3, -2, -1), (-1, -3, -2, -4))
    return choi.reshape(batch + (d * d, d * d))


def from_choi(choi) -> np.ndarray:
    """Inverse of :func:`choi_of`."""
    c = np.asarray(choi)
    d = hilbert_dim(c)
    c4 = c.reshape(c.shape[:-2] + (d, d, d, d))
    s4 = np.moveaxis(c4, (-1, -3, -2, -4), (-4, -3, -2, -1))
    return s4.reshape(c.shape[:-2] + (d * d, d * d))


@dataclass(frozen=True)
class CPTPReport:
    min_choi_eig: float
    trace_defect: float
    hermiticity_defect: float
    tol: float

    @property
    def cp(self) -> bool:
        return self.min_choi_eig >= -self.tol

    @property
    def tp(self) -> bool:
        return self.trace_defect <= self.tol

    @property
    def cptp(self) -> bool:
        return self.cp and self.tp

    def __bool__(self):
        return self.cptp


def trace_defect(superop) -> np.ndarray:
    """``max |Tr S(|i><j|) - delta_ij|``; zero exactly for trace-preserving maps."""
    s = np.asarray(superop)
    d = hilbert_dim(s)
    tr = vectorize(np.eye(d)).conj()
    return np.abs(tr @ s - tr).max(axis=-1)


def choi_spectrum_min(superop) -> np.ndarray:
    """Smallest eigenvalue of the Hermitian part of the Choi matrix."""
    c = choi_of(superop)
    herm = 0.5 * (c + np.swapaxes(c, -1, -2).conj())
    return np.linalg.eigvalsh(herm)[..., 0]


def hermiticity_defect(superop) -> np.ndarray:
    c = choi_of(superop)
    return np.abs(c - np.swapaxes(c, -1, -2).conj()).max(axis=(-2, -1))


def is_cptp(superop, tol: float = DEFAULT_TOL) -> CPTPReport:
    """Complete positivity and trace preservation diagnostics."""
    s = np.asarray(superop)
    return CPTPReport(
        min_choi_eig=float(choi_spectrum_min(s)),
        trace_defect=float(trace_defect(s)),
        hermiticity_defect=float(hermiticity_defect(s)),
        tol=tol,
    )


# ---------------------------------------------------------------- channels

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|, |1> excited


def kraus_channel(kraus_ops) -> np.ndarray:
    ops = [np.asarray(k, dtype=complex) for k in kraus_ops]
    if not ops:
        raise ValueError("empty Kraus list")
    return sum(sandwich(k) for k in ops)


def unitary_channel(u) -> np.ndarray:
    return sandwich(u)


def pauli_conjugation(axis: str) -> np.ndarray:
    return sandwich(PAULI[axis.lower()])


def depolarizing(p: float, dim: int = 2) -> np.ndarray:
    """``rho -> (1 - p) rho + p Tr(rho) I/d``."""
    if not 0 <= p <= 1:
        raise ValueError("depolarizing probability outside [0, 1]")
    eye = vectorize(np.eye(dim))
    return (1 - p) * identity_map(dim) + p * np.outer(eye, eye.conj()) / dim


def transpose_map(dim: int) -> np.ndarray:
    """The (positive but not completely positive) transposition."""
    s = np.zeros((dim * dim, dim * dim), dtype=complex)
    for i in range(dim):
        for j in range(dim):
            s[j + dim * i, i + dim * j] = 1
    return s


def transition_channel(pi) -> np.ndarray:
    """``rho -> sum_nk pi[n, k] <k|rho|k> |n><n|`` for a column-stochastic ``pi``."""
    pi = np.asarray(pi, dtype=float)
    n = pi.shape[0]
    if pi.shape != (n, n) or np.any(pi < 0) or np.abs(pi.sum(axis=0) - 1).max() > 1e-12:
        raise ValueError("pi must be a column-stochastic matrix")
    s = np.zeros((n * n, n * n), dtype=complex)
    diag = np.arange(n) * (n + 1)
    s[np.ix_(diag, diag)] = pi
    return s


def destroy(n: int) -> np.ndarray:
    """Annihilation operator on the Fock states ``0..n-1``."""
    return np.diag(np.sqrt(np.arange(1, n)), 1).astype(complex)


def number_op(n: int) -> np.ndarray:
    return np.diag(np.arange(n)).astype(complex)


def field_damping(n: int, kappa: float, n_thermal: float = 0.0) -> LindbladSpec:
    """Cavity-mode damping towards a thermal state, truncated to ``n`` levels."""
    a = destroy(n)
    jumps = [(a, kappa * (n_thermal + 1))]
    if n_thermal > 0:
        jumps.append((a.conj().T, kappa * n_thermal))
    return LindbladSpec(np.zeros((n, n)), jumps)


def jc_collision_channel(
    coupling: float,
    tau_int: float,
    field_dim: int,
    atom_state=None,
    detuning: float = 0.0,
    return_leakage: bool = False,
):
    """Field channel of one Jaynes-Cummings atom passage.

    The atom (basis ``|g>, |e>``, default state ``|e><e|``) and the field,
    embedded in ``field_dim + 1`` Fock levels, evolve under
    ``H = coupling (sigma_+ a + sigma_- a^+) + detuning |e><e|`` for
    ``tau_int``; the atom is traced out and population reaching the extra
    level ``|field_dim>`` is folded back onto ``|field_dim - 1>``. Every step
    is CPTP, so the result is CPTP on the truncated space. With
    ``return_leakage`` the largest extra-level population over Fock inputs is
    returned too.
    """
    if int(field_dim) != field_dim or field_dim < 2:
        raise ValueError("field_dim must be an integer >= 2")
    n = int(field_dim)
    m = n + 1
    if atom_state is None:
        atom_state = np.diag([0.0, 1.0])
    atom_state = check_density_matrix(atom_state)
    if atom_state.shape != (2, 2):
        raise ValueError("atom_state must be 2 x 2")
    a = destroy(m)
    sp = np.array([[0, 0], [1, 0]], dtype=complex)  # |e><g|
    h = coupling * (np.kron(sp, a) + np.kron(sp.conj().T, a.conj().T))
    h += detuning * np.kron(np.diag([0.0, 1.0]), np.eye(m))
    u = scipy.linalg.expm(-1j * tau_int * h)

    # Kraus operators K_{ab} = sqrt(p_b) <a| U |b'> with atom_state = sum_b p_b |b'><b'|
    p, vecs = np.linalg.eigh(atom_state)
    u4 = u.reshape(2, m, 2, m)
    iso = np.eye(m, n)
    kraus_ext = []
    for b in range(2):
        if p[b] <= 0:
            continue
        inner = np.einsum("aibj,b->aij", u4, vecs[:, b])
        for a_idx in range(2):
            kraus_ext.append(np.sqrt(p[b]) * inner[a_idx] @ iso)
    # fold the extra level back: Kraus P (projector) and |n-1><n|
    fold = [np.eye(n, m), np.zeros((n, m))]
    fold[1][n - 1, n] = 1.0
    kraus = [f @ k for f in fold for k in kraus_ext]
    chan = kraus_channel(kraus)
    if not return_leakage:
        return chan
    leak = max(
        float(sum(abs(k[n, j]) ** 2 for k in kraus_ext)) for j in range(n)
    )
    return chan, leak


def markov_generator(generator, channel, rate: float) -> np.ndarray:
    """``L + rate (E - 1)``: generator of Poissonian jumps between semigroup stretches."""
    gen = np.asarray(generator, dtype=complex)
    return gen + rate * (np.asarray(channel) - np.eye(gen.shape[0]))

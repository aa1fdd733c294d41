"""Scenario files: JSON documents validated against ``schema.json``.

Errors carry the line of the offending value, found by a small
position-tracking pass over the source text.
"""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .. import liouville, renewal
from ..quadrature import TimeGrid
from ..series import EvolutionConfig, Semigroup

DEFAULT_TOLERANCES = {"cross_method": 1e-4, "laplace": 1e-4, "trace": 1e-6, "cp": 1e-7}


class ConfigError(Exception):
    """Invalid scenario; ``line`` points into the source file when known."""

    def __init__(self, message: str, source: str | None = None, line: int | None = None):
        self.message = message
        self.source = source
        self.line = line
        where = f"{source}:{line}: " if source and line else (f"{source}: " if source else "")
        super().__init__(where + message)


# ---------------------------------------------------------------- positions

_NUMBER = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][-+]?\d+)?")
_WS = re.compile(r"\s*")


def value_positions(text: str) -> dict:
    """Map JSON paths (tuples of keys and indices) to character offsets of their values."""
    out = {}

    def skip(i):
        return _WS.match(text, i).end()

    def parse(i, path):
        i = skip(i)
        out[path] = i
        ch = text[i]
        if ch == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                i = skip(i)
                key, i = json.decoder.scanstring(text, i + 1)
                i = skip(i)
                i = parse(i + 1, path + (key,))  # past ':'
                i = skip(i)
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if ch == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = parse(i, path + (k,))
                i = skip(i)
                k += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if ch == '"':
            return json.decoder.scanstring(text, i + 1)[1]
        for lit in ("true", "false", "null"):
            if text.startswith(lit, i):
                return i + len(lit)
        return _NUMBER.match(text, i).end()

    parse(0, ())
    return out


def _line_of(text: str, positions: dict, path) -> int | None:
    path = tuple(path)
    while path not in positions and path:
        path = path[:-1]
    if path not in positions:
        return None
    return text.count("\n", 0, positions[path]) + 1


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    source: str
    raw: dict
    dim: int
    generator: np.ndarray
    generator_G: np.ndarray
    channel: np.ndarray
    channel_type: str
    renewal: renewal.RenewalSpec
    ordering: str
    grid: TimeGrid
    methods: tuple
    rho0: np.ndarray
    seed: int
    series_options: dict
    n_traj: int
    mc_stride: int
    laplace_points: tuple
    tolerances: dict
    observables: tuple
    output_dir: str | None
    jc_leakage: float | None = None
    lines: dict = field(default_factory=dict)

    def config(self, ordering: str | None = None, grid: TimeGrid | None = None) -> EvolutionConfig:
        fam_f = Semigroup(self.generator)
        fam_g = fam_f if self.generator_G is self.generator else Semigroup(self.generator_G)
        return EvolutionConfig(
            self.channel,
            fam_f,
            fam_g,
            self.renewal,
            grid or self.grid,
            ordering=ordering or self.ordering,
            **self.series_options,
        )

    def line(self, *path) -> int | None:
        return self.lines.get(tuple(path))


def _complex(x):
    return complex(x[0], x[1]) if isinstance(x, list) else complex(x)


def _matrix(rows, dim=None, what="matrix"):
    mat = np.array([[_complex(x) for x in row] for row in rows], dtype=complex)
    if mat.ndim != 2 or (dim is not None and mat.shape != (dim, dim)):
        raise ValueError(f"{what} must be {dim} x {dim}")
    return mat


_NAMED_OPS = {
    "sigma_x": lambda d: liouville.PAULI["x"],
    "sigma_y": lambda d: liouville.PAULI["y"],
    "sigma_z": lambda d: liouville.PAULI["z"],
    "sigma_minus": lambda d: liouville.SIGMA_MINUS,
    "sigma_plus": lambda d: liouville.SIGMA_MINUS.conj().T,
    "destroy": liouville.destroy,
    "create": lambda d: liouville.destroy(d).conj().T,
}


def _lindblad(spec, dim):
    if spec is None:
        return np.zeros((dim * dim, dim * dim), dtype=complex)
    ham = _matrix(spec["hamiltonian"], dim, "hamiltonian") if "hamiltonian" in spec else np.zeros((dim, dim))
    jumps = []
    for item in spec.get("jump_ops", []):
        op = item["op"]
        if isinstance(op, str):
            mat = _NAMED_OPS[op](dim)
            if mat.shape != (dim, dim):
                raise ValueError(f"named operator {op} needs dim = 2")
        else:
            mat = _matrix(op, dim, "jump operator")
        jumps.append((mat, item["rate"]))
    if "field_damping" in spec:
        fd = liouville.field_damping(dim, spec["field_damping"]["kappa"], spec["field_damping"].get("n_thermal", 0.0))
        jumps.extend(fd.jump_ops)
    return liouville.lindblad_generator(liouville.LindbladSpec(ham, jumps))


def build_law(spec):
    kind = spec["law"]
    need = {
        "exponential": ("rate",),
        "erlang": ("k", "rate"),
        "hyperexponential": ("probs", "rates"),
        "phase-type": ("alpha", "subgenerator"),
        "uniform": ("b",),
        "tabulated": ("grid", "values"),
    }[kind]
    missing = [k for k in need if k not in spec]
    if missing:
        raise ValueError(f"{kind} law needs {', '.join(missing)}")
    if kind == "exponential":
        return renewal.Exponential(spec["rate"])
    if kind == "erlang":
        return renewal.erlang(spec["k"], spec["rate"])
    if kind == "hyperexponential":
        return renewal.hyperexponential(spec["probs"], spec["rates"])
    if kind == "phase-type":
        return renewal.PhaseType(spec["alpha"], spec["subgenerator"])
    if kind == "uniform":
        return renewal.uniform(spec.get("a", 0.0), spec["b"])
    return renewal.Tabulated(spec["grid"], spec["values"])


def _channel(spec, dim):
    kind = spec["type"]
    leak = None
    if kind == "identity":
        chan = liouville.identity_map(dim)
    elif kind == "pauli-conjugation":
        if dim != 2:
            raise ValueError("Pauli conjugation needs dim = 2")
        chan = liouville.pauli_conjugation(spec.get("axis", "x"))
    elif kind == "depolarizing":
        chan = liouville.depolarizing(spec.get("p", 1.0), dim)
    elif kind == "jc-collision":
        for key in ("coupling", "tau_int"):
            if key not in spec:
                raise ValueError(f"jc-collision channel needs {key}")
        atom = _matrix(spec["atom_state"], 2, "atom_state") if "atom_state" in spec else None
        chan, leak = liouville.jc_collision_channel(
            spec["coupling"], spec["tau_int"], dim, atom, spec.get("detuning", 0.0), return_leakage=True
        )
    elif kind == "permutation":
        if "pi" not in spec:
            raise ValueError("permutation channel needs pi")
        chan = liouville.transition_channel(spec["pi"])
    else:
        if "kraus" in spec:
            chan = liouville.kraus_channel([_matrix(k, dim, "Kraus operator") for k in spec["kraus"]])
        elif "superoperator" in spec:
            chan = _matrix(spec["superoperator"], dim * dim, "superoperator")
        else:
            raise ValueError("custom channel needs kraus or superoperator")
    if chan.shape != (dim * dim, dim * dim):
        raise ValueError(f"channel acts on dimension {liouville.hilbert_dim(chan)}, system has {dim}")
    report = liouville.is_cptp(chan)
    if not report.cp:
        raise ValueError(f"channel not CP (min Choi eigenvalue {report.min_choi_eig:.6g})")
    if not report.tp:
        raise ValueError(f"channel not trace preserving (defect {report.trace_defect:.3g})")
    return chan, leak


def _initial_state(spec, dim):
    if spec is None:
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho
    if isinstance(spec, list):
        return liouville.check_density_matrix(_matrix(spec, dim, "initial_state"))
    preset = spec["preset"]
    if preset == "maximally-mixed":
        return np.eye(dim, dtype=complex) / dim
    if preset == "plus":
        v = np.ones(dim) / np.sqrt(dim)
        return np.outer(v, v).astype(complex)
    k = spec.get("index", 0)
    if k >= dim:
        raise ValueError("basis index outside the Hilbert space")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[k, k] = 1.0
    return rho


@functools.cache
def schema() -> dict:
    text = resources.files("memkernel.cli").joinpath("schema.json").read_text()
    return json.loads(text)


def load_scenario(path, seed: int | None = None) -> Scenario:
    path = Path(path)
    source = str(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror}", source) from None
    return parse_scenario(text, source, seed)


def parse_scenario(text: str, source: str = "<scenario>", seed: int | None = None) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", source, exc.lineno) from None
    positions = value_positions(text)

    def fail(message, *path):
        raise ConfigError(message, source, _line_of(text, positions, path))

    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        fail(f"schema violation at {where}: {err.message}", *err.absolute_path)

    dim = raw["system"]["dim"]
    try:
        gen = _lindblad(raw["system"].get("lindblad"), dim)
    except ValueError as exc:
        fail(str(exc), "system", "lindblad")
    gen_g = gen
    if "lindblad_G" in raw["system"]:
        try:
            gen_g = _lindblad(raw["system"]["lindblad_G"], dim)
        except ValueError as exc:
            fail(str(exc), "system", "lindblad_G")
    try:
        chan, leak = _channel(raw["channel"], dim)
    except ValueError as exc:
        fail(str(exc), "channel")
    try:
        base = build_law(raw["waiting_time"])
    except ValueError as exc:
        fail(str(exc), "waiting_time")
    ordering = raw["ordering"]
    ren = raw.get("renewal", {})
    first = None
    if "first" in ren:
        try:
            first = build_law(ren["first"])
        except ValueError as exc:
            fail(str(exc), "renewal", "first")
    stationary = ren.get("stationary", False)
    if ordering == "modified" and first is None and not stationary:
        fail("modified ordering requires renewal.first or renewal.stationary = true", "ordering")
    if ordering != "modified" and (first is not None or stationary):
        fail("renewal.first / renewal.stationary only apply to the modified ordering", "renewal")
    try:
        spec = renewal.RenewalSpec(base, first, stationary)
    except ValueError as exc:
        fail(str(exc), "renewal")
    try:
        rho0 = _initial_state(raw["system"].get("initial_state"), dim)
    except ValueError as exc:
        fail(str(exc), "system", "initial_state")
    grid = TimeGrid(raw["grid"]["t_max"], raw["grid"]["n_steps"])
    mc = raw.get("montecarlo", {})
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(raw.get("tolerances", {}))
    observables = tuple(raw.get("observables", []))
    scenario = Scenario(
        name=raw["name"],
        source=source,
        raw=raw,
        dim=dim,
        generator=gen,
        generator_G=gen_g,
        channel=chan,
        channel_type=raw["channel"]["type"],
        renewal=spec,
        ordering=ordering,
        grid=grid,
        methods=tuple(raw["methods"]),
        rho0=rho0,
        seed=raw.get("seed", 0) if seed is None else seed,
        series_options=dict(raw.get("series", {})),
        n_traj=mc.get("n_traj", 100000),
        mc_stride=mc.get("stride", 1),
        laplace_points=tuple(_complex(u) for u in raw.get("laplace", {}).get("u", [])),
        tolerances=tol,
        observables=observables,
        output_dir=raw.get("output", {}).get("dir"),
        jc_leakage=leak,
        lines={p: _line_of(text, positions, p) for p in positions if len(p) <= 2},
    )
    try:
        scenario.config()
    except ValueError as exc:
        fail(str(exc), "ordering")
    return scenario

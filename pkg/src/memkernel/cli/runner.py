"""Run scenarios, write results and evaluate invariant checks.

Exit codes: 0 ok, 2 configuration error, 3 invariant failure, 4 numerical
flag (non-convergence, step-halving deviation, inconclusive checks).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .. import gme, liouville, renewal, semimarkov
from ..montecarlo import ensemble_average
from ..renewal import Exponential, PhaseType, Tabulated, UnsupportedLawError
from ..series import propagate
from .scenario import ConfigError, Scenario

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_FLAG = 0, 2, 3, 4
REFERENCE_ORDER = ("series", "semigroup-ansatz", "wform", "markov-oracle")
MC_AGREEMENT = 0.99
WFORM_TRACE_TOL = 1e-5


@dataclass
class Check:
    name: str
    value: float | None
    threshold: float | None
    status: str  # "pass", "fail" or "inconclusive"
    relation: str = "<="

    def as_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold, "status": self.status}


def _check(name, value, threshold, relation="<="):
    value = float(value)
    ok = value <= threshold if relation == "<=" else value >= threshold
    return Check(name, value, float(threshold), "pass" if ok else "fail", relation)


@dataclass
class MethodOutput:
    name: str
    times: np.ndarray
    states: np.ndarray | None = None  # (N, d, d)
    propagators: np.ndarray | None = None  # (N, D, D)
    populations: np.ndarray | None = None  # for population-only methods
    extra: dict = field(default_factory=dict)
    flags: tuple = ()


@dataclass
class Report:
    scenario: str
    checks: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if any(c.status == "fail" for c in self.checks):
            return EXIT_INVARIANT
        if self.flags or any(c.status == "inconclusive" for c in self.checks):
            return EXIT_FLAG
        return EXIT_OK


# ---------------------------------------------------------------- methods


def _applicability(sc: Scenario, method: str) -> str | None:
    """Reason why ``method`` cannot run on ``sc``, or None."""
    law = sc.renewal.base
    same_families = sc.generator_G is sc.generator
    if method == "semigroup-ansatz":
        if sc.ordering == "modified":
            return "the semigroup ansatz covers R and L orderings only"
        if not isinstance(law, (Exponential, PhaseType)):
            return "the semigroup ansatz needs a phase-type waiting-time law"
        if not same_families:
            return "the semigroup ansatz needs F = G"
    if method == "wform":
        if sc.ordering != "R":
            return "the W-form solver covers the R ordering only"
        if not np.isfinite(law.f0):
            return "the W-form solver needs a finite density at t = 0"
        if isinstance(law, Tabulated) and not law.continuous:
            return "the W-form solver needs a density without jumps"
    if method == "markov-oracle":
        if not isinstance(law, Exponential):
            return "the Markov oracle needs an exponential waiting-time law"
        first = sc.renewal.first
        if first is not None and not (isinstance(first, Exponential) and first.rate == law.rate):
            return "the Markov oracle needs the first gap to follow the same exponential law"
        if not same_families:
            return "the Markov oracle needs F = G"
    if method == "classical-oracle":
        if sc.channel_type != "permutation":
            return "the classical oracle needs a permutation channel"
        if np.abs(sc.generator).max() > 0 or np.abs(sc.generator_G).max() > 0:
            return "the classical oracle needs identity map families (no Lindblad terms)"
        if sc.ordering == "modified":
            return "the classical oracle covers ordinary renewal only"
    return None


def check_methods(sc: Scenario):
    if not sc.methods:
        raise ConfigError("no method selected", sc.source, sc.line("methods"))
    for m in sc.methods:
        reason = _applicability(sc, m)
        if reason:
            raise ConfigError(f"method {m} does not apply: {reason}", sc.source, sc.line("methods"))
    if "montecarlo" in sc.methods:
        if sc.mc_stride > sc.grid.n_steps:
            raise ConfigError("montecarlo.stride exceeds the number of grid steps", sc.source, sc.line("montecarlo"))


def _states(props, rho0):
    vec = props @ liouville.vectorize(rho0)
    return liouville.devectorize(vec, rho0.shape[0])


def _run_series(sc):
    res = propagate(sc.config())
    extra = {
        "trace_defect_max": float(res.trace_defect.max()),
        "min_choi_eig": float(res.min_choi_eig.min()),
        "hermiticity_defect_max": float(res.hermiticity_defect.max()),
        "truncation_order_max": int(res.truncation_order.max()),
        "last_term_norm_max": float(res.last_term_norm.max()),
        "converged": bool(res.converged),
        "remainder_bound": float(res.remainder_bound),
        "richardson_deviation": res.richardson_deviation,
        "scheme": res.scheme,
    }
    return MethodOutput("series", res.times, _states(res.propagators, sc.rho0), res.propagators, extra=extra,
                        flags=res.flags), res


def _gme_output(name, res, rho0):
    extra = {
        "trace_defect_max": float(res.trace_defect.max()),
        "min_choi_eig": float(res.min_choi_eig.min()),
    }
    return MethodOutput(name, res.times, _states(res.propagators, rho0), res.propagators, extra=extra, flags=res.flags)


def _run_semigroup_ansatz(sc):
    res = gme.solve_semigroup_ansatz(sc.generator, sc.channel, sc.renewal.base, sc.grid, sc.ordering,
                                     trace_tol=sc.tolerances["trace"])
    return _gme_output("semigroup-ansatz", res, sc.rho0)


def _run_wform(sc):
    cfg = sc.config()
    res = gme.solve_wform_R(sc.channel, cfg.family_F, cfg.family_G, sc.renewal.base, sc.grid,
                            trace_tol=max(sc.tolerances["trace"], WFORM_TRACE_TOL))
    return _gme_output("wform", res, sc.rho0)


def _run_markov(sc):
    gen = liouville.markov_generator(sc.generator, sc.channel, sc.renewal.base.rate)
    t = sc.grid.times
    props = np.stack([scipy.linalg.expm(ti * gen) for ti in t])
    extra = {
        "trace_defect_max": float(liouville.trace_defect(props).max()),
        "min_choi_eig": float(liouville.choi_spectrum_min(props).min()),
    }
    return MethodOutput("markov-oracle", t, _states(props, sc.rho0), props, extra=extra)


def _run_classical(sc):
    spec = semimarkov.SemiMarkovSpec(np.asarray(sc.raw["channel"]["pi"], dtype=float), sc.renewal.base)
    sol = semimarkov.solve_T(spec, sc.grid, sc.config().quadrature)
    p0 = np.real(np.diag(sc.rho0))
    pops = sol.T @ p0
    extra = {"volterra_residual": sol.residual, "column_defect": sol.column_defect}
    return MethodOutput("classical-oracle", sol.times, populations=pops, extra=extra)


def _run_montecarlo(sc):
    times = sc.grid.times[:: sc.mc_stride]
    est = ensemble_average(sc.config(), sc.rho0, sc.n_traj, seed=sc.seed, grid=times)
    extra = {"n_trajectories": est.n_trajectories, "seed": est.seed, "mean_jumps_final": float(est.mean_jumps[-1])}
    out = MethodOutput("montecarlo", times, est.mean_state, extra=extra)
    out.extra["_estimate"] = est
    return out


_RUNNERS = {
    "semigroup-ansatz": _run_semigroup_ansatz,
    "wform": _run_wform,
    "markov-oracle": _run_markov,
    "classical-oracle": _run_classical,
    "montecarlo": _run_montecarlo,
}


# ---------------------------------------------------------------- output


def _fmt(x: float) -> str:
    return repr(float(x))


def state_columns(d: int, photon: bool):
    cols = ["t"]
    for i in range(d):
        for j in range(d):
            cols += [f"re_rho_{i}_{j}", f"im_rho_{i}_{j}"]
    cols += [f"p_{k}" for k in range(d)]
    cols += [f"abs_rho_{i}_{j}" for i in range(d) for j in range(i + 1, d)]
    if photon:
        cols.append("photon_number")
    return cols


def state_rows(times, states, photon: bool):
    d = states.shape[1]
    iu = np.triu_indices(d, 1)
    nvec = np.arange(d)
    for t, rho in zip(times, states):
        row = [t]
        for z in rho.ravel():
            row += [z.real, z.imag]
        pops = np.real(np.diag(rho))
        row += list(pops)
        row += list(np.abs(rho[iu]))
        if photon:
            row.append(float(nvec @ pops))
        yield row


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items() if not str(k).startswith("_")}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_outputs(report: Report, sc: Scenario, outputs: dict, cross: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    photon = "photon_number" in sc.observables
    for name, out in outputs.items():
        path = out_dir / f"{name}.csv"
        if out.states is not None:
            header = state_columns(sc.dim, photon)
            rows = state_rows(out.times, out.states, photon)
            if name == "montecarlo":
                est = out.extra["_estimate"]
                header = header + ["mean_jumps"]
                rows = (r + [j] for r, j in zip(rows, est.mean_jumps))
            _write_csv(path, header, rows)
        else:
            header = ["t"] + [f"p_{k}" for k in range(out.populations.shape[1])]
            _write_csv(path, header, ([t] + list(p) for t, p in zip(out.times, out.populations)))
    if cross:
        ref_times = next(iter(cross.values()))[0]
        header = ["t"] + [f"dev_{m}" for m in cross]
        cols = [c[1] for c in cross.values()]
        _write_csv(out_dir / "cross_method.csv", header, ([t] + [c[i] for c in cols] for i, t in enumerate(ref_times)))
    text = json.dumps(_json_safe(report.diagnostics), sort_keys=True, indent=2)
    (out_dir / "diagnostics.json").write_text(text + "\n")


# ---------------------------------------------------------------- checks


def law_mass(law) -> float:
    if isinstance(law, Tabulated):
        return law.mass
    if isinstance(law, PhaseType):
        return float(np.sum(law.alpha))
    if isinstance(law, Exponential):
        return 1.0
    return float(1.0 - law.survival(np.array([1e6 * max(law.mean, 1.0)]))[0])


def survival_consistency(law, t_max: float, n: int = 2000) -> float:
    """``max |dg/dt + f| / max(1, max f)`` on a fine grid, joined with ``|mass - 1|``."""
    span = t_max
    knots = np.array([])
    if isinstance(law, Tabulated):
        span = max(span, law.grid[-1])
        knots = law.grid
    t = (np.arange(n) + 0.5) / n * span
    delta = 1e-6 * max(span, 1.0)
    if knots.size:
        t = t[np.abs(t[:, None] - knots[None, :]).min(axis=1) > 10 * delta]
    dg = (law.survival(t + delta) - law.survival(t - delta)) / (2 * delta)
    f = law.density(t)
    scale = max(1.0, float(np.abs(f).max()))
    return max(float(np.abs(dg + f).max()) / scale, abs(law_mass(law) - 1.0))


def default_laplace_points(t_max: float) -> list:
    """Eight points with ``exp(-Re u t_max)`` near ``2e-9``."""
    a = max(1.0, 20.0 / t_max)
    re = np.array([1.0, 1.0, 1.25, 1.25, 1.5, 2.0, 2.0, 3.0]) * a
    im = np.array([0.0, 0.5, -0.5, 1.0, 0.0, -1.0, 2.0, 0.5]) * a
    return [complex(r, i) for r, i in zip(re, im)]


def laplace_checks(sc: Scenario, reference, u_points, tol) -> list:
    cfg = sc.config()
    points = gme.laplace_identity_check(reference, cfg, u_points, tol=tol)
    out = []
    for p in points:
        label = f"laplace identity at u={p.u.real:g}{p.u.imag:+g}i"
        if p.status == "inconclusive":
            out.append(Check(label, None, tol, "inconclusive"))
            continue
        out.append(Check(label, max(p.residual, p.kernel_residual or 0.0), tol, p.status))
    return out, points


# ---------------------------------------------------------------- driver


def run_scenario(sc: Scenario, out_dir=None, verify: bool = False, u_points=None) -> Report:
    """Solve every requested method, compare them and (optionally) write files."""
    check_methods(sc)
    tol = sc.tolerances
    report = Report(sc.name)
    outputs = {}
    series_res = None
    for m in sc.methods:
        if m == "series":
            outputs[m], series_res = _run_series(sc)
        else:
            try:
                outputs[m] = _RUNNERS[m](sc)
            except UnsupportedLawError as exc:
                raise ConfigError(f"method {m} does not apply: {exc}", sc.source, sc.line("methods")) from None
    diag = {
        "scenario": sc.name,
        "ordering": sc.ordering,
        "dim": sc.dim,
        "grid": {"t_max": sc.grid.t_max, "n_steps": sc.grid.n_steps},
        "seed": sc.seed,
        "methods": {},
    }
    if sc.jc_leakage is not None:
        diag["jc_truncation_leakage"] = sc.jc_leakage
    for name, out in outputs.items():
        diag["methods"][name] = dict(out.extra, flags=list(out.flags))
        report.flags += [f"{name}: {f}" for f in out.flags if "not CP" not in f and "trace defect" not in f]
        if out.propagators is not None:
            # the W-form kernel is differentiated numerically, so its trace drifts more
            trace_tol = max(tol["trace"], WFORM_TRACE_TOL) if name == "wform" else tol["trace"]
            report.checks.append(_check(f"{name}: trace defect", out.extra["trace_defect_max"], trace_tol))
            report.checks.append(_check(f"{name}: min Choi eigenvalue", out.extra["min_choi_eig"], -tol["cp"], ">="))
    # cross-method comparison against the first deterministic method
    ref_name = next((m for m in REFERENCE_ORDER if m in outputs), None)
    cross = {}
    if ref_name is not None:
        ref = outputs[ref_name]
        for name, out in outputs.items():
            if name == ref_name or name == "montecarlo":
                continue
            if out.propagators is not None:
                dev = np.linalg.norm(out.propagators - ref.propagators, ord=2, axis=(1, 2))
            else:
                ref_pops = np.real(np.diagonal(ref.states, axis1=1, axis2=2))
                dev = np.abs(out.populations - ref_pops).max(axis=1)
            cross[name] = (ref.times, dev)
            report.checks.append(_check(f"cross-method {name} vs {ref_name}", dev.max(), tol["cross_method"]))
            if "photon_number" in sc.observables and out.states is not None:
                n = np.arange(sc.dim)
                pn = np.real(np.diagonal(out.states, axis1=1, axis2=2)) @ n
                pr = np.real(np.diagonal(ref.states, axis1=1, axis2=2)) @ n
                diag["methods"][name]["photon_number_deviation"] = float(np.abs(pn - pr).max())
        if "montecarlo" in outputs:
            mc = outputs["montecarlo"]
            est = mc.extra["_estimate"]
            ref_states = ref.states[:: sc.mc_stride]
            frac = est.agreement(ref_states)
            diag["methods"]["montecarlo"]["agreement_fraction"] = frac
            diag["methods"]["montecarlo"]["reference"] = ref_name
            report.checks.append(_check(f"montecarlo within 4 stderr of {ref_name}", frac, MC_AGREEMENT, ">="))
        diag["reference_method"] = ref_name
        diag["cross_method_max"] = {m: float(c[1].max()) for m, c in cross.items()}
    if verify:
        diag["laplace"] = _verify_checks(sc, report, series_res, outputs.get(ref_name), u_points)
    diag["checks"] = [c.as_dict() for c in report.checks]
    diag["flags"] = list(report.flags)
    diag["exit_code"] = report.exit_code
    report.diagnostics = diag
    report.outputs = outputs
    if out_dir is not None:
        write_outputs(report, sc, outputs, cross, Path(out_dir))
    return report


def _verify_checks(sc, report, series_res, ref, u_points):
    spec = sc.renewal
    laws = [("waiting time", spec.base)] + ([("first gap", spec.first)] if spec.modified else [])
    for label, law in laws:
        report.checks.append(_check(f"{label}: dg/dt = -f and unit mass", survival_consistency(law, sc.grid.t_max), 1e-6))
    chan = liouville.is_cptp(sc.channel)
    report.checks.append(_check("channel: min Choi eigenvalue", chan.min_choi_eig, -sc.tolerances["cp"], ">="))
    report.checks.append(_check("channel: trace defect", chan.trace_defect, sc.tolerances["trace"]))
    spr = renewal.sprinkling(spec, sc.grid, sc.config().quadrature)
    report.checks.append(_check("sprinkling equation residual", spr.residual, 1e-8))
    if isinstance(spec.base, (Exponential, PhaseType)):
        k = renewal.scalar_kernel(spec.base)
        report.checks.append(_check("scalar kernel partial-fraction residual", k.laplace_residual, 1e-8))
        if spec.modified and isinstance(spec.first, (Exponential, PhaseType)):
            k1 = renewal.scalar_kernel_first(spec)
            report.checks.append(_check("first-gap kernel partial-fraction residual", k1.laplace_residual, 1e-8))
    target = series_res
    if target is None and ref is not None and ref.propagators is not None:
        target = _PropagatorView(ref.times, ref.propagators, sc)
    if target is not None:
        pts = list(u_points) if u_points else (list(sc.laplace_points) or default_laplace_points(sc.grid.t_max))
        checks, points = laplace_checks(sc, target, pts, sc.tolerances["laplace"])
        report.checks += checks
        return [_point_dict(p) for p in points]
    return []


def _point_dict(p):
    return {"u": p.u, "residual": p.residual, "kernel_residual": p.kernel_residual,
            "tail_bound": p.tail_bound, "status": p.status}


@dataclass
class _PropagatorView:
    times: np.ndarray
    propagators: np.ndarray
    sc: Scenario

    @property
    def grid(self):
        return self.sc.grid

    @property
    def ordering(self):
        return self.sc.ordering


def laplace_report(sc: Scenario, u_points) -> tuple:
    """Series propagators checked against the closed-form transforms at ``u_points``."""
    res = propagate(sc.config())
    checks, points = laplace_checks(sc, res, u_points, sc.tolerances["laplace"])
    report = Report(sc.name, checks=checks, flags=list(res.flags))
    return report, points

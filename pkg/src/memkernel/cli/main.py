"""``memkernel`` command line: run, verify and laplace-check scenarios."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from . import runner
from .scenario import ConfigError, load_scenario


def preset_paths() -> list:
    root = resources.files("memkernel.cli").joinpath("presets")
    return sorted((Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")), key=lambda p: p.name)


def resolve(name: str) -> Path:
    """A file path, or the name of a bundled preset (with or without ``.json``)."""
    path = Path(name)
    if path.exists():
        return path
    stem = name[:-5] if name.endswith(".json") else name
    for p in preset_paths():
        if p.stem == stem:
            return p
    return path


def _complex_arg(text: str) -> complex:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected re,im but got {text!r}") from None
    if len(parts) == 1:
        parts.append(0.0)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected re,im but got {text!r}")
    if parts[0] <= 0:
        raise argparse.ArgumentTypeError(f"Laplace points need Re u > 0, got {text!r}")
    return complex(parts[0], parts[1])


def _load(path, args):
    sc = load_scenario(resolve(path), seed=args.seed)
    if args.tol is not None:
        tol = dict(sc.tolerances, cross_method=args.tol, laplace=args.tol)
        object.__setattr__(sc, "tolerances", tol)
    return sc


def _out_dir(sc, args, default: bool):
    if args.out:
        return Path(args.out) / sc.name if getattr(args, "all", False) else Path(args.out)
    if sc.output_dir:
        return Path(sc.output_dir)
    return Path("memkernel-out") / sc.name if default else None


def _print_checks(name, checks, flags):
    width = max([len(c.name) for c in checks] + [20])
    for c in checks:
        value = "-" if c.value is None else f"{c.value:.3e}"
        op = c.relation if c.threshold is not None else ""
        print(f"{name:<24} {c.name:<{width}} {c.status.upper():<12} {value:>11} {op} {c.threshold:.0e}")
    for f in flags:
        print(f"{name:<24} flag: {f}")


def cmd_run(args) -> int:
    sc = _load(args.scenario, args)
    out = _out_dir(sc, args, default=True)
    report = runner.run_scenario(sc, out_dir=out)
    _print_checks(sc.name, report.checks, report.flags)
    print(f"wrote results to {out}")
    return report.exit_code


def cmd_verify(args) -> int:
    if args.all == bool(args.scenario):
        print("verify needs a scenario file or --all", file=sys.stderr)
        return runner.EXIT_CONFIG
    paths = preset_paths() if args.all else [resolve(args.scenario)]
    codes = []
    for path in paths:
        sc = _load(path, args)
        out = _out_dir(sc, args, default=False) if args.out else None
        report = runner.run_scenario(sc, out_dir=out, verify=True)
        _print_checks(sc.name, report.checks, report.flags)
        codes.append(report.exit_code)
    worst = next((c for c in (runner.EXIT_INVARIANT, runner.EXIT_FLAG) if c in codes), runner.EXIT_OK)
    print("verify:", {0: "all checks passed", 3: "invariant failure", 4: "numerical flags raised"}[worst])
    return worst


def cmd_laplace(args) -> int:
    sc = _load(args.scenario, args)
    u_points = args.u or list(sc.laplace_points) or runner.default_laplace_points(sc.grid.t_max)
    report, points = runner.laplace_report(sc, u_points)
    print(f"{'u':>22} {'residual':>11} {'kernel':>11} {'tail bound':>11} status")
    for p in points:
        res = "-" if p.residual is None else f"{p.residual:.3e}"
        kres = "-" if p.kernel_residual is None else f"{p.kernel_residual:.3e}"
        print(f"{p.u.real:>10.4g}{p.u.imag:+10.4g}i {res:>11} {kres:>11} {p.tail_bound:>11.3e} {p.status}")
    for f in report.flags:
        print(f"flag: {f}")
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--tol", type=float, default=None, help="cross-method and Laplace tolerance")
    parser = argparse.ArgumentParser(prog="memkernel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="solve a scenario and write results")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", parents=[common], help="run the invariant checks")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--all", action="store_true", help="verify every bundled preset")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("laplace-check", parents=[common], help="compare Laplace transforms with closed forms")
    p.add_argument("scenario")
    p.add_argument("--u", type=_complex_arg, nargs="+", help="points re,im with Re u > 0")
    p.set_defaults(func=cmd_laplace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

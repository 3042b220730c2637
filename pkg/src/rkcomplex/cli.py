"""Command line interface: inspect, map, limits, optimize, bench.

Exit codes: 0 success, 2 invalid input, 3 infeasible or diverged, 4 I/O error.
Every artifact is written atomically and is byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import mapio, optimizer, spectral, wave1d
from .mapio import atomic_write, fmt
from .schemes import (CompositeScheme, ExactScheme, SchemeError, UnknownScheme, ZeroCoefficient,
                      coeffs_to_betas, get_scheme, order_of_accuracy, registry)

EXIT_OK, EXIT_INVALID, EXIT_FAILED, EXIT_IO = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


# --- argument parsing helpers ---------------------------------------------------

def _grid(text):
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 200x200, got {text!r}") from None
    if nx < 2 or ny < 2:
        raise argparse.ArgumentTypeError("grid needs at least 2 points per axis")
    return nx, ny


def _numbers(text):
    try:
        return [optimizer._number(v) for v in text.split(",") if v.strip()]
    except optimizer.ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _region(text):
    vals = _numbers(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("region must be re0,re1,im0,im1")
    return vals


def _deltas(text):
    vals = _numbers(text)
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("deltas must be positive")
    return vals


def _lookup(names, schemes_file):
    try:
        return [get_scheme(n, schemes_file) for n in names]
    except UnknownScheme as exc:
        raise CLIError(str(exc.args[0])) from None
    except SchemeError as exc:
        raise CLIError(str(exc)) from None


# --- subcommands ----------------------------------------------------------------------

def inspect_report(scheme) -> str:
    lines = [f"scheme {scheme.name}"]
    if isinstance(scheme, ExactScheme):
        lines.append("  exact amplification factor exp(-i z)")
        return "\n".join(lines) + "\n"
    if isinstance(scheme, CompositeScheme):
        lines.append(f"  composite: {scheme.first.name} then {scheme.second.name}, "
                     f"{scheme.stages} stages per 2 dt")
        lines.append(f"  order {order_of_accuracy(scheme.equivalent())}")
        members = scheme.members()
    else:
        lines.append(f"  stages {scheme.stages}")
        lines.append(f"  order {order_of_accuracy(scheme)}")
        members = (scheme,)
    for m in members:
        if len(members) > 1:
            lines.append(f"  {m.name}: stages {m.stages}, order {order_of_accuracy(m)}")
        for j, c in enumerate(m.coeffs, 1):
            lines.append(f"    c_{j} = {fmt(c)}")
        try:
            betas = coeffs_to_betas(m).betas
            lines.append("    beta = " + ", ".join(fmt(b) for b in betas))
        except ZeroCoefficient:
            lines.append("    beta = undefined (zero coefficient)")
    sign = spectral.small_dt_stability_sign(scheme)
    lead = spectral.closed_form_growth(scheme) or spectral.small_dt_coefficient(scheme)
    if lead:
        lines.append(f"  small-dt growth: Re log(r/r_e) ~ {fmt(lead[1])} x^{lead[0]}")
    text = {"stable": "stable at small real w dt",
            "unstable": "unstable at small real w dt",
            "marginal": "marginal at small real w dt"}[sign]
    lines.append(f"  {text}")
    lines.append(f"  eta_s = {fmt(spectral.stability_limit(scheme))}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    schemes = _lookup(args.names, args.schemes)
    sys.stdout.write("".join(inspect_report(s) for s in schemes))
    return EXIT_OK


def _slug(text):
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in text)


def cmd_map(args) -> int:
    schemes = _lookup(args.names, args.schemes)
    re0, re1, im0, im1 = args.region
    try:
        grid = spectral.GridSpec((re0, re1), (im0, im1), *args.grid)
    except spectral.GridError as exc:
        raise CLIError(str(exc)) from None
    rescaled = True if args.rescaled else None
    m = spectral.error_map(schemes, grid, args.kind, rescaled)
    stem = "map_{}_{}_{}x{}".format(_slug("-".join(s.name for s in schemes)), args.kind, *args.grid)
    if args.rescaled:
        stem += "_rescaled"
    for p in mapio.write_map(m, os.path.join(args.out, stem)):
        print(p)
    return EXIT_OK


def limits_table(schemes, deltas, rescaled) -> str:
    sym = "lambda" if rescaled else "eta"
    head = ["scheme", f"{sym}_s"]
    head += [f"{sym}_{fmt(d)}" for d in deltas]
    head += [f"{sym}_hat_{fmt(d)}" for d in deltas]
    rows = [",".join(head)]
    for s in schemes:
        rep = spectral.limit_report(s, deltas, rescaled)
        vals = [s.name, fmt(rep.eta_s)]
        vals += [fmt(rep.eta_delta[d]) for d in deltas]
        vals += [fmt(rep.eta_hat_delta[d]) for d in deltas]
        rows.append(",".join(vals))
    return "\n".join(rows) + "\n"


def cmd_limits(args) -> int:
    schemes = _lookup(args.names, args.schemes)
    text = limits_table(schemes, args.delta, args.rescaled)
    path = os.path.join(args.out, "limits_rescaled.csv" if args.rescaled else "limits.csv")
    atomic_write(path, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_optimize(args) -> int:
    try:
        spec, seed_name = optimizer.load_config(args.config)
    except optimizer.ConfigError as exc:
        raise CLIError(str(exc)) from None
    seed = None
    if seed_name:
        seed = _lookup([seed_name], args.schemes)[0]
        if not hasattr(seed, "coeffs"):
            raise CLIError("seed scheme must be a single scheme")
    try:
        res = optimizer.optimize(spec, seed)
    except optimizer.Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    path = args.output or os.path.join(args.out, "optimized.txt")
    optimizer.append_result(path, res, spec)
    sys.stdout.write(optimizer.result_block(res, spec))
    print(f"appended to {path}")
    return EXIT_OK


_BENCH_KEYS = {"name", "ppw", "L", "T", "stencil", "filter", "filter_period", "schemes",
               "dts", "cfls", "damping_total", "damping_shape", "damping_edge", "damping_start",
               "damping_width", "packet_centre", "packet_halfwidth"}


def parse_bench_config(text, schemes_file=None):
    """Benchmark settings from key = value text; see README for the keys."""
    kv = optimizer.parse_kv(text)
    unknown = set(kv) - _BENCH_KEYS
    if unknown:
        raise CLIError(f"unknown keys: {', '.join(sorted(unknown))}")
    for req in ("ppw", "stencil", "schemes"):
        if req not in kv:
            raise CLIError(f"missing key {req!r}")
    num = optimizer._number

    def nums(key):
        return [num(v) for v in kv[key].split(",") if v.strip()] if key in kv else []

    try:
        ppw = int(num(kv["ppw"]))
        damping = wave1d.Damping(
            total=num(kv.get("damping_total", "6")), start=num(kv.get("damping_start", "12")),
            width=num(kv.get("damping_width", "2")), shape=kv.get("damping_shape", "tanh"),
            edge=num(kv.get("damping_edge", "0.25")))
        packet = wave1d.Packet(centre=num(kv.get("packet_centre", "6")),
                               halfwidth=num(kv.get("packet_halfwidth", "2")))
        problem = wave1d.WaveProblem(ppw, num(kv.get("L", "24")), num(kv.get("T", "24")),
                                     damping, packet)
        _ = problem.n   # validates L * PPW
        stencil = wave1d.get_stencil(kv["stencil"])
        filt = wave1d.get_stencil(kv.get("filter", "none"))
        period = kv.get("filter_period", "1")
        period = None if period == "step" else num(period)
        dts = nums("dts") + [c / ppw for c in nums("cfls")]
        if any(d <= 0 for d in dts):
            raise CLIError("timesteps must be positive")
    except (ValueError, KeyError) as exc:
        raise CLIError(str(exc)) from None
    if not isinstance(stencil, wave1d.Stencil):
        raise CLIError(f"{kv['stencil']!r} is not a derivative stencil")
    if filt is not None and not isinstance(filt, wave1d.FilterSpec):
        raise CLIError(f"{kv['filter']!r} is not a filter")
    names = [n.strip() for n in kv["schemes"].split(",") if n.strip()]
    schemes = _lookup(names, schemes_file)
    return {"name": kv.get("name", "bench"), "problem": problem, "stencil": stencil,
            "filter": filt, "period": period, "schemes": schemes, "dts": dts}


def bench_csv(results) -> str:
    lines = ["scheme,dt,cfl,error,effort,stable"]
    for r in results:
        lines.append(",".join([r.scheme, fmt(r.dt), fmt(r.cfl), fmt(r.error), fmt(r.effort),
                               "true" if r.stable else "false"]))
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CLIError(f"cannot read config: {exc}", EXIT_IO) from None
    try:
        cfg = parse_bench_config(text, args.schemes)
    except optimizer.ConfigError as exc:
        raise CLIError(str(exc)) from None
    results = wave1d.sweep(cfg["problem"], cfg["schemes"], cfg["dts"], cfg["stencil"],
                           cfg["filter"], cfg["period"])
    path = os.path.join(args.out, f"bench_{_slug(cfg['name'])}.csv")
    atomic_write(path, bench_csv(results))
    print(path)
    if results and not any(r.stable for r in results):
        print("every cell diverged", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


# --- entry point --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rkcomplex",
                                 description="Runge-Kutta schemes for complex frequencies.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schemes", help="extra scheme file")
    common.add_argument("--out", default=".", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", parents=[common], help="print scheme coefficients and stability")
    p.add_argument("names", nargs="+")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("map", parents=[common], help="error or winner map over the complex plane")
    p.add_argument("names", nargs="+")
    p.add_argument("--grid", type=_grid, default=(200, 200))
    p.add_argument("--region", type=_region, default=[0.0, 3.141592653589793,
                                                     -1.5707963267948966, 1.5707963267948966])
    p.add_argument("--kind", choices=["phase", "amplification"], default="phase")
    p.add_argument("--rescaled", action="store_true", help="rescale every scheme to 4-stage cost")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("limits", parents=[common], help="stability and accuracy limits")
    p.add_argument("names", nargs="+")
    p.add_argument("--delta", type=_deltas, default=[1e-3, 1e-4, 1e-5])
    p.add_argument("--rescaled", action="store_true")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("optimize", parents=[common], help="optimise a scheme from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="scheme file to append to (default OUT/optimized.txt)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("bench", parents=[common], help="1D damped wave benchmark sweep")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.schemes is not None and not os.path.isfile(args.schemes):
        print(f"error: scheme file not found: {args.schemes}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.schemes is not None:
            registry(args.schemes)
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SchemeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

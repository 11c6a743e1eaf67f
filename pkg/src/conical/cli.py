"""Command line entry point: ``python -m conical <command> ...``.

Commands
--------
solve <config>                      run one case
validate [--tables t1,t2,t3,t4]     compare against the NASA cone tables
mesh-gen <params> -o <file>         write a generated mesh
demo-central <problem>              time-dependent central-scheme demo

Exit codes: 0 success, 1 validation tolerance failure, 2 non-convergence,
3 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cases
from .cases import CaseConfig, ConfigError
from .mesh import MeshError, save_mesh

DEMOS = ("ring-advection", "burgers-1d", "burgers-annulus")


def _cmd_solve(args) -> int:
    try:
        cfg = CaseConfig.load(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return cases.EXIT_INVALID
    if args.output_dir:
        cfg = replace(cfg, output_dir=args.output_dir)

    def show(rec):
        if args.verbose:
            print(f"inc {rec.increment:3d} it {rec.iteration:2d} |R| {rec.residual_l2:.3e}"
                  + (f" damped x{rec.halvings}" if rec.halvings else ""))
    res = cases.run_case(cfg, callback=show)
    stream = sys.stdout if res.exit_code == cases.EXIT_OK else sys.stderr
    print(res.message, file=stream)
    if res.report is not None:
        for k, v in res.report.summary().items():
            print(f"{k}: {v:.6f}")
    for name, path in res.artifacts.items():
        print(f"wrote {name}: {path}")
    return res.exit_code


def _parse_cases(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        a, m = item.split(":")
        out.append((int(a), float(m)))
    return out


def _cmd_validate(args) -> int:
    tables = tuple(t.strip() for t in args.tables.split(",") if t.strip())
    bad = [t for t in tables if t not in cases.TABLES]
    if bad:
        print(f"error: unknown table(s) {bad}; choose from t1,t2,t3,t4", file=sys.stderr)
        return cases.EXIT_INVALID
    try:
        case_list = cases.default_table_cases() if args.cases is None else _parse_cases(args.cases)
        for a, m in case_list:
            cases.nasa_value("shock_angle", a, m)
    except (ValueError, KeyError):
        print("error: --cases expects half_angle:mach pairs from the tabulated grid", file=sys.stderr)
        return cases.EXIT_INVALID
    base = CaseConfig(write_fields=False)
    if args.config:
        try:
            base = CaseConfig.load(args.config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return cases.EXIT_INVALID

    def show(row):
        print(f"{row.half_angle:>3} deg M={row.mach:<4g} {row.status} ({row.elapsed:.0f} s)", flush=True)
    rows, md = cases.validate_tables(case_list, tables, base, progress=show)
    if args.output:
        Path(args.output).write_text(md)
        print(f"wrote {args.output}")
    else:
        print(md)
    if any(r.status.startswith("failed") for r in rows):
        return cases.EXIT_NOT_CONVERGED
    if any(not ok for r in rows for ok in r.passed.values()):
        return cases.EXIT_TOLERANCE
    return cases.EXIT_OK


def _cmd_mesh_gen(args) -> int:
    try:
        cfg = CaseConfig.load(args.params)
        if cfg.mesh != "generate":
            raise ConfigError("mesh-gen needs mesh = generate")
        mesh = cfg.build_mesh()
    except (ConfigError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return cases.EXIT_INVALID
    save_mesh(mesh, args.output)
    print(f"wrote {mesh.width}x{mesh.height} mesh to {args.output}")
    return cases.EXIT_OK


def _cmd_demo_central(args) -> int:
    from . import central_scheme as cs
    from .tensor_ops import StructuredGrid

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = args.cells
    if args.problem == "ring-advection":
        scheme, u, _ = cs.gaussian_ring_problem(n)
        theta = 2 * np.pi * (np.arange(n) + 0.5) / n
        coords = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        t_end = n / 2.0
    elif args.problem == "burgers-1d":
        flux, wave = cs.burgers_flux()
        grid = StructuredGrid(n, 1, periodic=(True, False))
        scheme = cs.CentralScheme(grid, np.tile(np.eye(2), (n, 1, 1)), cs.TensorLayout(1, (), 2),
                                  flux, wave, directions=(0,))
        u = np.where(np.arange(n) < n // 2, 1.0, 0.0)[:, None]
        coords = np.stack([np.arange(n) + 0.5, np.zeros(n)], axis=1)
        t_end = n / 4.0
    elif args.problem == "burgers-annulus":
        flux, wave = cs.burgers_flux()
        h = max(n // 4, 4)
        grid = StructuredGrid(n, h, periodic=(True, False))
        scheme = cs.CentralScheme(grid, cs.annulus_frames(n, h), cs.TensorLayout(1, (), 2), flux, wave)
        col = np.arange(n * h) % n
        row = np.arange(n * h) // n
        theta = 2 * np.pi * (col + 0.5) / n
        radius = 1.0 + (row + 0.5) / h
        coords = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        u = (1.0 + np.exp(-((col - n / 2) / (n / 10)) ** 2))[:, None]
        t_end = n / 8.0
    else:
        print(f"error: unknown problem {args.problem!r}; choose from {', '.join(DEMOS)}", file=sys.stderr)
        return cases.EXIT_INVALID
    if args.t_end is not None:
        t_end = args.t_end

    def snapshot(k, t, state):
        if k % args.every:
            return
        path = out / f"{args.problem}_{k:05d}.csv"
        comps = ",".join(f"u{j}" for j in range(state.shape[1]))
        with open(path, "w") as fh:
            fh.write(f"cell,x,y,t,{comps}\n")
            for i in range(state.shape[0]):
                fh.write(f"{i},{float(coords[i, 0])!r},{float(coords[i, 1])!r},{float(t)!r},"
                         + ",".join(repr(float(x)) for x in state[i]) + "\n")
    final = cs.run(scheme, u, t_end, snapshot=snapshot)
    print(f"{args.problem}: {scheme.grid.n_cells} cells, t = {t_end:g}, "
          f"min {final.min():.4g}, max {final.max():.4g}; snapshots in {out}")
    return cases.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conical", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one case from a config file")
    s.add_argument("config")
    s.add_argument("--output-dir", default=None)
    s.set_defaults(func=_cmd_solve)

    v = sub.add_parser("validate", help="compare against NASA cone tables")
    v.add_argument("--tables", default="t1,t2,t3,t4")
    v.add_argument("--cases", default=None, help="comma list of half_angle:mach, e.g. 10:2,10:3")
    v.add_argument("--config", default=None, help="base config (mesh size, c_visc, ...)")
    v.add_argument("-o", "--output", default=None, help="markdown report path")
    v.set_defaults(func=_cmd_validate)

    m = sub.add_parser("mesh-gen", help="generate a body-fitted mesh")
    m.add_argument("params", help="config file with body and mesh keys")
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=_cmd_mesh_gen)

    d = sub.add_parser("demo-central", help="run a central-scheme demo")
    d.add_argument("problem", help=", ".join(DEMOS))
    d.add_argument("--cells", type=int, default=100)
    d.add_argument("--t-end", type=float, default=None)
    d.add_argument("--every", type=int, default=10, help="snapshot interval in steps")
    d.add_argument("--output-dir", default="central_demo")
    d.set_defaults(func=_cmd_demo_central)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return int(args.func(args))


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry points: aiyagari, solve, export, sample-measures.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import export as ex
from . import solver
from ._io import dumps, write_csv, write_text
from .aiyagari import AiyagariEquilibrium, ConvergenceError, equilibrium
from .config import ConfigError, RunConfig
from .measures import Grid, MeasureError, equal_mass_grid, project

log = logging.getLogger("ksmaster")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


# pipeline pieces -----------------------------------------------------------------------


def compute_aiyagari(cfg: RunConfig) -> AiyagariEquilibrium:
    a = cfg.aiyagari
    return equilibrium(cfg.economy, n_nodes=a.nodes, n_cells=cfg.grid.fine_cells, N=a.transport_N, tol=a.tol,
                       eta=a.stencil)


def build_grid(cfg: RunConfig, eq: AiyagariEquilibrium) -> Grid:
    """Equal-mass subdivision of the Aiyagari measure, or the configured breakpoints."""
    bp = cfg.grid.breakpoints
    if bp is not None:
        return Grid(bp["y1"], bp["y2"])
    return equal_mass_grid(eq.measure, cfg.grid.K1, cfg.grid.K2)


def grid_json(grid: Grid, eq: AiyagariEquilibrium) -> str:
    base = project(eq.measure, grid)
    return dumps({"grid": grid.to_dict(), "d": grid.d, "aiyagari_measure": base.to_dict()})


def load_or_compute_aiyagari(cfg: RunConfig, out: Path) -> AiyagariEquilibrium:
    """Reuse ``out/aiyagari.json`` when it was computed for the same economy and baseline settings."""
    path = out / "aiyagari.json"
    stamp = dumps({"economy": cfg.economy.to_dict(), "aiyagari": cfg.to_dict()["aiyagari"],
                   "fine_cells": cfg.grid.fine_cells})
    stamp_path = out / "aiyagari.stamp"
    if path.exists() and stamp_path.exists() and stamp_path.read_text() == stamp:
        return AiyagariEquilibrium.from_dict(json.loads(path.read_text()))
    eq = compute_aiyagari(cfg)
    write_text(path, eq.to_json())
    write_text(stamp_path, stamp)
    return eq


def run_solve(cfg: RunConfig, resume: bool = True) -> solver.SolveResult:
    out = Path(cfg.out)
    snap = out / "config.snapshot"
    if resume and snap.exists() and RunConfig.load(snap).hash() != cfg.hash():
        raise ConfigError(f"{out} holds a run with a different configuration; choose another --out")
    out.mkdir(parents=True, exist_ok=True)
    write_text(snap, cfg.snapshot())
    eq = load_or_compute_aiyagari(cfg, out)
    grid = build_grid(cfg, eq)
    write_text(out / "grid.json", grid_json(grid, eq))
    base = project(eq.measure, grid)
    spec = cfg.network.spec(grid.d)
    return solver.solve(cfg.economy, grid, base, spec, cfg.solver.fixed_point(), cfg.transport, cfg.seed,
                        value_fn=eq.value_at, run_dir=out, resume=resume, config_hash=cfg.hash())


# commands -----------------------------------------------------------------------------------


def cmd_aiyagari(args, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    eq = compute_aiyagari(cfg)
    grid = build_grid(cfg, eq)
    write_text(out / "aiyagari.json", eq.to_json())
    write_text(out / "grid.json", grid_json(grid, eq))
    print(f"r* = {eq.r:.10f}  w* = {eq.w:.10f}  gap = {eq.gap:.2e}  lower Dirac masses = "
          f"{eq.measure.dirac_lo[0]:.6f}, {eq.measure.dirac_lo[1]:.6f}")
    print(f"grid: K1={grid.K[0]} K2={grid.K[1]} (d = {grid.d}) -> {out}")
    return EXIT_OK


def cmd_solve(args, cfg: RunConfig) -> int:
    res = run_solve(cfg, resume=not args.restart)
    last = res.history[-1]
    print(f"{len(res.history)} outer iterations -> {cfg.out}; final train MSE {last['mean_train_mse']:.3e}, "
          f"holdout MSE {last['mean_holdout_mse']:.3e}")
    return EXIT_OK


def cmd_export(args, cfg: RunConfig | None) -> int:
    run = ex.load_run(args.run_dir, args.iteration)
    kw = {}
    if args.kind == "contour":
        kw = {"nx": args.nx, "nr": args.nr, "f1": args.f1}
    elif args.kind == "policy-slice":
        kw = {"nx": args.nx}
    elif args.kind == "feature-surface":
        kw = {"nr": args.nr, "nf": args.nf}
    out = Path(args.out) if args.out else Path(args.run_dir) / "exports" / f"{args.kind}_iter{run.iteration}.csv"
    path = ex.export(run, args.kind, out, **kw)
    print(path)
    return EXIT_OK


def cmd_sample_measures(args, cfg: RunConfig) -> int:
    """Draw the initial measure sample (Dirichlet and perturbed-baseline parts) and write it as CSV."""
    out = Path(cfg.out)
    eq = load_or_compute_aiyagari(cfg, out)
    grid = build_grid(cfg, eq)
    base = project(eq.measure, grid)
    sc = cfg.solver.fixed_point().samples
    if args.n is not None:
        from dataclasses import replace

        sc = replace(sc, n_samples=args.n)
    s = solver.generate_samples(sc, grid, base, cfg.economy, solver._seed(cfg.seed, 1))
    cols = ["x", "holdout", "r_slow", "r_fast", "w_slow", "w_fast"] + [f"M{k}" for k in range(grid.d)]
    rows = [[float(s.x[k]), int(s.holdout[k]), float(s.r[k, 0]), float(s.r[k, 1]), float(s.w[k, 0]),
             float(s.w[k, 1])] + [float(v) for v in s.M[k]] for k in range(len(s))]
    path = out / "samples.csv"
    write_csv(path, cols, rows, {"config_hash": cfg.hash(), "grid": json.dumps(grid.to_dict())})
    print(path)
    return EXIT_OK


# argument parsing ----------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="YAML run configuration (defaults apply to anything missing)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--d0", type=int, help="number of adaptive measure features")
        p.add_argument("--k1", type=int, help="interior cells for y1")
        p.add_argument("--k2", type=int, help="interior cells for y2")
    p.add_argument("--threads", type=int, help="cap on BLAS threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksmaster", description="Neural master-equation solver for a Krusell-Smith economy.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aiyagari", help="stationary equilibrium without aggregate shocks, plus the equal-mass grid")
    _common(p)
    p.set_defaults(func=cmd_aiyagari)

    p = sub.add_parser("solve", help="run the fixed-point iteration, checkpointing every outer step")
    _common(p)
    p.add_argument("--restart", action="store_true", help="ignore existing checkpoints in --out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("export", help="write the CSV behind one figure from a run directory")
    p.add_argument("run_dir")
    p.add_argument("kind", choices=ex.KINDS)
    p.add_argument("--iteration", type=int, help="checkpoint to use (default: last complete)")
    p.add_argument("--out", help="CSV path (default: RUN_DIR/exports/KIND_iterN.csv)")
    p.add_argument("--f1", type=float, help="contour: fixed F1 value (default: median over the samples)")
    p.add_argument("--nx", type=int, default=61)
    p.add_argument("--nr", type=int, default=41)
    p.add_argument("--nf", type=int, default=41)
    _common(p, config=False)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("sample-measures", help="draw the training measure sample and write it as CSV")
    _common(p)
    p.add_argument("--n", type=int, help="number of samples (default: solver.n_samples)")
    p.set_defaults(func=cmd_sample_measures)
    return ap


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, out=args.out, d0=args.d0, k1=args.k1, k2=args.k2)


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        cfg = _load_config(args) if args.command != "export" else None
        with _thread_limit(args.threads):
            return args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, solver.DivergenceError, MeasureError, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ex.ExportError as err:
        print(f"export error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

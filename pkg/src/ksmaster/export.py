"""CSV exports of trained runs: the data behind the policy and feature figures.

Every export loads the networks of one iteration of a run directory and
writes a single CSV. The first line names the columns; `#` lines carry
metadata (config hash, iteration, per-network values); data rows follow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import solver
from ._io import write_csv
from .aiyagari import AiyagariEquilibrium
from .config import RunConfig
from .economy import EconomyParams, consumption_rule, wage_from_rate
from .measures import Grid, project

KINDS = ("contour", "policy-slice", "feature-surface", "scatter")
SURFACE_X = (0.5, 1.0, 3.0, 6.0)
PAIRS = [(i, j) for i in range(2) for j in range(2)]


class ExportError(ValueError):
    pass


@dataclass
class Run:
    path: Path
    config: RunConfig
    iteration: int
    nets: list
    samples: solver.SampleSet
    aiyagari: AiyagariEquilibrium | None

    @property
    def params(self) -> EconomyParams:
        return self.config.economy

    @property
    def grid(self) -> Grid:
        return self.samples.grid

    def meta(self, **extra) -> dict:
        out = {"config_hash": self.config.hash(), "iteration": self.iteration}
        out.update(extra)
        return out


def load_run(path, iteration: int | None = None) -> Run:
    """Networks of ``iteration`` (default: the last complete one) plus config, samples and baseline."""
    path = Path(path)
    snap = path / "config.snapshot"
    if not snap.exists():
        raise FileNotFoundError(f"{snap} not found; is {path} a run directory?")
    cfg = RunConfig.load(snap)
    last = solver.last_complete_iteration(path)
    n = last if iteration is None else int(iteration)
    if n < 1 or n > last:
        raise FileNotFoundError(f"no complete checkpoint for iteration {n} in {path} (last complete: {last})")
    nets = solver.load_nets(path, n, cfg.network.spec(cfg.d))
    samples = solver.SampleSet.from_dict(json.loads((path / "samples.json").read_text()), cfg.economy)
    ay = path / "aiyagari.json"
    eq = AiyagariEquilibrium.from_dict(json.loads(ay.read_text())) if ay.exists() else None
    return Run(path, cfg, n, nets, samples, eq)


def _savings(net, x, F, r, A, j, params):
    """s* from a network evaluated with explicit features F (n, d0) and rates r (n,)."""
    w = wage_from_rate(r, A, params)
    _, p = net.grad_x_features(x, F, r)
    return consumption_rule(x, p, r, w, params.y[j], params)[1]


def _features(run: Run, i: int, j: int) -> np.ndarray:
    return run.nets[i][j].features(run.samples.M)


def _feature_rows(F_fixed, d0, n):
    return np.broadcast_to(np.asarray(F_fixed, dtype=float)[:d0], (n, d0))


def median_features(run: Run, i: int, j: int) -> np.ndarray:
    """Median of every feature F_k,i,j over the run's sample set."""
    F = _features(run, i, j)
    return np.median(F, axis=0) if F.shape[1] else np.zeros(0)


def _rate_range(run: Run, i: int):
    r = run.samples.r[:, i]
    return float(np.quantile(r, 0.02)), float(np.quantile(r, 0.98))


def contour(run: Run, out, nx: int = 61, nr: int = 41, x_range=None, r_range=None, f1=None) -> Path:
    """Savings over a rectangular (x, r) lattice at a fixed F1, for every network.

    Features other than F1 (when d0 > 1) sit at their medians; F1 defaults to
    its median over the sample set. Negative savings are plain negative values.
    """
    params = run.params
    x_range = (params.x_lo, params.x_hi) if x_range is None else x_range
    xs = np.linspace(x_range[0], x_range[1], nx)
    rows, meta = [], run.meta(kind="contour", nx=nx, nr=nr)
    for i, j in PAIRS:
        net = run.nets[i][j]
        rr = _rate_range(run, i) if r_range is None else r_range
        rs = np.linspace(rr[0], rr[1], nr)
        F = median_features(run, i, j)
        if F.size and f1 is not None:
            F[0] = float(f1)
        X, R = np.meshgrid(xs, rs, indexing="ij")
        s = _savings(net, X.ravel(), _feature_rows(F, F.size, X.size), R.ravel(), params.A[i], j, params)
        f1_val = float(F[0]) if F.size else float("nan")
        meta[f"F1_{i + 1}_{j + 1}"] = "none (d0 = 0)" if not F.size else repr(f1_val)
        for x, r, v in zip(X.ravel(), R.ravel(), s):
            rows.append((i + 1, j + 1, float(x), float(r), f1_val, float(v)))
    return _write(out, ["i", "j", "x", "r", "F1", "savings"], rows, meta)


def policy_slice(run: Run, out, nx: int = 301, x_range=None) -> Path:
    """Savings versus x at the Aiyagari measure: slow, fast and the Aiyagari policy, per productivity level."""
    if run.aiyagari is None:
        raise ExportError("policy-slice needs aiyagari.json in the run directory")
    params, eq = run.params, run.aiyagari
    x_range = (params.x_lo, params.x_hi) if x_range is None else x_range
    xs = np.linspace(x_range[0], x_range[1], nx)
    m = project(eq.measure, run.grid)
    M = m.coefficients[None, :]
    r, w = solver.batch_prices(M, run.grid, params)
    rows = []
    meta = run.meta(kind="policy-slice", r_slow=repr(float(r[0, 0])), r_fast=repr(float(r[0, 1])),
                    r_aiyagari=repr(eq.r))
    for j in range(2):
        curves = []
        for i in range(2):
            _, _, s = solver.policy(run.nets[i][j], xs, M, np.full(nx, r[0, i]), np.full(nx, w[0, i]), j, params)
            curves.append(s)
        s_a = eq.savings_policy(xs, j)
        for k in range(nx):
            rows.append((j + 1, float(xs[k]), float(curves[0][k]), float(curves[1][k]), float(s_a[k])))
    return _write(out, ["j", "x", "s_slow", "s_fast", "s_aiyagari"], rows, meta)


def feature_surface(run: Run, out, xs=SURFACE_X, nr: int = 41, nf: int = 41, r_range=None, f_range=None) -> Path:
    """Savings over an (r, F1) lattice at a few fixed x, for every network."""
    params = run.params
    rows, meta = [], run.meta(kind="feature-surface", x_values=" ".join(repr(float(x)) for x in xs))
    for i, j in PAIRS:
        net = run.nets[i][j]
        if net.spec.d0 == 0:
            raise ExportError("feature-surface needs d0 >= 1")
        F_all = _features(run, i, j)
        F = np.median(F_all, axis=0)
        fr = (float(np.quantile(F_all[:, 0], 0.02)), float(np.quantile(F_all[:, 0], 0.98))) if f_range is None else f_range
        rr = _rate_range(run, i) if r_range is None else r_range
        R, F1 = np.meshgrid(np.linspace(rr[0], rr[1], nr), np.linspace(fr[0], fr[1], nf), indexing="ij")
        Fs = np.tile(F, (R.size, 1))
        Fs[:, 0] = F1.ravel()
        for x in xs:
            s = _savings(net, np.full(R.size, float(x)), Fs, R.ravel(), params.A[i], j, params)
            for r, f, v in zip(R.ravel(), F1.ravel(), s):
                rows.append((i + 1, j + 1, float(x), float(r), float(f), float(v)))
    return _write(out, ["i", "j", "x", "r", "F1", "savings"], rows, meta)


def pearson(a, b) -> float:
    return float(np.corrcoef(a, b)[0, 1])


def scatter(run: Run, out) -> Path:
    """F1(m) against r(m) over the sample set, with the Pearson correlation of each network in the header."""
    rows, meta = [], run.meta(kind="scatter", n_measures=len(run.samples))
    for i, j in PAIRS:
        if run.nets[i][j].spec.d0 == 0:
            raise ExportError("scatter needs d0 >= 1")
        F1 = _features(run, i, j)[:, 0]
        r = run.samples.r[:, i]
        meta[f"pearson_{i + 1}_{j + 1}"] = repr(pearson(r, F1))
        rows += [(i + 1, j + 1, float(a), float(b)) for a, b in zip(r, F1)]
    return _write(out, ["i", "j", "r", "F1"], rows, meta)


def correlations(path) -> dict:
    """Pearson coefficients recorded in a scatter CSV, keyed by (i, j) one-based."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("# pearson_"):
            key, val = line[2:].split(": ")
            _, i, j = key.split("_")
            out[(int(i), int(j))] = float(val)
    return out


def _write(out, columns, rows, meta) -> Path:
    out = Path(out)
    write_csv(out, columns, rows, meta)
    return out


def export(run: Run, kind: str, out, **kw) -> Path:
    fn = {"contour": contour, "policy-slice": policy_slice, "feature-surface": feature_surface, "scatter": scatter}
    if kind not in fn:
        raise ExportError(f"unknown export kind '{kind}' (choose from {', '.join(KINDS)})")
    return fn[kind](run, out, **kw)

"""Fitted value iteration for the discrete master equation.

Four networks v[i][j] (aggregate state i = 0 slow / 1 fast, productivity
j = 0 / 1) are improved by repeated supervised regressions. With v^n frozen,
the target at a sample (x, m) is

    T_ij = [ v_ij(x', m*_i) - lam_j dt (v_ij - v_ij') - mu_i dt (v_ij - v_i'j) + dt u(c*) ] / (1 + rho dt)

where all unprimed values are taken at (x, m), c* is the constrained
consumption rule with p = d v_ij / dx, x' = x + dt s*, and m*_i is m pushed
forward one step with the savings policies of v_i0 and v_i1. The residual
R = (1 + rho dt)(V - T) vanishes exactly when V equals the target.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from ._io import dumps, write_text
from .economy import EconomyParams, consumption_rule, prices, utility
from .measures import DiscreteMeasure, Grid, MeasureError, aggregates
from .transport import TransportConfig, push_forward_batch, transport_plan

log = logging.getLogger(__name__)

ROW_BUDGET = 4_000_000  # floats per hidden layer when evaluating many (measure, point) pairs


class DivergenceError(RuntimeError):
    pass


# configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class SampleConfig:
    n_samples: int = 20000
    mix: tuple = (0.3, 0.5, 0.2)       # Dirichlet, perturbed base, transported
    dirichlet_alpha: float = 1.0
    perturb_max: float = 0.5            # theta ~ U(0, perturb_max) in (1 - theta) base + theta Dirichlet
    transport_steps: int = 8            # transported samples take 1..transport_steps steps
    x_log_fraction: float = 0.2
    x_log_range: tuple = (1e-3, 3.0)    # offsets above x_lo for the log-spaced draws
    holdout_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "mix", tuple(float(v) for v in self.mix))
        object.__setattr__(self, "x_log_range", tuple(float(v) for v in self.x_log_range))
        if self.n_samples < 1 or len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ValueError("invalid sample mixture")
        if not 0 <= self.perturb_max <= 1 or self.dirichlet_alpha <= 0:
            raise ValueError("perturb_max must lie in [0, 1] and dirichlet_alpha be positive")
        if not 0 <= self.x_log_fraction <= 1 or not 0 < self.x_log_range[0] < self.x_log_range[1]:
            raise ValueError("invalid x sampling settings")
        if not 0 <= self.holdout_fraction < 1 or self.transport_steps < 1:
            raise ValueError("invalid holdout fraction or transport steps")


@dataclass(frozen=True)
class FixedPointConfig:
    samples: SampleConfig = SampleConfig()
    n_outer_iterations: int = 30
    train: nn.TrainConfig = nn.TrainConfig(steps=2000, batch_size=256, lr=1e-3, lr_final=1e-4)
    refresh_fraction: float = 0.25
    report_every: int = 1
    tol: float = 0.0                    # stop when the probe policy change drops below this (0 = never)
    divergence_mse: float = 1e6
    warm_start: str = "aiyagari"        # or "none"
    warm_train: nn.TrainConfig = nn.TrainConfig(steps=2000, batch_size=256, lr=1e-3, lr_final=1e-4)

    def __post_init__(self):
        if self.n_outer_iterations < 1 or not 0 <= self.refresh_fraction <= 1 or self.report_every < 1:
            raise ValueError("invalid fixed-point settings")
        if self.warm_start not in ("aiyagari", "none"):
            raise ValueError("warm_start must be 'aiyagari' or 'none'")


def _seed(seed, *path):
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(p) for p in path]))


# samples ---------------------------------------------------------------------------


@dataclass
class SampleSet:
    """Training states (x, M) with cached prices r[:, i], w[:, i] and a fixed holdout mask."""

    grid: Grid
    x: np.ndarray
    M: np.ndarray
    holdout: np.ndarray
    r: np.ndarray = None
    w: np.ndarray = None
    stamp: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.holdout = np.asarray(self.holdout, dtype=bool)
        if self.r is None or self.w is None:
            self.r, self.w = None, None

    def refresh_prices(self, params: EconomyParams) -> None:
        self.r, self.w = batch_prices(self.M, self.grid, params)

    def __len__(self):
        return self.x.size

    def to_dict(self) -> dict:
        return {
            "stamp": self.stamp,
            "grid": self.grid.to_dict(),
            "x": self.x.tolist(),
            "holdout": [int(h) for h in self.holdout],
            "M": self.M.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, params: EconomyParams) -> "SampleSet":
        s = cls(Grid.from_dict(d["grid"]), d["x"], d["M"], np.asarray(d["holdout"], dtype=bool), stamp=d["stamp"])
        s.refresh_prices(params)
        return s


def batch_prices(M, grid: Grid, params: EconomyParams, A=None):
    """(r, w), each (n, len(A)), for packed rows ``M``."""
    A = params.A if A is None else A
    X, Y = aggregates(np.atleast_2d(M), params.y, grid)
    if np.any(X <= 0) or np.any(Y <= 0):
        raise MeasureError("measure without capital or labour: prices undefined (policies may consume the whole "
                           "budget everywhere)")
    rs, ws = zip(*(prices(X, Y, a, params) for a in A))
    return np.stack(rs, axis=1), np.stack(ws, axis=1)


def dirichlet_measures(grid: Grid, n: int, alpha: float, rng) -> np.ndarray:
    """Random admissible coefficient vectors: Dirichlet slot masses divided by slot widths."""
    masses = rng.dirichlet(np.full(grid.d, alpha), size=n)
    return masses / grid.slot_widths


def sample_x(n: int, cfg: SampleConfig, params: EconomyParams, rng) -> np.ndarray:
    n_log = int(round(cfg.x_log_fraction * n))
    x = rng.uniform(params.x_lo, params.x_hi, n - n_log)
    lo, hi = np.log(cfg.x_log_range[0]), np.log(cfg.x_log_range[1])
    xl = params.x_lo + np.exp(rng.uniform(lo, hi, n_log))
    return np.concatenate([x, np.minimum(xl, params.x_hi)])


def generate_samples(cfg: SampleConfig, grid: Grid, base, params: EconomyParams, rng, advance=None) -> SampleSet:
    """Mixture of Dirichlet measures, perturbations of ``base`` and forward-transported copies.

    ``base`` is a DiscreteMeasure on ``grid`` (e.g. the projected Aiyagari
    measure). ``advance(M, rng)`` pushes rows of M forward one step under the
    current policies; without it the transported share is drawn as
    perturbations instead.
    """
    base = base.coefficients if isinstance(base, DiscreteMeasure) else np.asarray(base, dtype=float)
    n = cfg.n_samples
    w = np.asarray(cfg.mix) / sum(cfg.mix)
    n_dir = int(round(w[0] * n))
    n_tr = int(round(w[2] * n)) if advance is not None else 0
    n_per = n - n_dir - n_tr
    parts = [dirichlet_measures(grid, n_dir, cfg.dirichlet_alpha, rng)]
    theta = rng.uniform(0.0, cfg.perturb_max, n_per)[:, None]
    parts.append((1.0 - theta) * base + theta * dirichlet_measures(grid, n_per, cfg.dirichlet_alpha, rng))
    if n_tr:
        src = rng.integers(0, n_dir + n_per, n_tr)
        M = np.concatenate(parts)[src]
        steps = rng.integers(1, cfg.transport_steps + 1, n_tr)
        for k in range(1, cfg.transport_steps + 1):
            live = steps >= k
            if np.any(live):
                M[live] = advance(M[live], rng)
        parts.append(M)
    M = np.concatenate(parts)
    M = M / (M @ grid.slot_widths)[:, None]
    order = rng.permutation(n)
    M = M[order]
    x = sample_x(n, cfg, params, rng)[rng.permutation(n)]
    holdout = np.zeros(n, dtype=bool)
    holdout[rng.permutation(n)[: int(round(cfg.holdout_fraction * n))]] = True
    s = SampleSet(grid, x, M, holdout)
    s.refresh_prices(params)
    return s


# policies and targets -------------------------------------------------------------------


def policy(net: nn.ValueNetwork, x, M, r, w, j: int, params: EconomyParams):
    """(value, c*, s*) of ``net`` at rows (x, M) with prices (r, w)."""
    v, p = net.grad_x(x, M, r)
    c, s = consumption_rule(x, p, r, w, params.y[j], params)
    return v, c, s


def _chunks(n, per_row):
    step = max(1, int(ROW_BUDGET // max(per_row, 1)))
    for a in range(0, n, step):
        yield slice(a, min(a + step, n))


def transported(nets_i, M, r, w, grid: Grid, params: EconomyParams, tcfg: TransportConfig, rng=None):
    """m*_i for every row of M under the policies of nets_i = (v_i0, v_i1); r, w are (n,) prices at A_i."""
    plans = transport_plan(grid, tcfg.N)
    M = np.atleast_2d(M)
    out = np.empty_like(M)
    width = max(max(nets_i[0].spec.trunk_dims), max(nets_i[1].spec.trunk_dims))
    for sl in _chunks(M.shape[0], width * max(p.x.size for p in plans)):
        xhat = []
        for l in range(2):
            xs = plans[l].x
            _, p = nets_i[l].grad_x_shared(xs, M[sl], r[sl])
            _, s = consumption_rule(xs[None, :], p, r[sl, None], w[sl, None], params.y[l], params)
            xhat.append(xs[None, :] + params.dt * s)
        out[sl] = push_forward_batch(M[sl], xhat, grid, tcfg.N, params.lam, params.dt, tcfg.mode, rng)
    return np.maximum(out, 0.0)


@dataclass
class Targets:
    """Per-sample Bellman targets and auxiliaries for one outer iteration."""

    target: np.ndarray      # (2, 2, n)
    value: np.ndarray       # (2, 2, n) frozen v^n at the samples
    savings: np.ndarray     # (2, 2, n) s* of v^n
    Mstar: np.ndarray       # (2, n, d)


def compute_targets(nets, samples: SampleSet, params: EconomyParams, tcfg: TransportConfig, rng=None,
                    frozen_measure: bool = False) -> Targets:
    """Bellman targets of the frozen nets ``nets[i][j]`` at every sample.

    With ``frozen_measure`` the measure is not transported (m* = m); used by
    the degenerate one-dimensional mode.
    """
    n_agg = len(nets)
    x, M, grid = samples.x, samples.M, samples.grid
    n = x.size
    V = np.empty((n_agg, 2, n))
    C = np.empty((n_agg, 2, n))
    S = np.empty((n_agg, 2, n))
    for i in range(n_agg):
        for j in range(2):
            V[i, j], C[i, j], S[i, j] = policy(nets[i][j], x, M, samples.r[:, i], samples.w[:, i], j, params)
    Mstar = np.empty((n_agg,) + M.shape)
    T = np.empty((n_agg, 2, n))
    disc = params.discount
    for i in range(n_agg):
        if frozen_measure:
            Mstar[i], r_star = M, samples.r[:, i]
        else:
            Mstar[i] = transported(nets[i], M, samples.r[:, i], samples.w[:, i], grid, params, tcfg, rng)
            A_i = (params.A[i],)
            r_star = batch_prices(Mstar[i], grid, params, A_i)[0][:, 0]
        mu = params.mu[i] if n_agg == 2 else 0.0
        for j in range(2):
            xp = x + params.dt * S[i, j]
            cont = nets[i][j].forward(xp, Mstar[i], r_star)
            switch_y = params.lam[j] * params.dt * (V[i, j] - V[i, 1 - j])
            switch_a = mu * params.dt * (V[i, j] - V[1 - i, j]) if n_agg == 2 else 0.0
            T[i, j] = (cont - switch_y - switch_a + params.dt * utility(C[i, j], params.gamma)) / disc
    return Targets(T, V, S, Mstar)


def bellman_target(x, m: DiscreteMeasure, nets, i: int, j: int, params: EconomyParams,
                   tcfg: TransportConfig = TransportConfig(), rng=None) -> float:
    """Target for one state (x, m); see the module docstring."""
    s = SampleSet(m.grid, [float(x)], m.coefficients[None, :], [False])
    s.refresh_prices(params)
    return float(compute_targets(nets, s, params, tcfg, rng).target[i, j, 0])


def residual(V_candidate, x, m: DiscreteMeasure, nets, i: int, j: int, params: EconomyParams,
             tcfg: TransportConfig = TransportConfig(), rng=None) -> float:
    """R = (1 + rho dt) (V - target). ``V_candidate`` is a number or a network."""
    if isinstance(V_candidate, nn.ValueNetwork):
        r = batch_prices(m.coefficients, m.grid, params)[0][0, i]
        V_candidate = float(V_candidate.forward([x], m.coefficients, [r])[0])
    return params.discount * (float(V_candidate) - bellman_target(x, m, nets, i, j, params, tcfg, rng))


def mean_sq_residual(net, samples: SampleSet, mask, target, i: int, params: EconomyParams) -> float:
    v = net.forward(samples.x[mask], samples.M[mask], samples.r[mask, i])
    R = params.discount * (v - target[mask])
    return float(np.mean(R**2))


# one outer step ----------------------------------------------------------------------------


def fixed_point_step(nets, samples: SampleSet, params: EconomyParams, cfg: FixedPointConfig,
                     tcfg: TransportConfig, seed: int, iteration: int, targets: Targets | None = None):
    """Regress every network onto its targets. Returns (new nets, report, targets).

    Each regression starts from the frozen parameters with a fresh optimizer
    state. If training does not lower the training residual, the frozen
    parameters are kept, so the training MSE never increases within a step.
    """
    if targets is None:
        targets = compute_targets(nets, samples, params, tcfg, _seed(seed, 4, iteration) if tcfg.mode == "sampled" else None)
    train = ~samples.holdout
    new = [[None, None] for _ in nets]
    rep = {"iteration": iteration, "train_mse_before": [], "holdout_mse_before": [], "train_mse": [],
           "holdout_mse": [], "accepted": []}
    for i in range(len(nets)):
        for j in range(2):
            t = targets.target[i, j]
            before = mean_sq_residual(nets[i][j], samples, train, t, i, params)
            # residual of the frozen iterate itself: how far it is from a fixed point
            hold_before = (mean_sq_residual(nets[i][j], samples, samples.holdout, t, i, params)
                           if samples.holdout.any() else float("nan"))
            net = nets[i][j].copy()
            # the loss is in value units; residual units differ by the constant factor (1 + rho dt)
            nn.fit(net, samples.x[train], samples.M[train], samples.r[train, i], t[train], cfg.train,
                   _seed(seed, 2, iteration, i, j))
            after = mean_sq_residual(net, samples, train, t, i, params)
            if not np.isfinite(after) or after > cfg.divergence_mse:
                raise DivergenceError(f"net ({i + 1},{j + 1}) diverged at iteration {iteration}: train MSE {after:.3e}")
            accepted = after <= before
            if not accepted:
                net = nets[i][j].copy()
                after = before
            new[i][j] = net
            hold = mean_sq_residual(net, samples, samples.holdout, t, i, params) if samples.holdout.any() else float("nan")
            rep["train_mse_before"].append(before)
            rep["holdout_mse_before"].append(hold_before)
            rep["train_mse"].append(after)
            rep["holdout_mse"].append(hold)
            rep["accepted"].append(bool(accepted))
    rep["mean_train_mse"] = float(np.mean(rep["train_mse"]))
    rep["mean_holdout_mse"] = float(np.mean(rep["holdout_mse"]))
    rep["mean_holdout_mse_before"] = float(np.mean(rep["holdout_mse_before"]))
    return new, rep, targets


def probe_policies(nets, samples: SampleSet, params: EconomyParams):
    """(values, savings), each (n_agg, 2, n_probe), on the holdout states."""
    mask = samples.holdout if samples.holdout.any() else np.ones(len(samples), dtype=bool)
    x, M = samples.x[mask], samples.M[mask]
    V = np.empty((len(nets), 2, x.size))
    S = np.empty_like(V)
    for i in range(len(nets)):
        for j in range(2):
            V[i, j], _, S[i, j] = policy(nets[i][j], x, M, samples.r[mask, i], samples.w[mask, i], j, params)
    return V, S


def refresh_samples(samples: SampleSet, nets, base, cfg: FixedPointConfig, params: EconomyParams,
                    tcfg: TransportConfig, rng) -> None:
    """Replace a share of the training states by fresh draws from the generating mixture.

    The transported part of the fresh draws moves under the current policies, while the
    Dirichlet and perturbed parts keep off-equilibrium states in the set. Holdout states
    are never touched.
    """
    train_idx = np.flatnonzero(~samples.holdout)
    k = int(round(cfg.refresh_fraction * train_idx.size))
    if k == 0:
        return
    idx = np.sort(rng.choice(train_idx, size=k, replace=False))
    fresh = generate_samples(replace(cfg.samples, n_samples=k, holdout_fraction=0.0), samples.grid, base, params,
                             rng, _advance(nets, samples.grid, params, tcfg))
    samples.M[idx] = fresh.M
    samples.x[idx] = fresh.x
    samples.refresh_prices(params)


def _advance(nets, grid: Grid, params: EconomyParams, tcfg: TransportConfig):
    """One-step push-forward of packed rows under the policies of a random aggregate state."""
    def advance(M, rng):
        r, w = batch_prices(M, grid, params)
        i = rng.integers(0, 2)
        return transported(nets[i], M, r[:, i], w[:, i], grid, params, tcfg, rng)

    return advance


# networks --------------------------------------------------------------------------------


def make_nets(spec: nn.NetSpec, scaling: nn.Scaling, seed: int, n_agg: int = 2):
    return [[nn.ValueNetwork.init(spec, scaling, _seed(seed, 0, i, j)) for j in range(2)] for i in range(n_agg)]


def scaling_for(grid: Grid, values, r_center: float, r_scale: float = 0.05) -> nn.Scaling:
    values = np.asarray(values, dtype=float)
    return nn.Scaling.for_grid(grid, r_shift=float(r_center), r_scale=float(r_scale),
                               v_shift=float(np.mean(values)), v_scale=float(np.std(values) or 1.0))


def warm_start(nets, samples: SampleSet, value_fn, cfg: nn.TrainConfig, seed: int) -> None:
    """Regress every net v_ij onto ``value_fn(x, j)`` (e.g. the Aiyagari value) over the samples."""
    for i in range(len(nets)):
        for j in range(2):
            t = value_fn(samples.x, j)
            nn.fit(nets[i][j], samples.x, samples.M, samples.r[:, i], t, cfg, _seed(seed, 1, 1, i, j))


# full solve ---------------------------------------------------------------------------------


@dataclass
class SolveResult:
    nets: list
    history: list
    samples: SampleSet
    run_dir: Path | None = None


def _iter_dir(run_dir: Path, n: int) -> Path:
    return run_dir / f"iter_{n}"


def _ckpt(run_dir: Path, n: int, i: int, j: int) -> Path:
    return _iter_dir(run_dir, n) / f"net_{i + 1}_{j + 1}.ckpt"


def last_complete_iteration(run_dir: Path) -> int:
    """Largest n with all four checkpoints and a report present (0 if none)."""
    best = 0
    if not run_dir.exists():
        return 0
    for d in run_dir.glob("iter_*"):
        try:
            n = int(d.name.split("_", 1)[1])
        except ValueError:
            continue
        if (d / "report.json").exists() and all(_ckpt(run_dir, n, i, j).exists() for i in range(2) for j in range(2)):
            best = max(best, n)
    return best


def load_nets(run_dir: Path, n: int, spec: nn.NetSpec | None = None):
    return [[nn.load(_ckpt(run_dir, n, i, j), spec) for j in range(2)] for i in range(2)]


def _save_samples(run_dir: Path, samples: SampleSet) -> None:
    write_text(run_dir / "samples.json", dumps(samples.to_dict()))


def solve(params: EconomyParams, grid: Grid, base: DiscreteMeasure, spec: nn.NetSpec, cfg: FixedPointConfig,
          tcfg: TransportConfig, seed: int, value_fn=None, r_center: float | None = None,
          run_dir=None, resume: bool = True, config_hash: str = "") -> SolveResult:
    """Outer fixed-point loop with per-iteration checkpoints under ``run_dir``.

    ``base`` seeds the perturbation samples and ``value_fn(x, j)`` (usually the
    Aiyagari value) provides the warm start. With ``resume`` an existing run
    directory continues after its last complete iteration; since every random
    stream is derived from (seed, iteration) the continued run matches an
    uninterrupted one bit for bit.
    """
    run_dir = Path(run_dir) if run_dir is not None else None
    start, history = 0, []
    if run_dir is not None and resume:
        start = last_complete_iteration(run_dir)
        if start:
            sj = run_dir / "samples.json"
            d = json.loads(sj.read_text()) if sj.exists() else None
            if d is None or d["stamp"] != start:
                log.warning("samples.json does not match iteration %d; starting over", start)
                start = 0
    if start:
        nets = load_nets(run_dir, start, spec)
        samples = SampleSet.from_dict(d, params)
        for n in range(1, start + 1):
            history.append(json.loads((_iter_dir(run_dir, n) / "report.json").read_text()))
        log.info("resuming after iteration %d", start)
    else:
        nets, samples = initialize(params, grid, base, spec, cfg, tcfg, seed, value_fn, r_center)
        if run_dir is not None:
            _save_samples(run_dir, samples)

    for n in range(start + 1, cfg.n_outer_iterations + 1):
        t0 = time.perf_counter()
        _, S_old = probe_policies(nets, samples, params)
        nets_new, rep, _ = fixed_point_step(nets, samples, params, cfg, tcfg, seed, n)
        V_new, S_new = probe_policies(nets_new, samples, params)
        rep["policy_change"] = float(np.max(np.abs(S_new - S_old)))
        rep["value_ordering_fraction"] = float(np.mean(V_new[:, 1] >= V_new[:, 0]))
        refresh_samples(samples, nets_new, base, cfg, params, tcfg, _seed(seed, 3, n))
        samples.stamp = n
        nets = nets_new
        rep["param_hashes"] = [nn.param_hash(nets[i][j]) for i in range(2) for j in range(2)]
        rep["wall_time_s"] = time.perf_counter() - t0
        history.append(rep)
        if n % cfg.report_every == 0:
            log.info("iteration %d: train MSE %.3e, holdout MSE %.3e, policy change %.3e",
                     n, rep["mean_train_mse"], rep["mean_holdout_mse"], rep["policy_change"])
        if run_dir is not None:
            for i in range(2):
                for j in range(2):
                    nn.save(nets[i][j], _ckpt(run_dir, n, i, j), config_hash)
            _save_samples(run_dir, samples)
            write_text(_iter_dir(run_dir, n) / "report.json", dumps(rep))
        if cfg.tol > 0 and rep["policy_change"] < cfg.tol:
            log.info("policy change below %.3e; stopping", cfg.tol)
            break
    return SolveResult(nets, history, samples, run_dir)


def initialize(params, grid, base, spec, cfg: FixedPointConfig, tcfg, seed, value_fn=None, r_center=None):
    """Initial networks and sample set (warm-started on ``value_fn`` when configured)."""
    rng = _seed(seed, 1)
    pre = generate_samples(replace(cfg.samples, mix=(cfg.samples.mix[0], cfg.samples.mix[1], 0.0)),
                           grid, base, params, rng)
    r_center = float(np.median(pre.r)) if r_center is None else r_center
    vals = np.concatenate([value_fn(pre.x, j) for j in range(2)]) if value_fn is not None else np.zeros(1)
    scaling = scaling_for(grid, vals, r_center)
    nets = make_nets(spec, scaling, seed)
    if cfg.warm_start == "aiyagari":
        if value_fn is None:
            raise ValueError("warm start needs a value function")
        warm_start(nets, pre, value_fn, cfg.warm_train, seed)
    if cfg.samples.mix[2] > 0:
        samples = generate_samples(cfg.samples, grid, base, params, rng, _advance(nets, grid, params, tcfg))
    else:
        samples = pre
    return nets, samples


# degenerate mode ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrozenConfig:
    n_iterations: int = 400
    tol: float = 1e-6                    # stop when the sup change of the node policy drops below this
    train: nn.TrainConfig = nn.TrainConfig(optimizer="lbfgs", steps=60)
    spec_kw: dict = field(default_factory=lambda: {"trunk_dims": (32, 16), "capital_embed_dim": 64,
                                                   "rate_embed_dim": 4})
    midpoints: bool = True               # also train between nodes
    lower_atom: float = 0.1              # share of extra training states placed exactly at x_lo


@dataclass
class FrozenResult:
    nodes: np.ndarray
    value: np.ndarray      # (2, n)
    consumption: np.ndarray
    savings: np.ndarray
    nets: list
    iterations: int
    history: list


def frozen_measure_mode(params: EconomyParams, r: float, w: float, nodes, cfg: FrozenConfig = FrozenConfig(),
                        seed: int = 0) -> FrozenResult:
    """Fitted value iteration with the measure pinned (A = 1, mu = 0, prices fixed).

    The networks have no adaptive features (d0 = 0) and see a constant rate,
    so the scheme reduces to one-dimensional value iteration on x with the
    same consumption rule, targets and regression as the full solver. The
    start is the value of consuming w y + rho x forever.
    """
    nodes = np.asarray(nodes, dtype=float)
    xs = np.sort(np.concatenate([nodes, 0.5 * (nodes[1:] + nodes[:-1])])) if cfg.midpoints else nodes
    # the borrowing limit is absorbing for the poor type, so errors there are not damped by moving on;
    # it gets its own share of states, as an atom of the wealth distribution would
    n_atom = int(round(cfg.lower_atom * xs.size / max(1.0 - cfg.lower_atom, 1e-12)))
    xs = np.concatenate([np.full(n_atom, params.x_lo), xs])
    grid = Grid.uniform(params.x_lo, params.x_hi, 1)
    m = DiscreteMeasure.uniform(grid)
    n = xs.size
    samples = SampleSet(grid, xs, np.broadcast_to(m.coefficients, (n, grid.d)).copy(), np.zeros(n, dtype=bool))
    samples.r = np.full((n, 1), float(r))
    samples.w = np.full((n, 1), float(w))
    v0 = np.stack([utility(w * params.y[j] + params.rho * (xs - params.x_lo), params.gamma) / params.rho
                   for j in range(2)])
    spec = nn.NetSpec(d=grid.d, d0=0, **cfg.spec_kw)
    scaling = nn.Scaling.for_grid(grid, r_shift=float(r), r_scale=1.0,
                                  v_shift=float(np.mean(v0)), v_scale=float(np.std(v0)))
    nets = [[nn.ValueNetwork.init(spec, scaling, _seed(seed, 0, 0, j)) for j in range(2)]]
    for j in range(2):
        nn.fit(nets[0][j], xs, samples.M, samples.r[:, 0], v0[j], replace(cfg.train, steps=4 * cfg.train.steps),
               _seed(seed, 1, j))
    tcfg = TransportConfig()
    history = []
    S_old = None
    it = 0
    for it in range(1, cfg.n_iterations + 1):
        tg = compute_targets(nets, samples, params, tcfg, frozen_measure=True)
        for j in range(2):
            nn.fit(nets[0][j], xs, samples.M, samples.r[:, 0], tg.target[0, j], cfg.train, _seed(seed, 2, it, j))
        _, _, S = _frozen_policy(nets, nodes, r, w, params, m)
        change = np.inf if S_old is None else float(np.max(np.abs(S - S_old)))
        fit_mse = float(np.mean([(nets[0][j].forward(xs, samples.M, samples.r[:, 0]) - tg.target[0, j]) ** 2
                                 for j in range(2)]))
        history.append({"iteration": it, "policy_change": change, "fit_mse": fit_mse})
        S_old = S
        if change < cfg.tol:
            break
    V, C, S = _frozen_policy(nets, nodes, r, w, params, m)
    return FrozenResult(nodes, V, C, S, nets, it, history)


def _frozen_policy(nets, x, r, w, params, m):
    M = m.coefficients[None, :]
    out = [policy(nets[0][j], x, M, np.full(x.size, r), np.full(x.size, w), j, params) for j in range(2)]
    return tuple(np.stack([o[k] for o in out]) for k in range(3))

"""Semi-Lagrangian push-forward of discrete measures over one time step.

Every Dirac mass and N equally spaced interior points per cell are moved by the
savings policy, x -> x + dt s(x), switch productivity level with probability
lam_l dt, and are re-binned onto the fixed grid. A point coming from cell p of
level l carries the mass alpha_{p,l} h_{p,l} / N, so the scheme conserves mass
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .measures import DiscreteMeasure, Grid

MODES = ("expected-split", "sampled")


@dataclass(frozen=True)
class TransportConfig:
    N: int = 10
    mode: str = "expected-split"
    rng_seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def sample_points(grid: Grid, N: int):
    """Interior points x_k + n/(N+1) h_k, n = 1..N, as one (K_j, N) array per level."""
    frac = np.arange(1, N + 1) / (N + 1)
    out = []
    for j in range(2):
        b = grid.breakpoints[j]
        out.append(b[:-1, None] + frac[None, :] * np.diff(b)[:, None])
    return out


@dataclass(frozen=True)
class Plan:
    """Source points of one level: positions, packed source slot, mass factor."""

    x: np.ndarray
    src: np.ndarray
    weight: np.ndarray


@lru_cache(maxsize=64)
def transport_plan(grid: Grid, N: int):
    """Per-level ordered source points: lower Dirac, cell-major interior points, upper Dirac."""
    pts = sample_points(grid, N)
    plans = []
    for j in range(2):
        o, K = grid.offsets[j], grid.K[j]
        h = grid.widths(j)
        x = np.concatenate([[grid.x_lo], pts[j].ravel(), [grid.x_hi]])
        src = np.concatenate([[o], np.repeat(np.arange(o + 1, o + 1 + K), N), [o + K + 1]])
        weight = np.concatenate([[1.0], np.repeat(h / N, N), [1.0]])
        for a in (x, src, weight):
            a.setflags(write=False)
        plans.append(Plan(x, src, weight))
    return tuple(plans)


def bin_slot(xhat, j: int, grid: Grid):
    """Packed slot receiving a point at ``xhat`` on level ``j``.

    x <= x_lo goes to the lower Dirac, x in (x_k, x_{k+1}] to cell k, and
    x >= x_hi to the upper Dirac.
    """
    xhat = np.asarray(xhat, dtype=float)
    b = grid.breakpoints[j]
    K = grid.K[j]
    local = np.searchsorted(b, xhat, side="left")
    local = np.where(xhat <= grid.x_lo, 0, np.where(xhat >= grid.x_hi, K + 1, local))
    return grid.offsets[j] + local


def push_forward_batch(M, xhat, grid: Grid, N: int, lam, dt: float, mode: str = "expected-split", rng=None):
    """Transport a batch of packed measures given the landing positions of their source points.

    ``xhat[l]`` has shape (n, P_l), or (P_l,) when shared by all rows, ordered
    as :func:`transport_plan`. Returns the (n, d) transported coefficients.
    Contributions are accumulated in a fixed order (level, row, point).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    if mode == "sampled" and rng is None:
        raise ValueError("sampled mode needs an rng")
    plans = transport_plan(grid, N)
    inv_w = 1.0 / grid.slot_widths
    rows = np.arange(n)[:, None] * grid.d
    idx, val = [], []
    for l in range(2):
        xl = np.asarray(xhat[l], dtype=float)
        if np.any(np.isnan(xl)):
            raise ValueError("NaN savings")
        xl = np.broadcast_to(xl, (n, plans[l].x.size))
        q = M[:, plans[l].src] * plans[l].weight
        p_switch = lam[l] * dt
        if mode == "expected-split":
            for j, prob in ((l, 1.0 - p_switch), (1 - l, p_switch)):
                if prob == 0.0:
                    continue
                slot = bin_slot(xl, j, grid)
                idx.append((rows + slot).ravel())
                val.append((q * prob * inv_w[slot]).ravel())
        else:
            switch = rng.random(xl.shape) < p_switch
            slot = np.where(switch, bin_slot(xl, 1 - l, grid), bin_slot(xl, l, grid))
            idx.append((rows + slot).ravel())
            val.append((q * inv_w[slot]).ravel())
    out = np.bincount(np.concatenate(idx), weights=np.concatenate(val), minlength=n * grid.d)
    return out.reshape(n, grid.d)


def push_forward(m: DiscreteMeasure, savings_policy, params, config: TransportConfig = TransportConfig(), rng=None):
    """One-step push-forward of ``m`` under ``savings_policy(x, j) -> s``.

    In sampled mode ``rng`` defaults to a generator seeded from ``config.rng_seed``.
    """
    grid = m.grid
    plans = transport_plan(grid, config.N)
    xhat = []
    for l in range(2):
        s = np.asarray(savings_policy(plans[l].x, l), dtype=float)
        if np.any(np.isnan(s)):
            raise ValueError("NaN savings")
        xhat.append(plans[l].x + params.dt * s)
    if config.mode == "sampled" and rng is None:
        rng = np.random.default_rng(config.rng_seed)
    out = push_forward_batch(m.coefficients, xhat, grid, config.N, params.lam, params.dt, config.mode, rng)[0]
    return DiscreteMeasure(grid, np.maximum(out, 0.0))


def transition_matrix(grid: Grid, savings_policy, params, N: int):
    """Sparse (d, d) matrix T with push_forward(M) = T @ M in expected-split mode."""
    plans = transport_plan(grid, N)
    inv_w = 1.0 / grid.slot_widths
    rows, cols, vals = [], [], []
    for l in range(2):
        plan = plans[l]
        xh = plan.x + params.dt * np.asarray(savings_policy(plan.x, l), dtype=float)
        p_switch = params.lam[l] * params.dt
        for j, prob in ((l, 1.0 - p_switch), (1 - l, p_switch)):
            if prob == 0.0:
                continue
            slot = bin_slot(xh, j, grid)
            rows.append(slot)
            cols.append(plan.src)
            vals.append(plan.weight * prob * inv_w[slot])
    T = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.d, grid.d)
    )
    return T.tocsr()

"""Discrete probability measures on [x_lo, x_hi] x {y1, y2}.

Each productivity level j carries a Dirac mass at x_lo, piecewise-constant
densities on the cells of its own subdivision, and a Dirac mass at x_hi.
Packed coefficient vectors follow the layout

    (lo_1, cell_{0,1}, ..., cell_{K1-1,1}, hi_1, lo_2, cell_{0,2}, ..., hi_2)

so that ``d = K1 + K2 + 4``. Cell coefficients are densities (mass per unit
length); Dirac coefficients are masses.
"""

from __future__ import annotations

import json

import numpy as np

from ._io import dumps

MASS_TOL = 1e-12


class MeasureError(ValueError):
    pass


class Grid:
    """Two increasing subdivisions of [x_lo, x_hi], one per productivity level."""

    def __init__(self, breakpoints_1, breakpoints_2):
        bps = []
        for b in (breakpoints_1, breakpoints_2):
            b = np.array(b, dtype=float)
            if b.ndim != 1 or b.size < 2:
                raise MeasureError("each level needs at least one cell")
            if np.any(np.diff(b) <= 0):
                raise MeasureError("breakpoints must be strictly increasing")
            b.setflags(write=False)
            bps.append(b)
        if bps[0][0] != bps[1][0] or bps[0][-1] != bps[1][-1]:
            raise MeasureError("both subdivisions must span the same interval")
        self.breakpoints = tuple(bps)
        self.x_lo = float(bps[0][0])
        self.x_hi = float(bps[0][-1])
        self.K = (bps[0].size - 1, bps[1].size - 1)
        self.d = self.K[0] + self.K[1] + 4
        self.offsets = (0, self.K[0] + 2)

        widths, moments, level = [], [], []
        for j, b in enumerate(bps):
            h = np.diff(b)
            widths += [np.ones(1), h, np.ones(1)]
            moments += [[self.x_lo], h * 0.5 * (b[:-1] + b[1:]), [self.x_hi]]
            level += [j] * (h.size + 2)
        self.slot_widths = np.concatenate(widths)
        self.slot_moments = np.concatenate([np.asarray(m, dtype=float) for m in moments])
        self.slot_level = np.array(level)
        for a in (self.slot_widths, self.slot_moments, self.slot_level):
            a.setflags(write=False)

    @classmethod
    def uniform(cls, x_lo: float, x_hi: float, K1: int, K2: int | None = None) -> "Grid":
        K2 = K1 if K2 is None else K2
        return cls(np.linspace(x_lo, x_hi, K1 + 1), np.linspace(x_lo, x_hi, K2 + 1))

    def widths(self, j: int) -> np.ndarray:
        return np.diff(self.breakpoints[j])

    def level_slice(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j] + self.K[j] + 2)

    def __eq__(self, other):
        return isinstance(other, Grid) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.breakpoints, other.breakpoints)
        )

    def __hash__(self):
        return hash(tuple(tuple(b.tolist()) for b in self.breakpoints))

    def __repr__(self):
        return f"Grid(K={self.K}, [{self.x_lo}, {self.x_hi}])"

    def to_dict(self) -> dict:
        return {"y1": self.breakpoints[0].tolist(), "y2": self.breakpoints[1].tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(d["y1"], d["y2"])


def total_mass(M, grid: Grid):
    """Total mass of one packed vector or of a batch (rows)."""
    return np.asarray(M) @ grid.slot_widths


def slot_masses(M, grid: Grid):
    return np.asarray(M) * grid.slot_widths


def check_coefficients(M, grid: Grid, normalize: bool = False) -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.shape[-1] != grid.d:
        raise MeasureError(f"dimension mismatch: expected {grid.d} coefficients, got {M.shape[-1]}")
    if not np.all(np.isfinite(M)):
        raise MeasureError("non-finite coefficient")
    if np.any(M < 0):
        raise MeasureError("negative coefficient")
    mass = total_mass(M, grid)
    if normalize:
        M = M / np.expand_dims(mass, -1)
    elif np.any(np.abs(mass - 1.0) > MASS_TOL):
        worst = float(np.max(np.abs(mass - 1.0)))
        raise MeasureError(f"mass differs from 1 by {worst:.3e}")
    return M


class DiscreteMeasure:
    """Immutable discrete measure on a :class:`Grid`.

    ``normalize=True`` rescales the coefficients to unit mass instead of
    raising when the mass is off.
    """

    def __init__(self, grid: Grid, coefficients, normalize: bool = False):
        M = check_coefficients(coefficients, grid, normalize=normalize)
        if M.ndim != 1:
            raise MeasureError("expected a single coefficient vector")
        M.setflags(write=False)
        self.grid = grid
        self.coefficients = M

    @classmethod
    def from_parts(cls, grid: Grid, dirac_lo, cells, dirac_hi, normalize: bool = False):
        parts = []
        for j in range(2):
            parts += [[dirac_lo[j]], np.asarray(cells[j], dtype=float), [dirac_hi[j]]]
        return cls(grid, np.concatenate([np.asarray(p, dtype=float) for p in parts]), normalize=normalize)

    @classmethod
    def dirac(cls, grid: Grid, where: str, j: int) -> "DiscreteMeasure":
        M = np.zeros(grid.d)
        sl = grid.level_slice(j)
        M[sl.start if where == "lo" else sl.stop - 1] = 1.0
        return cls(grid, M)

    @classmethod
    def uniform(cls, grid: Grid, level_mass=(0.5, 0.5)) -> "DiscreteMeasure":
        cells = [np.full(grid.K[j], level_mass[j] / (grid.x_hi - grid.x_lo)) for j in range(2)]
        return cls.from_parts(grid, (0.0, 0.0), cells, (0.0, 0.0))

    @property
    def dirac_lo(self) -> np.ndarray:
        return self.coefficients[[self.grid.offsets[0], self.grid.offsets[1]]]

    @property
    def dirac_hi(self) -> np.ndarray:
        o, K = self.grid.offsets, self.grid.K
        return self.coefficients[[o[0] + K[0] + 1, o[1] + K[1] + 1]]

    def cells(self, j: int) -> np.ndarray:
        o = self.grid.offsets[j]
        return self.coefficients[o + 1 : o + 1 + self.grid.K[j]]

    def cell_masses(self, j: int) -> np.ndarray:
        return self.cells(j) * self.grid.widths(j)

    def level_mass(self, j: int) -> float:
        return float(self.coefficients[self.grid.level_slice(j)] @ self.grid.slot_widths[self.grid.level_slice(j)])

    @property
    def mass(self) -> float:
        return float(total_mass(self.coefficients, self.grid))

    def __repr__(self):
        return f"DiscreteMeasure({self.grid!r}, mass={self.mass:.15f})"

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "dirac_lo": self.dirac_lo.tolist(),
            "cells_y1": self.cells(0).tolist(),
            "cells_y2": self.cells(1).tolist(),
            "dirac_hi": self.dirac_hi.tolist(),
            "cell_masses_y1": self.cell_masses(0).tolist(),
            "cell_masses_y2": self.cell_masses(1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, normalize: bool = False) -> "DiscreteMeasure":
        grid = Grid.from_dict(d["grid"])
        return cls.from_parts(grid, d["dirac_lo"], (d["cells_y1"], d["cells_y2"]), d["dirac_hi"], normalize=normalize)

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, normalize: bool = False) -> "DiscreteMeasure":
        return cls.from_dict(json.loads(text), normalize=normalize)


def pack(m: DiscreteMeasure) -> np.ndarray:
    return m.coefficients.copy()


def unpack(M, grid: Grid, normalize: bool = False) -> DiscreteMeasure:
    return DiscreteMeasure(grid, M, normalize=normalize)


def aggregates(m, y=(0.7, 1.4), grid: Grid | None = None):
    """Aggregate capital X and labor Y.

    Accepts a :class:`DiscreteMeasure`, or raw packed vectors (1-d or a batch of
    rows) together with ``grid``. The midpoint rule is exact for piecewise
    constant densities.
    """
    if isinstance(m, DiscreteMeasure):
        grid, M = m.grid, m.coefficients
    else:
        M = np.asarray(m, dtype=float)
    X = M @ grid.slot_moments
    Y = M @ (grid.slot_widths * np.asarray(y, dtype=float)[grid.slot_level])
    if np.ndim(X) == 0:
        return float(X), float(Y)
    return X, Y


def _level_cdf(m: DiscreteMeasure, j: int):
    b = m.grid.breakpoints[j]
    return b, np.concatenate([[0.0], np.cumsum(m.cell_masses(j))])


def equal_mass_grid(fine_measure: DiscreteMeasure, K1: int, K2: int) -> Grid:
    """Subdivisions whose cells carry equal interior mass of ``fine_measure``.

    The interior cumulative mass is piecewise linear, so quantiles are found by
    exact inversion; endpoints stay pinned to x_lo and x_hi.
    """
    out = []
    for j, K in enumerate((K1, K2)):
        b, C = _level_cdf(fine_measure, j)
        npos = int(np.count_nonzero(fine_measure.cell_masses(j) > 0))
        if K < 1:
            raise MeasureError("need at least one cell per level")
        if K > npos:
            raise MeasureError(f"level {j + 1}: {K} cells requested but only {npos} fine cells carry mass")
        total = C[-1]
        targets = total * np.arange(1, K) / K
        c = np.searchsorted(C, targets, side="left") - 1
        frac = (targets - C[c]) / (C[c + 1] - C[c])
        inner = b[c] + frac * (b[c + 1] - b[c])
        out.append(np.concatenate([[b[0]], inner, [b[-1]]]))
    return Grid(*out)


def project(m: DiscreteMeasure, grid: Grid) -> DiscreteMeasure:
    """Conservative projection onto another grid on the same interval.

    Coarse cell masses are differences of the (piecewise linear) interior CDF,
    so mass is preserved exactly up to rounding; Dirac coefficients carry over.
    """
    if grid.x_lo != m.grid.x_lo or grid.x_hi != m.grid.x_hi:
        raise MeasureError("grids must span the same interval")
    cells = []
    for j in range(2):
        b, C = _level_cdf(m, j)
        Cc = np.interp(grid.breakpoints[j], b, C)
        cells.append(np.maximum(np.diff(Cc), 0.0) / grid.widths(j))
    return DiscreteMeasure.from_parts(grid, m.dirac_lo, cells, m.dirac_hi, normalize=True)

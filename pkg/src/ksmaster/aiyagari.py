"""Stationary equilibrium without aggregate shocks (A = 1, mu = 0).

The household problem is solved with the same time step, consumption rule and
transport operator as the Krusell-Smith solver, so the two can be compared
like for like. The value lives on a node grid with linear interpolation; the
policy at any x is the consumption rule applied at x with the marginal value
read off a fixed-width central stencil.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._io import dumps
from .economy import EconomyParams, consumption_rule, prices, utility, wage_from_rate
from .measures import DiscreteMeasure, Grid, aggregates
from .transport import transition_matrix

log = logging.getLogger(__name__)

RELAXATION_LADDER = (1.0, 0.5, 0.2, 0.1, 0.05)
CLOSURE_SPAN = 1.0  # node spacing used to continue V past x_hi


class ConvergenceError(RuntimeError):
    pass


def node_grid(params: EconomyParams, n: int = 600, stretch: float = 2.0) -> np.ndarray:
    """Nodes on [x_lo, x_hi], geometrically denser near the borrowing limit."""
    u = np.linspace(0.0, 1.0, n)
    return params.x_lo + (params.x_hi - params.x_lo) * np.expm1(stretch * u) / np.expm1(stretch)


def stencil_slope(Vj, nodes, eta: float, x=None):
    """Marginal value (V(x+eta) - V(x-eta)) / (2 eta), one-sided at the borrowing limit.

    ``x`` defaults to the nodes. A fixed stencil wider than the node spacing
    keeps the consumption rule (which reads the slope at x, not at the landing
    point) from exciting node-to-node oscillations. Near x_hi the upper point
    uses the extension of ``value_interp``.
    """
    x = nodes if x is None else np.asarray(x, dtype=float)
    xp = x + eta
    xm = np.maximum(x - eta, nodes[0])
    return (value_interp(xp, nodes, Vj, eta) - np.interp(xm, nodes, Vj)) / (xp - xm)


def value_interp(x, nodes, Vj, eta: float):
    """Piecewise-linear value, continued past x_hi by the quadratic through x_hi - 2l, x_hi - l, x_hi.

    l is ``CLOSURE_SPAN``, wide enough to see curvature on any node grid. ``eta``
    is accepted for signature symmetry with ``stencil_slope``.

    Savings may carry a household beyond the truncation point. Freezing the
    value there (or continuing it linearly) forces a spurious boundary layer
    in the policy below x_hi; carrying the local curvature on does not.
    """
    x = np.asarray(x, dtype=float)
    v = np.interp(x, nodes, Vj)
    above = x > nodes[-1]
    if np.any(above):
        top = nodes[-1]
        l = CLOSURE_SPAN
        v0, v1, v2 = np.interp([top, top - l, top - 2 * l], nodes, Vj)
        slope = (3 * v0 - 4 * v1 + v2) / (2 * l)
        curv = (v0 - 2 * v1 + v2) / l**2
        h = x - top
        v = np.where(above, v0 + slope * h + 0.5 * curv * h * h, v)
    return v


@dataclass
class HouseholdSolution:
    nodes: np.ndarray
    value: np.ndarray        # (2, n)
    consumption: np.ndarray  # (2, n), policy at the nodes
    savings: np.ndarray      # (2, n)
    iterations: int
    r: float
    w: float
    params: EconomyParams
    eta: float

    def value_at(self, x, j):
        return value_interp(x, self.nodes, self.value[j], self.eta)

    def policy(self, x, j):
        """(c, s) from the consumption rule at x; equals the stored arrays at the nodes."""
        x = np.asarray(x, dtype=float)
        p = stencil_slope(self.value[j], self.nodes, self.eta, x)
        return consumption_rule(x, p, self.r, self.w, self.params.y[j], self.params)

    def savings_policy(self, x, j):
        return self.policy(x, j)[1]


def bellman_update(V, nodes, r, w, params: EconomyParams, eta: float = 0.05):
    """One application of the discrete Bellman operator on the node grid (mu = 0)."""
    new = np.empty_like(V)
    c_all = np.empty_like(V)
    s_all = np.empty_like(V)
    for j in range(2):
        c, s = consumption_rule(nodes, stencil_slope(V[j], nodes, eta), r, w, params.y[j], params)
        cont = value_interp(nodes + params.dt * s, nodes, V[j], eta)
        switch = params.lam[j] * params.dt * (V[j] - V[1 - j])
        new[j] = (cont - switch + params.dt * utility(c, params.gamma)) / params.discount
        c_all[j], s_all[j] = c, s
    return new, c_all, s_all


def initial_value(nodes, r, w, params: EconomyParams):
    """Value of consuming w y + rho (x - x_lo) forever: concave, with a sensible slope."""
    return np.stack(
        [utility(w * params.y[j] + params.rho * (nodes - params.x_lo), params.gamma) / params.rho for j in range(2)]
    )


def _iterate(V, nodes, r, w, params, eta, omega, tol, max_iter):
    """Relaxed sweeps V <- V + omega (T V - V); returns (final arrays or None, iterations, last change)."""
    diff = np.inf
    for it in range(1, max_iter + 1):
        Vn, c, s = bellman_update(V, nodes, r, w, params, eta)
        diff = float(np.max(np.abs(Vn - V)))
        if diff < tol:
            return (Vn, c, s), it, diff
        V = V + omega * (Vn - V)
        # the exact operator preserves monotonicity in x; losing it means the sweep is unstable
        if not np.isfinite(diff) or np.min(np.diff(V, axis=1)) < 0:
            return None, it, diff
    return None, max_iter, diff


def solve_individual(r, w, nodes, params: EconomyParams, tol=1e-9, max_iter=100000, v0=None,
                     eta: float = 0.05, relaxation=RELAXATION_LADDER) -> HouseholdSolution:
    """Value iteration until the sup-norm change drops below ``tol``.

    The first attempt is plain iteration. If V stops being nondecreasing in x
    (the explicit consumption rule can oscillate when wages are large), or the
    attempt needs more than three times the sweeps a contraction with factor
    1/(1 + rho dt) would, the solve restarts from the initial guess with the
    next, smaller relaxation factor omega in V <- V + omega (T V - V). All
    attempts share the same fixed point.
    """
    if w <= 0:
        raise ValueError("wage must be positive")
    if r >= params.rho:
        raise ValueError("need r < rho for a bounded stationary problem")
    nodes = np.asarray(nodes, dtype=float)
    start = initial_value(nodes, r, w, params) if v0 is None else np.array(v0, dtype=float)
    total, diff = 0, np.inf
    sweeps = 3.0 * np.log(tol) / -np.log(params.discount)
    for omega in relaxation:
        budget = min(max_iter - total, int(np.ceil(sweeps / omega)))
        if budget <= 0:
            break
        out, it, diff = _iterate(start, nodes, r, w, params, eta, omega, tol, budget)
        total += it
        if out is not None:
            V, c, s = out
            return HouseholdSolution(nodes, V, c, s, total, float(r), float(w), params, eta)
        log.debug("r=%.6f: sweep with omega=%g failed after %d iterations (change %.3e)", r, omega, it, diff)
        start = initial_value(nodes, r, w, params)
    raise ConvergenceError(f"value iteration did not converge at r={r:.6g} (last change {diff:.3e})")


def total_variation(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    return 0.5 * float(np.sum(np.abs(a - b) * grid.slot_widths))


def stationary_measure(savings_policy, fine_grid: Grid, params: EconomyParams, N: int = 5, tol=1e-10,
                       max_iter=200000, m0: DiscreteMeasure | None = None) -> DiscreteMeasure:
    """Iterate the expected-split push-forward to its fixed point, from uniform unless ``m0`` is given."""
    T = transition_matrix(fine_grid, savings_policy, params, N)
    M = (m0 if m0 is not None else DiscreteMeasure.uniform(fine_grid)).coefficients.copy()
    for _ in range(max_iter):
        Mn = T @ M
        if total_variation(Mn, M, fine_grid) < tol:
            return DiscreteMeasure(fine_grid, Mn, normalize=True)
        M = Mn
    raise ConvergenceError("stationary distribution did not converge")


def implied_rate(m, params: EconomyParams, grid=None) -> float:
    """Interest rate from the A = 1 firm conditions at the aggregates of ``m``."""
    X, Y = aggregates(m, params.y, grid)
    if X <= 0:
        return np.inf
    return float(prices(X, Y, 1.0, params)[0])


@dataclass
class AiyagariEquilibrium:
    r: float
    w: float
    household: HouseholdSolution
    measure: DiscreteMeasure
    gap: float
    iterations: int
    history: list = field(default_factory=list)

    def savings_policy(self, x, j):
        return self.household.savings_policy(x, j)

    def value_at(self, x, j):
        return self.household.value_at(x, j)

    def to_dict(self) -> dict:
        h = self.household
        return {
            "r": self.r,
            "w": self.w,
            "market_clearing_gap": self.gap,
            "iterations": self.iterations,
            "params": h.params.to_dict(),
            "stencil_width": h.eta,
            "nodes": h.nodes.tolist(),
            "savings_y1": h.savings[0].tolist(),
            "savings_y2": h.savings[1].tolist(),
            "consumption_y1": h.consumption[0].tolist(),
            "consumption_y2": h.consumption[1].tolist(),
            "value_y1": h.value[0].tolist(),
            "value_y2": h.value[1].tolist(),
            "bisection": [list(p) for p in self.history],
            "measure": self.measure.to_dict(),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "AiyagariEquilibrium":
        params = EconomyParams(**d["params"])
        h = HouseholdSolution(
            np.asarray(d["nodes"], dtype=float),
            np.array([d["value_y1"], d["value_y2"]], dtype=float),
            np.array([d["consumption_y1"], d["consumption_y2"]], dtype=float),
            np.array([d["savings_y1"], d["savings_y2"]], dtype=float),
            0,
            d["r"],
            d["w"],
            params,
            d["stencil_width"],
        )
        return cls(d["r"], d["w"], h, DiscreteMeasure.from_dict(d["measure"], normalize=True),
                   d["market_clearing_gap"], d["iterations"], [tuple(p) for p in d.get("bisection", [])])


def equilibrium(params: EconomyParams, n_nodes: int = 600, n_cells: int = 3000, N: int = 5,
                tol: float = 1e-4, max_bisections: int = 60, max_shrinks: int = 8,
                eta: float = 0.05) -> AiyagariEquilibrium:
    """Bisection on r over (-delta, rho) until the implied rate matches within ``tol``.

    The bracket starts at (-delta + 1e-4, rho - 1e-4). Near -delta the wage
    diverges and the household sweep has no stable fixed point on the
    truncated wealth range; an endpoint where the household problem cannot be
    solved is moved halfway towards the bracket centre (at most
    ``max_shrinks`` times) before the sign check.
    """
    nodes = node_grid(params, n_nodes)
    fine = Grid.uniform(params.x_lo, params.x_hi, n_cells)
    cache = {"v": None, "m": None}
    history = []

    def excess(r, warm=True):
        w = float(wage_from_rate(r, 1.0, params))
        hh = solve_individual(r, w, nodes, params, v0=cache["v"] if warm else None, eta=eta)
        m = stationary_measure(hh.savings_policy, fine, params, N=N, m0=cache["m"] if warm else None)
        cache["v"], cache["m"] = hh.value, m
        gap = implied_rate(m, params) - r
        history.append((r, gap))
        log.debug("r=%.8f implied-r gap=%.3e", r, gap)
        return gap, w, hh, m

    def endpoint(r, centre):
        for _ in range(max_shrinks + 1):
            try:
                return r, excess(r, warm=False)[0]
            except ConvergenceError as err:
                log.info("bracket end r=%.6g unusable (%s); moving inwards", r, err)
                r = 0.5 * (r + centre)
        raise ConvergenceError("could not solve the household problem near the bracket end")

    lo, hi = -params.delta + 1e-4, params.rho - 1e-4
    centre = 0.5 * (lo + hi)
    lo, f_lo = endpoint(lo, centre)
    hi, f_hi = endpoint(hi, centre)
    if not (f_lo > 0 > f_hi):
        raise ConvergenceError(f"no sign change of the excess rate on [{lo}, {hi}]: {f_lo}, {f_hi}")
    for it in range(1, max_bisections + 1):
        mid = 0.5 * (lo + hi)
        gap, w, hh, m = excess(mid)
        if abs(gap) <= tol:
            return AiyagariEquilibrium(mid, w, hh, m, abs(gap), it, history)
        if gap > 0:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError("bisection did not reach the market-clearing tolerance")

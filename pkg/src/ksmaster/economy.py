"""Model primitives: Cobb-Douglas prices, CRRA utility, Hamiltonian, consumption rule."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .measures import DiscreteMeasure, MeasureError, aggregates


class InfeasibleState(ValueError):
    pass


@dataclass(frozen=True)
class EconomyParams:
    alpha: float = 0.5          # capital share
    delta: float = 0.05         # depreciation /yr
    rho: float = 0.15           # discount rate /yr
    gamma: float = 2.0          # CRRA coefficient
    A: tuple = (0.9, 1.1)       # aggregate productivity (slow, fast)
    mu: tuple = (0.2, 0.2)      # aggregate switching intensities /yr
    y: tuple = (0.7, 1.4)       # idiosyncratic productivity levels
    lam: tuple = (0.05, 0.1)    # idiosyncratic switching intensities /yr
    x_lo: float = 0.0           # borrowing limit
    x_hi: float = 30.0          # truncation of the wealth support
    dt: float = 0.25            # time step (yr)
    eps_p: float = 1e-10        # floor on the marginal value in the consumption rule

    def __post_init__(self):
        for name in ("A", "mu", "y", "lam"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma <= 0 or self.gamma == 1:
            raise ValueError("gamma must be positive and different from 1")
        if not self.A[0] < self.A[1]:
            raise ValueError("need A1 < A2")
        if not self.y[0] < self.y[1]:
            raise ValueError("need y1 < y2")
        if min(self.lam + self.mu) < 0:
            raise ValueError("switching intensities must be nonnegative")
        if max(self.lam + self.mu) * self.dt >= 1:
            raise ValueError("switching probability per step must be below 1")
        if not self.x_lo < self.x_hi:
            raise ValueError("need x_lo < x_hi")
        if self.dt <= 0 or self.eps_p <= 0:
            raise ValueError("dt and eps_p must be positive")

    def replace(self, **kw) -> "EconomyParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def discount(self) -> float:
        return 1.0 + self.rho * self.dt


def production(X, Y, i: int, params: EconomyParams):
    """Output A_i X^alpha Y^(1-alpha); ``i`` is 0 (slow) or 1 (fast)."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    if np.any(X <= 0) or np.any(Y <= 0):
        raise ValueError("production needs positive capital and labor")
    return params.A[i] * X**params.alpha * Y ** (1 - params.alpha)


def prices(X, Y, A: float, params: EconomyParams):
    """Interest rate and wage from the firm's first-order conditions."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    if np.any(X <= 0) or np.any(Y <= 0):
        raise MeasureError("degenerate aggregates")
    a = params.alpha
    r = a * A * (Y / X) ** (1 - a) - params.delta
    w = (1 - a) * A * (X / Y) ** a
    return r, w


def factor_prices(m, i: int, params: EconomyParams, grid=None):
    """(r_i(m), w_i(m)) for a measure or packed coefficient vector(s)."""
    X, Y = aggregates(m, params.y, grid)
    r, w = prices(X, Y, params.A[i], params)
    if np.ndim(r) == 0:
        return float(r), float(w)
    return r, w


def wage_from_rate(r, A: float, params: EconomyParams):
    """The wage consistent with interest rate ``r`` under productivity ``A``."""
    a = params.alpha
    ratio = (a * A / (np.asarray(r, dtype=float) + params.delta)) ** (1 / (1 - a))
    return (1 - a) * A * ratio**a


def utility(c, gamma: float):
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("utility needs positive consumption")
    return c ** (1 - gamma) / (1 - gamma)


def marginal_utility(c, gamma: float):
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("marginal utility needs positive consumption")
    return c ** (-gamma)


def hamiltonian(p, gamma: float):
    """H(p) = max_{c>=0} (-p c + u(c)) = gamma/(1-gamma) p^(1-1/gamma), finite for p > 0."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ValueError("infinite Hamiltonian: p must be positive")
    return gamma / (1 - gamma) * p ** (1 - 1 / gamma)


def hamiltonian_prime(p, gamma: float):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ValueError("infinite Hamiltonian: p must be positive")
    return -(p ** (-1 / gamma))


def consumption_rule(x, dvdx, r, w, y, params: EconomyParams):
    """Constrained optimal consumption and savings, vectorized.

    c = min(max(dvdx, eps_p)^(-1/gamma), (x - x_lo)/dt + w y + r x). When the
    state constraint binds, savings are set to exactly -(x - x_lo)/dt so that
    the next state lands on x_lo.
    """
    x = np.asarray(x, dtype=float)
    income = w * y + r * x
    budget = (x - params.x_lo) / params.dt + income
    if np.any(budget <= 0):
        raise InfeasibleState("infeasible state: nonpositive consumption budget")
    c_free = np.maximum(dvdx, params.eps_p) ** (-1.0 / params.gamma)
    bind = c_free >= budget
    c = np.where(bind, budget, c_free)
    s = np.where(bind, -(x - params.x_lo) / params.dt, income - c_free)
    return c, s


def optimal_consumption(x, dvdx, m: DiscreteMeasure, i: int, j: int, params: EconomyParams):
    r, w = factor_prices(m, i, params)
    return consumption_rule(x, dvdx, r, w, params.y[j], params)[0]


def savings(x, m: DiscreteMeasure, i: int, j: int, c, params: EconomyParams):
    """w_i(m) y_j + r_i(m) x - c."""
    r, w = factor_prices(m, i, params)
    return w * params.y[j] + r * np.asarray(x, dtype=float) - c

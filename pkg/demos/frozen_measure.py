"""Frozen-measure mode: the neural value iteration with prices pinned, against the grid solution.

With the measure fixed the master equation collapses to a one-dimensional
household problem, so the network policy should reproduce the finite
difference policy of the stationary equilibrium.

    python demos/frozen_measure.py --iterations 100
"""
import argparse
from dataclasses import replace

import numpy as np

from ksmaster import EconomyParams, frozen_measure_mode
from ksmaster import aiyagari as A
from ksmaster.solver import FrozenConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=100)
    ap.add_argument("--nodes", type=int, default=200)
    args = ap.parse_args()

    p = EconomyParams()
    eq = A.equilibrium(p, n_nodes=args.nodes, n_cells=600)
    h = eq.household
    res = frozen_measure_mode(p, eq.r, eq.w, h.nodes, replace(FrozenConfig(), n_iterations=args.iterations))
    err = np.abs(res.savings - h.savings)
    print(f"{res.iterations} iterations, sup |s_net - s_grid| = {err.max():.4f} (y1 {err[0].max():.4f}, "
          f"y2 {err[1].max():.4f})")
    for rec in res.history[:: max(1, len(res.history) // 8)]:
        print(f"  iteration {rec['iteration']:4d}  fit MSE {rec['fit_mse']:.2e}  policy change {rec['policy_change']:.2e}")


if __name__ == "__main__":
    main()

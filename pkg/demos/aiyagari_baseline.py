"""Stationary equilibrium without aggregate shocks, and the equal-mass grid built from it.

    python demos/aiyagari_baseline.py --nodes 200 --cells 600
"""
import argparse

import numpy as np

from ksmaster import EconomyParams, equal_mass_grid, project
from ksmaster import aiyagari as A


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=600, help="household value nodes")
    ap.add_argument("--cells", type=int, default=3000, help="fine cells of the wealth distribution")
    args = ap.parse_args()

    p = EconomyParams()
    eq = A.equilibrium(p, n_nodes=args.nodes, n_cells=args.cells)
    print(f"r* = {eq.r:.6f}  w* = {eq.w:.6f}  market-clearing gap {eq.gap:.1e}")
    print(f"mass at the borrowing limit: y1 {eq.measure.dirac_lo[0]:.5f}, y2 {eq.measure.dirac_lo[1]:.5f}")

    h = eq.household
    for x in (0.0, 1.0, 5.0, 15.0, 29.0):
        k = int(np.argmin(np.abs(h.nodes - x)))
        print(f"x = {h.nodes[k]:6.2f}   savings y1 {h.savings[0, k]:+.4f}   y2 {h.savings[1, k]:+.4f}")

    grid = equal_mass_grid(eq.measure, 17, 10)
    m = project(eq.measure, grid)
    print(f"equal-mass grid: d = {grid.d}, projected mass {m.mass:.12f}")
    print("y1 breakpoints:", np.round(grid.breakpoints[0], 3))


if __name__ == "__main__":
    main()

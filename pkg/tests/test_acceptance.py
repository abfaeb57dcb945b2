"""Acceptance suite: each test checks one criterion at its stated tolerance and records a PASS/FAIL line.

The desk-scale solve (criteria 6, 7 and 9) and the frozen-measure oracle
(criterion 4) take several minutes each; the whole module runs in roughly
half an hour on one core.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

import gradcheck
from conftest import random_coefficients, record
from ksmaster import aiyagari as A
from ksmaster import cli, solver
from ksmaster import export as ex
from ksmaster.economy import EconomyParams, hamiltonian, hamiltonian_prime, utility
from ksmaster.measures import Grid, unpack
from ksmaster.transport import TransportConfig, push_forward

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"

pytestmark = pytest.mark.slow


# 1 -------------------------------------------------------------------------------------------------


def _lipschitz_policy(rng):
    a, b, c = rng.uniform(-1.0, 1.0, 3)
    k = rng.uniform(0.0, 2.0)

    def s(x, j):
        return np.maximum(a + b * np.sin(k * x + c + j), -x / 0.25)

    return s


def test_1_mass_conservation():
    p = EconomyParams()
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        K1, K2 = rng.integers(1, 20, 2)
        g = Grid(np.sort(np.r_[0.0, rng.uniform(0, 30, K1 - 1), 30.0]),
                 np.sort(np.r_[0.0, rng.uniform(0, 30, K2 - 1), 30.0]))
        m = unpack(random_coefficients(g, rng), g)
        pol = _lipschitz_policy(rng)
        N = int(rng.integers(1, 12))
        for mode in ("expected-split", "sampled"):
            out = push_forward(m, pol, p, TransportConfig(N=N, mode=mode), rng=rng)
            worst = max(worst, abs(out.mass - 1.0))
    dt = time.perf_counter() - t0
    record(1, "mass conservation", worst <= 1e-12 and dt < 10,
           f"max |mass - 1| = {worst:.2e} over 2000 transports in {dt:.1f} s")


# 2 -------------------------------------------------------------------------------------------------


def test_2_hamiltonian_duality():
    rng = np.random.default_rng(2)
    worst_gap, worst_eq, worst_fd = 0.0, 0.0, 0.0
    for gamma in (0.5, 2.0, 3.0):
        p = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), 100_000))
        c = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), 100_000))
        H = hamiltonian(p, gamma)
        f = -p * c + utility(c, gamma)
        # inequality, allowing for rounding in the two evaluations
        worst_gap = max(worst_gap, float(np.max((f - H) / np.maximum(np.abs(H), np.abs(f)))))
        cs = p ** (-1 / gamma)
        fs = -p * cs + utility(cs, gamma)
        worst_eq = max(worst_eq, float(np.max(np.abs(fs - H) / np.abs(H))))
        h = 1e-6 * p
        fd = (hamiltonian(p + h, gamma) - hamiltonian(p - h, gamma)) / (2 * h)
        Hp = hamiltonian_prime(p, gamma)
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - Hp) / np.abs(Hp))))
    ok = worst_gap <= 1e-14 and worst_eq <= 1e-10 and worst_fd <= 1e-6
    record(2, "Hamiltonian duality", ok,
           f"max violation {worst_gap:.1e}, equality rel err {worst_eq:.1e}, H' vs FD {worst_fd:.1e}")


# 3 -------------------------------------------------------------------------------------------------


def test_3_network_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        net, x, M, r, t = gradcheck.random_setup(1000 + seed)
        errs = gradcheck.param_grad_errors(net, x, M, r, t)
        worst = max(worst, max(errs.values()), gradcheck.x_grad_error(net, x, M, r))
    dt = time.perf_counter() - t0
    record(3, "network gradient check", worst <= 1e-6 and dt < 30,
           f"max relative error {worst:.1e} over 20 specs in {dt:.1f} s")


# 4, 5 ------------------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def aiyagari_eq():
    t0 = time.perf_counter()
    eq = A.equilibrium(EconomyParams())
    return eq, time.perf_counter() - t0


def test_5_aiyagari_self_consistency(aiyagari_eq):
    eq, dt = aiyagari_eq
    gap = abs(A.implied_rate(eq.measure, EconomyParams()) - eq.r)
    low = eq.measure.dirac_lo[0]
    record(5, "Aiyagari self-consistency", gap <= 1e-4 and low > 0 and dt < 300,
           f"r* = {eq.r:.8f}, gap {gap:.1e}, low-productivity mass at x_lo {low:.5f}, {dt:.1f} s")


def test_4_frozen_measure_oracle(aiyagari_eq):
    eq, _ = aiyagari_eq
    p = EconomyParams()
    h = eq.household
    t0 = time.perf_counter()
    res = solver.frozen_measure_mode(p, eq.r, eq.w, h.nodes)
    dt = time.perf_counter() - t0
    err = float(np.max(np.abs(res.savings - h.savings)))
    record(4, "frozen-measure oracle", err <= 2e-2 and dt < 600,
           f"sup |s - s_grid| = {err:.4f} on {h.nodes.size} nodes after {res.iterations} iterations, {dt:.0f} s")


# 6-9 --------------------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("desk")
    runs = []
    for name in ("a", "b"):
        out = base / name
        t0 = time.perf_counter()
        code = cli.main(["solve", "--config", str(DESK), "--out", str(out)])
        assert code == 0
        runs.append((out, time.perf_counter() - t0))
    return runs


def _read_policy_slice(path):
    rows = [l.split(",") for l in path.read_text().splitlines()[1:] if not l.startswith("#")]
    return np.array(rows, dtype=float)


def test_6_policy_ordering(desk_runs):
    out, dt = desk_runs[0]
    path = out / "exports" / "policy-slice.csv"
    assert cli.main(["export", str(out), "policy-slice", "--out", str(path), "--nx", "301"]) == 0
    data = _read_policy_slice(path)
    fracs = []
    for j in (1, 2):
        d = data[(data[:, 0] == j) & (data[:, 1] >= 0.2) & (data[:, 1] <= 25.0)]
        fracs.append(float(np.mean((d[:, 3] >= d[:, 4]) & (d[:, 4] >= d[:, 2]))))
    record(6, "policy ordering slow <= Aiyagari <= fast", min(fracs) >= 0.9 and dt < 1800,
           f"fraction ordered: y1 {fracs[0]:.3f}, y2 {fracs[1]:.3f}; solve {dt:.0f} s")


def test_7_training_progress(desk_runs):
    out, _ = desk_runs[0]
    n = solver.last_complete_iteration(out)
    r1 = json.loads((out / "iter_1" / "report.json").read_text())
    rn = json.loads((out / f"iter_{n}" / "report.json").read_text())
    first, last = r1["mean_holdout_mse"], rn["mean_holdout_mse"]
    # context only: the residual of each iterate before its regression
    b1, bn = r1["mean_holdout_mse_before"], rn["mean_holdout_mse_before"]
    record(7, "training progress", last <= 0.5 * first,
           f"holdout MSE {first:.3e} (iteration 1) -> {last:.3e} (iteration {n}), ratio {last / first:.3f}; "
           f"pre-fit holdout residual {b1:.3e} -> {bn:.3e}")


def test_8_scatter_report(desk_runs):
    out, _ = desk_runs[0]
    path = out / "exports" / "scatter.csv"
    assert cli.main(["export", str(out), "scatter", "--out", str(path)]) == 0
    corr = ex.correlations(path)
    ok = len(corr) == 4 and all(np.isfinite(v) for v in corr.values())
    record(8, "scatter correlation report", ok,
           ", ".join(f"({i},{j}) {v:+.3f}" for (i, j), v in sorted(corr.items())))


def test_9_determinism(desk_runs):
    (a, _), (b, _) = desk_runs
    n = solver.last_complete_iteration(a)
    same = [(a / f"iter_{k}" / f"net_{i}_{j}.ckpt").read_bytes() == (b / f"iter_{k}" / f"net_{i}_{j}.ckpt").read_bytes()
            for k in range(1, n + 1) for i in (1, 2) for j in (1, 2)]
    csv_same = []
    for kind in ("policy-slice", "scatter", "contour"):
        pa, pb = a / "exports" / f"det-{kind}.csv", b / "exports" / f"det-{kind}.csv"
        for run, path in ((a, pa), (b, pb)):
            assert cli.main(["export", str(run), kind, "--out", str(path)]) == 0
        csv_same.append(pa.read_bytes() == pb.read_bytes())
    ok = n == solver.last_complete_iteration(b) and all(same) and all(csv_same)
    record(9, "determinism", ok, f"{sum(same)}/{len(same)} checkpoints and {sum(csv_same)}/3 CSVs byte-identical")

import numpy as np
import pytest

from conftest import random_coefficients
from ksmaster import neuralnet as nn
from ksmaster import solver as S
from ksmaster.economy import EconomyParams, prices, utility
from ksmaster.measures import MeasureError, aggregates, unpack
from ksmaster.transport import TransportConfig

SMALL = {"trunk_dims": (8, 4), "capital_embed_dim": 6, "rate_embed_dim": 3, "feature_embed_dim": 4}


def const_nets(grid, value=0.0, d0=1):
    spec = nn.NetSpec(d=grid.d, d0=d0, **SMALL)
    sc = nn.Scaling.for_grid(grid, v_shift=float(value))
    return [[nn.ValueNetwork.zeros(spec, sc) for _ in range(2)] for _ in range(2)]


def one_state(grid, M, x, r, w):
    """SampleSet of one state with prices overridden to (r, w) in both aggregate states."""
    s = S.SampleSet(grid, [x], np.asarray(M)[None, :], [False])
    s.r = np.array([[r, r]])
    s.w = np.array([[w, w]])
    return s


@pytest.fixture
def small_samples(grid, params):
    cfg = S.SampleConfig(n_samples=400)
    base = unpack(random_coefficients(grid, np.random.default_rng(1)), grid)
    return S.generate_samples(cfg, grid, base, params, np.random.default_rng(2))


# targets and residuals ----------------------------------------------------------------------


def test_zero_nets_target_hand_value(grid, params):
    M = random_coefficients(grid, np.random.default_rng(0))
    s = one_state(grid, M, 0.0, 0.40, 0.45)
    # zero nets consume the whole budget, so m* would carry no capital; the continuation is 0 anyway
    tg = S.compute_targets(const_nets(grid), s, params, TransportConfig(), frozen_measure=True)
    c = 0.45 * 0.7
    assert c == pytest.approx(0.315)
    assert utility(c, 2.0) == pytest.approx(-3.174603, abs=1e-6)
    # 0.25 * (-3.174603) / 1.0375 = -0.764965
    assert tg.target[0, 0, 0] == pytest.approx(-0.764965, abs=1e-6)
    assert tg.target[1, 0, 0] == pytest.approx(-0.764965, abs=1e-6)
    # residual of the zero candidate
    assert params.discount * (0.0 - tg.target[0, 0, 0]) == pytest.approx(0.793651, abs=1e-6)


def test_switch_terms_vanish_for_zero_nets(grid):
    M = random_coefficients(grid, np.random.default_rng(0))
    s = one_state(grid, M, 0.0, 0.40, 0.45)
    for lam in [(0.0, 0.0), (0.05, 0.1), (1.0, 2.0)]:
        p = EconomyParams(lam=lam)
        assert S.compute_targets(const_nets(grid), s, p, TransportConfig(), frozen_measure=True).target[0, 0, 0] == pytest.approx(-0.764965, abs=1e-6)


@pytest.mark.parametrize("C", [-3.0, 0.0, 2.5])
def test_constant_nets_target(grid, C):
    p = EconomyParams(lam=(0.0, 0.0), mu=(0.0, 0.0))
    rng = np.random.default_rng(3)
    M = random_coefficients(grid, rng, 5)
    s = S.SampleSet(grid, rng.uniform(0, 30, 5), M, np.zeros(5, dtype=bool))
    s.refresh_prices(p)
    # the continuation of a constant net does not depend on m*, so the measure is pinned
    tg = S.compute_targets(const_nets(grid, C), s, p, TransportConfig(), frozen_measure=True)
    for i in range(2):
        for j in range(2):
            # constant value: p = 0, so the household consumes its whole budget
            c = s.x / p.dt + s.w[:, i] * p.y[j] + s.r[:, i] * s.x
            expect = (C + p.dt * utility(c, p.gamma)) / p.discount
            assert np.allclose(tg.target[i, j], expect, rtol=1e-13, atol=1e-13)


def test_bellman_target_and_residual_duality(grid, params):
    rng = np.random.default_rng(4)
    spec = nn.NetSpec(d=grid.d, d0=1, **SMALL)
    sc = nn.Scaling.for_grid(grid, r_shift=0.05, v_shift=-5.0, v_scale=2.0)
    nets = [[nn.ValueNetwork.init(spec, sc, rng) for _ in range(2)] for _ in range(2)]
    m = unpack(random_coefficients(grid, rng), grid)
    for i in range(2):
        for j in range(2):
            t = S.bellman_target(3.0, m, nets, i, j, params)
            assert S.residual(t, 3.0, m, nets, i, j, params) == pytest.approx(0.0, abs=1e-12)
            assert S.residual(0.0, 3.0, m, nets, i, j, params) == pytest.approx(-params.discount * t, rel=1e-12)


def test_residual_affine_in_values(grid, params):
    """Scaling frozen nets and candidate by k scales the residual minus its utility term by k."""
    rng = np.random.default_rng(5)
    s = one_state(grid, random_coefficients(grid, rng), 2.0, 0.03, 1.1)
    # p = 0 for constant nets, so c* (and u) does not move with k
    u_term = params.dt * utility(2.0 / params.dt + 1.1 * params.y[0] + 0.03 * 2.0, params.gamma)

    def R(k):
        t = S.compute_targets(const_nets(grid, k), s, params, TransportConfig(), frozen_measure=True).target[0, 0, 0]
        return params.discount * (k - t) + u_term

    for k in (2.0, -3.0):
        assert R(k) == pytest.approx(k * R(1.0), abs=1e-12)


# samples ----------------------------------------------------------------------------------------


def test_samples_are_valid_measures(small_samples, grid, params):
    s = small_samples
    assert len(s) == 400
    assert np.all(s.M >= 0)
    assert np.allclose(s.M @ grid.slot_widths, 1.0, atol=1e-12)
    assert np.all((s.x >= params.x_lo) & (s.x <= params.x_hi))
    assert s.holdout.sum() == 40
    # 20% of the points are log-spaced just above the borrowing limit
    assert np.mean(s.x < params.x_lo + 3.0) > 0.2


def test_zero_perturbation_returns_base(grid, params):
    base = unpack(random_coefficients(grid, np.random.default_rng(6)), grid)
    cfg = S.SampleConfig(n_samples=50, mix=(0.0, 1.0, 0.0), perturb_max=0.0)
    s = S.generate_samples(cfg, grid, base, params, np.random.default_rng(7))
    assert np.allclose(s.M, base.coefficients[None, :], rtol=1e-14, atol=1e-15)


def test_sampled_rates_match_direct_recomputation(grid, params):
    """Cached rates equal a per-measure recomputation, and perturbations spread around the base rate."""
    base = unpack(random_coefficients(grid, np.random.default_rng(8)), grid)
    cfg = S.SampleConfig(n_samples=10_000, mix=(0.0, 1.0, 0.0))
    s = S.generate_samples(cfg, grid, base, params, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    for k in rng.choice(len(s), 50, replace=False):
        X, Y = aggregates(unpack(s.M[k], grid), params.y)
        for i in range(2):
            r, w = prices(X, Y, params.A[i], params)
            assert s.r[k, i] == pytest.approx(r, rel=1e-12)
            assert s.w[k, i] == pytest.approx(w, rel=1e-12)
    X0, Y0 = aggregates(base, params.y)
    r0 = prices(X0, Y0, params.A[0], params)[0]
    assert s.r[:, 0].min() <= r0 <= s.r[:, 0].max()
    # Monte Carlo: the mean rate sits between the base rate and the mean rate of pure Dirichlet draws
    d = S.generate_samples(S.SampleConfig(n_samples=10_000, mix=(1.0, 0.0, 0.0)), grid, base, params,
                           np.random.default_rng(11))
    lo, hi = sorted([r0, d.r[:, 0].mean()])
    assert lo <= s.r[:, 0].mean() <= hi


def test_sample_set_roundtrip(small_samples, params):
    s2 = S.SampleSet.from_dict(small_samples.to_dict(), params)
    assert np.array_equal(s2.M, small_samples.M)
    assert np.array_equal(s2.x, small_samples.x)
    assert np.array_equal(s2.r, small_samples.r)
    assert np.array_equal(s2.holdout, small_samples.holdout)


# fixed-point step ------------------------------------------------------------------------------


def test_fit_to_constant_targets(small_samples, grid, params):
    spec = nn.NetSpec(d=grid.d, d0=1, **SMALL)
    net = nn.ValueNetwork.init(spec, nn.Scaling.for_grid(grid, r_shift=0.05), np.random.default_rng(0))
    c = -4.2
    s = small_samples
    nn.fit(net, s.x, s.M, s.r[:, 0], np.full(len(s), c), nn.TrainConfig(optimizer="lbfgs", steps=200),
           np.random.default_rng(1))
    assert np.max(np.abs(net.forward(s.x, s.M, s.r[:, 0]) - c)) < 1e-3


def test_step_from_zero_nets_fits_hand_targets(small_samples, grid, params):
    s = small_samples
    nets = const_nets(grid)
    cfg = S.FixedPointConfig(train=nn.TrainConfig(optimizer="lbfgs", steps=150))
    tg = S.compute_targets(nets, s, params, TransportConfig(), frozen_measure=True)
    new, rep, tg = S.fixed_point_step(nets, s, params, cfg, TransportConfig(), seed=0, iteration=1, targets=tg)
    for i in range(2):
        for j in range(2):
            budget = s.x / params.dt + s.w[:, i] * params.y[j] + s.r[:, i] * s.x
            hand = params.dt * utility(budget, params.gamma) / params.discount
            assert np.allclose(tg.target[i, j], hand, rtol=1e-12)
    # report numbers equal an independent recomputation of the mean squared residual
    k = 0
    for i in range(2):
        for j in range(2):
            for mask, key in ((~s.holdout, "train_mse"), (s.holdout, "holdout_mse")):
                v = new[i][j].forward(s.x[mask], s.M[mask], s.r[mask, i])
                mse = np.mean((params.discount * (v - tg.target[i, j][mask])) ** 2)
                assert rep[key][k] == pytest.approx(mse, rel=1e-12)
            assert rep["train_mse"][k] <= rep["train_mse_before"][k]
            k += 1


def test_divergence_is_detected(small_samples, grid, params):
    cfg = S.FixedPointConfig(train=nn.TrainConfig(steps=1), divergence_mse=1e-30)
    nets = const_nets(grid)
    tg = S.compute_targets(nets, small_samples, params, TransportConfig(), frozen_measure=True)
    with pytest.raises(S.DivergenceError):
        S.fixed_point_step(nets, small_samples, params, cfg, TransportConfig(), 0, 1, targets=tg)


def test_measure_without_capital_is_reported(grid, params):
    """Zero nets consume the whole budget, so every transported measure sits at x_lo."""
    s = one_state(grid, random_coefficients(grid, np.random.default_rng(0)), 0.0, 0.40, 0.45)
    with pytest.raises(MeasureError):
        S.compute_targets(const_nets(grid), s, params, TransportConfig())


def _tiny_solve(grid, params, run_dir=None, n=2, resume=True):
    base = unpack(random_coefficients(grid, np.random.default_rng(12)), grid)
    cfg = S.FixedPointConfig(
        samples=S.SampleConfig(n_samples=200, transport_steps=2), n_outer_iterations=n,
        train=nn.TrainConfig(steps=40, batch_size=64), warm_train=nn.TrainConfig(optimizer="lbfgs", steps=100))
    spec = nn.NetSpec(d=grid.d, d0=1, **SMALL)
    # value of consuming w y + rho x forever
    value_fn = lambda x, j: utility(1.2 * params.y[j] + params.rho * x, params.gamma) / params.rho
    return S.solve(params, grid, base, spec, cfg, TransportConfig(), seed=7, value_fn=value_fn,
                   run_dir=run_dir, resume=resume)


def test_solve_history_feasibility_and_determinism(grid, params, tmp_path):
    a = _tiny_solve(grid, params, tmp_path / "a")
    b = _tiny_solve(grid, params)
    assert len(a.history) == 2
    for key in ("mean_holdout_mse", "mean_train_mse", "policy_change", "wall_time_s"):
        assert np.isfinite(a.history[-1][key])
    assert [h["param_hashes"] for h in a.history] == [h["param_hashes"] for h in b.history]
    assert (tmp_path / "a" / "iter_2" / "net_2_2.ckpt").exists()
    assert (tmp_path / "a" / "iter_1" / "report.json").exists()
    # feasibility: next states never fall below the borrowing limit
    s = a.samples
    for i in range(2):
        for j in range(2):
            _, _, sv = S.policy(a.nets[i][j], s.x, s.M, s.r[:, i], s.w[:, i], j, params)
            assert np.all(s.x + params.dt * sv >= params.x_lo - 1e-12)


def test_resume_matches_uninterrupted(grid, params, tmp_path):
    full = _tiny_solve(grid, params, tmp_path / "full", n=3)
    part = tmp_path / "part"
    _tiny_solve(grid, params, part, n=2)
    assert S.last_complete_iteration(part) == 2
    resumed = _tiny_solve(grid, params, part, n=3)
    assert [h["param_hashes"] for h in resumed.history] == [h["param_hashes"] for h in full.history]
    assert (part / "iter_3" / "net_1_1.ckpt").read_bytes() == (tmp_path / "full" / "iter_3" / "net_1_1.ckpt").read_bytes()


# frozen-measure mode -----------------------------------------------------------------------------


def test_frozen_mode_large_discount():
    """With a large discount rate the flow term dominates: V(x_lo) ~ dt u(w y) / (1 + rho dt)."""
    p = EconomyParams(rho=100.0)
    r, w = 0.05, 1.0
    nodes = np.linspace(0.0, 30.0, 31)
    cfg = S.FrozenConfig(n_iterations=8, train=nn.TrainConfig(optimizer="lbfgs", steps=40))
    res = S.frozen_measure_mode(p, r, w, nodes, cfg)
    for j in range(2):
        myopic = p.dt * utility(w * p.y[j], p.gamma) / p.discount
        assert abs(res.value[j][0] / myopic - 1) <= 2.0 / (p.rho * p.dt)
        assert np.all(res.value[j] < 0)


def test_frozen_mode_value_nondecreasing():
    p = EconomyParams(rho=1.0)
    cfg = S.FrozenConfig(n_iterations=8, train=nn.TrainConfig(optimizer="lbfgs", steps=40))
    res = S.frozen_measure_mode(p, 0.05, 1.0, np.linspace(0.0, 30.0, 31), cfg)
    assert np.all(np.diff(res.value, axis=1) >= 0)
    assert np.all(res.nodes + p.dt * res.savings >= p.x_lo - 1e-12)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_coefficients
from ksmaster.economy import EconomyParams
from ksmaster.measures import DiscreteMeasure, Grid, unpack
from ksmaster.transport import TransportConfig, bin_slot, push_forward, sample_points, transition_matrix


def test_sample_points():
    g = Grid([0.0, 10.0, 30.0], [0.0, 10.0, 30.0])
    assert np.allclose(sample_points(g, 1)[0][0], [5.0])
    assert np.allclose(sample_points(g, 4)[0][0], [2, 4, 6, 8])
    assert np.allclose(sample_points(g, 1)[1][1], [20.0])
    pts = sample_points(g, 7)[0]
    assert np.all((pts > g.breakpoints[0][:-1, None]) & (pts < g.breakpoints[0][1:, None]))


def test_binning_conventions():
    g = Grid([0.0, 10.0, 20.0, 30.0], [0.0, 15.0, 30.0])
    lo, hi = g.offsets[0], g.offsets[0] + g.K[0] + 1
    assert bin_slot(31.0, 0, g) == hi
    assert bin_slot(30.0, 0, g) == hi
    assert bin_slot(-0.01, 0, g) == lo
    assert bin_slot(0.0, 0, g) == lo
    assert bin_slot(10.0, 0, g) == lo + 1          # right end belongs to the cell (0, 10]
    assert bin_slot(10.0 + 1e-12, 0, g) == lo + 2
    assert bin_slot(15.0, 1, g) == g.offsets[1] + 1


def test_dirac_at_borrowing_limit_switches(params):
    g = Grid.uniform(0.0, 30.0, 3)
    m = DiscreteMeasure.dirac(g, "lo", 0)
    out = push_forward(m, lambda x, j: np.zeros_like(x), params)
    assert out.dirac_lo[0] == pytest.approx(0.9875, abs=1e-15)
    assert out.dirac_lo[1] == pytest.approx(0.0125, abs=1e-15)


def test_dirac_at_top_leaving_upwards(params):
    g = Grid.uniform(0.0, 30.0, 3)
    m = DiscreteMeasure.dirac(g, "hi", 1)
    out = push_forward(m, lambda x, j: np.full_like(x, 0.3), params)
    assert out.dirac_hi[1] == pytest.approx(0.975, abs=1e-15)
    assert out.dirac_hi[0] == pytest.approx(0.025, abs=1e-15)


def test_identity_transport():
    p = EconomyParams(lam=(0.0, 0.0))
    g = Grid([0.0, 3.0, 30.0], [0.0, 1.0, 7.0, 30.0])
    m = unpack(random_coefficients(g, np.random.default_rng(0)), g)
    for N in (1, 4, 10):
        out = push_forward(m, lambda x, j: np.zeros_like(x), p, TransportConfig(N=N))
        assert np.allclose(out.coefficients, m.coefficients, rtol=0, atol=1e-15)


def _policy(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(-0.5, 0.5, 3)

    def s(x, j):
        # Lipschitz, and respects x + dt s >= 0
        return np.maximum(a + b * np.sin(c * x + j), -x / 0.25)

    return s


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), mode=st.sampled_from(["expected-split", "sampled"]), N=st.integers(1, 12))
def test_mass_conservation_and_nonnegativity(seed, mode, N):
    p = EconomyParams()
    g = Grid([0.0, 2.0, 5.0, 30.0], [0.0, 10.0, 30.0])
    m = unpack(random_coefficients(g, np.random.default_rng(seed)), g)
    out = push_forward(m, _policy(seed), p, TransportConfig(N=N, mode=mode), rng=np.random.default_rng(seed))
    assert abs(out.mass - 1.0) <= 1e-12
    assert np.all(out.coefficients >= 0)


def test_no_leakage_into_lower_dirac(params):
    g = Grid.uniform(0.0, 30.0, 6)
    m = DiscreteMeasure.uniform(g)
    out = push_forward(m, lambda x, j: np.full_like(x, 0.2), params)
    assert np.all(out.dirac_lo == 0.0)


def test_nan_savings_rejected(params):
    g = Grid.uniform(0.0, 30.0, 2)
    with pytest.raises(ValueError, match="NaN"):
        push_forward(DiscreteMeasure.uniform(g), lambda x, j: np.full_like(x, np.nan), params)


def test_sampled_mode_averages_to_expected_split():
    p = EconomyParams(lam=(0.8, 1.2))
    g = Grid([0.0, 4.0, 30.0], [0.0, 12.0, 30.0])
    m = unpack(random_coefficients(g, np.random.default_rng(5)), g)
    pol = _policy(5)
    exp = push_forward(m, pol, p, TransportConfig(N=3)).coefficients
    rng = np.random.default_rng(11)
    draws = np.array([push_forward(m, pol, p, TransportConfig(N=3, mode="sampled"), rng=rng).coefficients
                      for _ in range(10_000)])
    se = draws.std(axis=0) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - exp) <= 3 * se + 1e-14)


def test_transition_matrix_matches_push_forward(params):
    g = Grid([0.0, 1.0, 9.0, 30.0], [0.0, 5.0, 30.0])
    m = unpack(random_coefficients(g, np.random.default_rng(8)), g)
    pol = _policy(8)
    T = transition_matrix(g, pol, params, 6)
    assert np.allclose(T @ m.coefficients, push_forward(m, pol, params, TransportConfig(N=6)).coefficients,
                       rtol=1e-13, atol=1e-15)


def test_sampled_mode_reproducible(params):
    g = Grid.uniform(0.0, 30.0, 4)
    m = DiscreteMeasure.uniform(g)
    cfg = TransportConfig(N=5, mode="sampled", rng_seed=42)
    a = push_forward(m, _policy(1), params, cfg)
    b = push_forward(m, _policy(1), params, cfg)
    assert np.array_equal(a.coefficients, b.coefficients)

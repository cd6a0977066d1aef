import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest, norm

from hypolsi import gaussian as ga
from hypolsi.gaussian import ModelParams
from hypolsi.harness import baoab_stationary_cov
from hypolsi.sde import (
    BINARY_MAGIC, BLOCK, Ensemble, Potential, block_normals, particle_normals, sample_ensemble,
    simulate_ensemble, step,
)

P1 = ModelParams(1.0, 1.0, 1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), eps=st.floats(0, 3), rho=st.floats(0.1, 10), d=st.integers(1, 3))
def test_quartic_gradient_matches_finite_differences(seed, eps, rho, d):
    pot = Potential.quartic(rho, eps)
    x = np.random.default_rng(seed).normal(size=(4, d))
    h = 1e-5
    fd = np.empty_like(x)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        fd[:, i] = (pot.U(x + e) - pot.U(x - e)) / (2 * h)
    g = pot.grad(x)
    assert np.all(np.abs(fd - g) <= 1e-6 * np.maximum(np.abs(g), 1.0))


def test_quadratic_gradient():
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    pot = Potential.quadratic(H)
    x = np.array([[1.0, -2.0]])
    assert np.allclose(pot.grad(x), x @ H)
    assert pot.U(x)[0] == pytest.approx(0.5 * x[0] @ H @ x[0])


def test_potential_validation():
    with pytest.raises(ValueError):
        Potential.quartic(1.0, -0.1)
    with pytest.raises(ValueError):
        Potential("cubic")


def test_counter_streams_are_prefix_consistent():
    full = block_normals(7, 3, 11, BLOCK, 2)
    ids = np.array([3 * BLOCK + 5, 3 * BLOCK + 0, 3 * BLOCK + 17])
    assert np.array_equal(particle_normals(7, ids, 11, 2), full[[5, 0, 17]])
    assert not np.array_equal(block_normals(7, 3, 12, 4, 2), full[:4])


def test_reproducible_and_worker_invariant():
    law = ga.kinetic_law(P1, [1.0, 0.0])
    pot = Potential.quartic(1.0, 0.5)
    kw = dict(n=3 * BLOCK + 100, seed=42)
    a = simulate_ensemble(law, pot, P1, 0.05, [0.5, 1.0], **kw)
    b = simulate_ensemble(law, pot, P1, 0.05, [0.5, 1.0], **kw)
    c = simulate_ensemble(law, pot, P1, 0.05, [0.5, 1.0], workers=3, **kw)
    for x, y, z in zip(a, b, c):
        assert np.array_equal(x.positions, y.positions) and np.array_equal(x.velocities, y.velocities)
        assert np.array_equal(x.positions, z.positions) and np.array_equal(x.velocities, z.velocities)
    other = simulate_ensemble(law, pot, P1, 0.05, [1.0], n=kw["n"], seed=43)[0]
    assert not np.array_equal(other.positions, a[1].positions)


def test_subset_evolves_like_full_ensemble():
    law = ga.stationary_law(P1)
    pot = Potential.from_params(P1)
    full = sample_ensemble(law, 2 * BLOCK, 5)
    part = full.subset(np.arange(BLOCK - 10, BLOCK + 10))
    a = simulate_ensemble(full, pot, P1, 0.1, [1.0])[0]
    b = simulate_ensemble(part, pot, P1, 0.1, [1.0])[0]
    assert np.array_equal(a.positions[BLOCK - 10:BLOCK + 10], b.positions)


def test_quartic_zero_epsilon_matches_quadratic_bitwise():
    law = ga.kinetic_law(P1, [1.0, -0.5])
    a = simulate_ensemble(law, Potential.quartic(1.0, 0.0), P1, 0.1, [2.0], n=5000, seed=1)[0]
    b = simulate_ensemble(law, Potential.from_params(P1), P1, 0.1, [2.0], n=5000, seed=1)[0]
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.velocities, b.velocities)


def test_exact_step_from_point_mass_matches_moments():
    n, t = 100_000, 0.7
    z0 = np.array([1.0, -0.5])
    ens = Ensemble(np.full((n, 1), z0[0]), np.full((n, 1), z0[1]), seed=3)
    out = step(ens, Potential.from_params(P1), P1, t, "exact_gaussian")
    # moments of the law started from a point mass: mean F z0, covariance W
    F, S = ga.transition(P1, t)
    z = out.states
    se = np.sqrt(np.diag(S) / n)
    assert np.all(np.abs(z.mean(0) - F @ z0) <= 3 * se)
    emp = np.cov(z.T)
    # stderr of a sample covariance entry: sqrt((S_ii S_jj + S_ij^2) / n)
    se_cov = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S * S) / n)
    assert np.all(np.abs(emp - S) <= 3 * se_cov)
    assert out.time == t and out.step_count == 1


@pytest.mark.parametrize("rho", [1.0, 9.0])
def test_exact_scheme_preserves_stationary_law(rho):
    params = ModelParams(rho, 1.0, 1)
    snaps = simulate_ensemble(ga.stationary_law(params), Potential.from_params(params), params, 0.5,
                              [0.5, 2.0, 10.0], "exact_gaussian", n=100_000, seed=9)
    sd = 1 / np.sqrt(rho)
    for e in snaps:
        assert kstest(e.positions[:, 0], norm(scale=sd).cdf).statistic < 0.01


def test_exact_scheme_validation():
    law = ga.stationary_law(P1)
    with pytest.raises(ValueError, match="quadratic"):
        simulate_ensemble(law, Potential.quartic(1.0, 0.5), P1, 0.1, [0.1], "exact_gaussian", n=10)
    with pytest.raises(ValueError, match="Hessian"):
        simulate_ensemble(law, Potential.quadratic([[2.0]]), P1, 0.1, [0.1], "exact_gaussian", n=10)
    with pytest.raises(ValueError, match="scheme"):
        simulate_ensemble(law, Potential.from_params(P1), P1, 0.1, [0.1], "leapfrog", n=10)


def test_snapshot_rules():
    law = ga.stationary_law(P1)
    pot = Potential.from_params(P1)
    assert simulate_ensemble(law, pot, P1, 0.1, [], n=10) == []
    with pytest.raises(ValueError, match="multiple"):
        simulate_ensemble(law, pot, P1, 0.1, [0.15], n=10)
    with pytest.raises(ValueError, match="nondecreasing"):
        simulate_ensemble(law, pot, P1, 0.1, [0.3, 0.2], n=10)
    with pytest.raises(ValueError):
        simulate_ensemble(law, pot, P1, 0.1, [0.1])


def test_ensemble_validation():
    with pytest.raises(ValueError):
        Ensemble(np.array([[np.nan]]), np.array([[0.0]]))
    with pytest.raises(ValueError):
        Ensemble(np.zeros((2, 1)), np.zeros((3, 1)))


def test_binary_and_csv_roundtrip():
    ens = simulate_ensemble(ga.kinetic_law(ModelParams(1.0, 1.0, 2), [1, 0, 0, 1]),
                            Potential.quartic(1.0, 0.5), ModelParams(1.0, 1.0, 2), 0.1, [0.3], n=50,
                            seed=2**63 + 5)[0]
    data = ens.to_bytes()
    assert data[:8] == BINARY_MAGIC
    back = Ensemble.from_bytes(data)
    for name in ("positions", "velocities", "stream_ids"):
        assert np.array_equal(getattr(back, name), getattr(ens, name))
    assert (back.time, back.seed, back.step_count) == (ens.time, ens.seed, ens.step_count)
    with pytest.raises(ValueError, match="magic"):
        Ensemble.from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ValueError, match="length"):
        Ensemble.from_bytes(data[:-1])
    lines = ens.to_csv().splitlines()
    assert lines[0] == "particle_id,x0,x1,v0,v1"
    row = lines[1].split(",")
    assert float(row[1]) == ens.positions[0, 0] and float(row[4]) == ens.velocities[0, 1]


def test_weak_order_of_the_mean():
    # the mean follows the noise-free linear recursion; Euler is first order, BAOAB second order
    n, z0 = 200_000, np.array([1.0, 0.0])
    F, S = ga.transition(P1, 1.0)
    ref = F @ z0
    se = np.sqrt(np.diag(S) / n)
    pot = Potential.from_params(P1)

    def mean_error(scheme, h):
        ens = Ensemble(np.full((n, 1), z0[0]), np.full((n, 1), z0[1]), seed=4)
        return simulate_ensemble(ens, pot, P1, h, [1.0], scheme)[0].states.mean(0) - ref

    e1, e2 = mean_error("euler_maruyama", 0.2), mean_error("euler_maruyama", 0.1)
    assert 1.5 < abs(e1[1]) / abs(e2[1]) < 2.7
    assert np.all(np.abs(mean_error("baoab", 0.2)) < 3 * se)


def test_baoab_stationary_covariance_oracle():
    # BAOAB keeps the position variance exact on harmonic potentials; velocity is low by h^2 / 4
    for rho in (1.0, 4.0):
        params = ModelParams(rho, 1.0, 1)
        for h in (0.5, 0.25, 0.1):
            S = baoab_stationary_cov(params, h)
            assert S[0, 0] == pytest.approx(1 / rho, rel=1e-12)
            assert S[1, 1] == pytest.approx(1 - rho * h * h / 4, rel=1e-12)


def test_baoab_stationary_variance_monte_carlo():
    h = 0.5
    ens = sample_ensemble(ga.stationary_law(P1), 200_000, 8)
    out = simulate_ensemble(ens, Potential.from_params(P1), P1, h, [30.0])[0]
    pred = baoab_stationary_cov(P1, h)
    se = np.sqrt(2 / ens.n) * np.diag(pred)
    assert np.all(np.abs(np.var(out.states, axis=0) - np.diag(pred)) <= 3 * se)

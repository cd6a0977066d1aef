import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypolsi import gaussian as ga
from hypolsi.estimators import (
    EstimateWithCI, gaussian_reference, marginal_entropy_histogram, nested_pt_estimate, norm_with_ci,
)
from hypolsi.gaussian import ExpQuadratic, ModelParams
from hypolsi.sde import Ensemble, Potential, sample_ensemble
from hypolsi.transport1d import Gaussian1D

P1 = ModelParams(1.0, 1.0, 1)
MU = ga.stationary_law(P1)
POT = Potential.from_params(P1)


def _ens_1d(x, v=None, seed=0):
    x = np.asarray(x, float).reshape(-1, 1)
    return Ensemble(x, np.zeros_like(x) if v is None else np.asarray(v, float).reshape(-1, 1), seed=seed)


def test_constant_function_is_exact():
    outer = sample_ensemble(MU, 50, 1)
    est = nested_pt_estimate(lambda z: np.ones(len(z)), outer, Potential.quartic(1.0, 0.5), P1, 1.0, 20)
    assert np.all(est.value == 1.0) and np.all(est.stderr == 0.0)
    nrm = norm_with_ci(est, 2.0)
    assert nrm.value == 1.0 and nrm.stderr == 0.0 and nrm.bias_proxy == 0.0


def test_zero_time_returns_function_values():
    outer = sample_ensemble(MU, 30, 2)
    f = ExpQuadratic(0.1, np.array([0.3, -0.2]), np.zeros((2, 2)))
    est = nested_pt_estimate(f, outer, POT, P1, 0.0, 10)
    assert np.array_equal(est.value, f(outer.states))
    assert np.all(est.stderr == 0)
    assert len(est.estimates()) == 30


@pytest.mark.parametrize("scheme,h", [("exact_gaussian", None), ("baoab", 0.01)])
def test_nested_matches_closed_form(scheme, h):
    f = ExpQuadratic(0.0, np.array([0.1, 0.2]), np.array([[0.0, 0.0], [0.0, -0.1]]))
    t = 0.8
    outer = sample_ensemble(MU, 200, 11)
    est = nested_pt_estimate(f, outer, POT, P1, t, 400, scheme, h=h, seed=5)
    exact = ga.apply_semigroup(f, P1, t)(outer.states)
    hits = np.abs(est.value - exact) <= 3 * est.stderr
    assert hits.mean() >= 0.95


def test_nested_rejects_bad_input():
    outer = sample_ensemble(MU, 5, 0)
    with pytest.raises(ValueError):
        nested_pt_estimate(lambda z: z[:, 0], outer, POT, P1, 1.0, 1)
    with pytest.raises(ValueError):
        nested_pt_estimate(lambda z: z[:, 0], outer, POT, P1, -1.0, 4)


def test_norm_of_ones_and_p_one():
    assert norm_with_ci(np.ones(100), 3.0).value == 1.0
    assert norm_with_ci(np.ones(100), 3.0).stderr == 0.0
    y = np.random.default_rng(0).exponential(size=1000)
    assert norm_with_ci(y, 1.0).value == pytest.approx(y.mean(), rel=1e-15)


def test_norm_matches_lp_closed_form():
    f = ExpQuadratic(0.0, np.array([0.0, 0.3]), np.zeros((2, 2)))
    z = sample_ensemble(MU, 200_000, 3).states
    est = norm_with_ci(f(z), 2.0)
    exact = ga.lp_norm(f, MU, 2.0)
    assert abs(est.value - exact) <= 3 * est.stderr
    lo, hi = est.interval()
    assert lo < est.value < hi


def test_norm_accepts_estimate_list_and_flags_nonfinite():
    ests = [EstimateWithCI(v, 0.1, 1, 8, "x") for v in (1.0, 2.0, float("nan"))]
    out = norm_with_ci(ests, 2.0)
    assert out.value == pytest.approx(math.sqrt(2.5))
    assert "nonfinite_dropped" in out.flags and out.n_outer == 2 and out.n_inner == 8


def test_norm_rejects_negative_with_fractional_power():
    with pytest.raises(ValueError):
        norm_with_ci([-1.0, 2.0], 1.5)
    assert norm_with_ci([-1.0, 1.0], 2.0).value == 1.0
    with pytest.raises(ValueError):
        norm_with_ci([1.0], 0.5)


def test_stderr_scales_with_outer_count():
    rng = np.random.default_rng(12)
    ratios = []
    for _ in range(20):
        y = rng.lognormal(0, 0.5, size=8000)
        ratios.append(norm_with_ci(y[:4000], 2.0).stderr / norm_with_ci(y, 2.0).stderr)
    assert 1.25 <= np.mean(ratios) <= 1.6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(1.0, 6.0))
def test_norm_monotone_in_p(seed, p):
    y = np.random.default_rng(seed).lognormal(size=500)
    assert norm_with_ci(y, p).value <= norm_with_ci(y, p + 0.5).value * (1 + 1e-12)


def test_histogram_self_kl_is_small():
    ref = Gaussian1D(0.0, 1.0)
    x = np.random.default_rng(4).normal(size=100_000)
    est = marginal_entropy_histogram(_ens_1d(x), "x", ref, seed=1)
    assert abs(est.value) <= 3 * est.stderr


def test_histogram_shifted_gaussian():
    ref = Gaussian1D(0.0, 1.0)
    x = np.random.default_rng(5).normal(1.0, 1.0, size=100_000)
    est = marginal_entropy_histogram(_ens_1d(np.zeros_like(x), x), "v", ref, bins=64, seed=2)
    assert abs(est.value - 0.5) <= 3 * est.stderr


def test_histogram_bootstrap_variance_scales_with_n():
    ref = Gaussian1D(0.0, 1.0)
    rng = np.random.default_rng(6)
    ratios = []
    for _ in range(8):
        x = rng.normal(1.0, 1.0, size=40_000)
        v_full = marginal_entropy_histogram(_ens_1d(x), "x", ref, seed=rng.integers(1 << 30)).stderr ** 2
        v_half = marginal_entropy_histogram(_ens_1d(x[:20_000]), "x", ref, seed=rng.integers(1 << 30)).stderr ** 2
        ratios.append(v_half / v_full)
    assert 1.5 <= np.mean(ratios) <= 3.0


def test_histogram_validation_and_flags():
    ref = Gaussian1D()
    with pytest.raises(ValueError):
        marginal_entropy_histogram(Ensemble(np.zeros((10, 2)), np.zeros((10, 2))), "x", ref)
    with pytest.raises(ValueError):
        marginal_entropy_histogram(_ens_1d(np.arange(100.0)), "x", ref, bins=8)
    with pytest.raises(ValueError):
        marginal_entropy_histogram(_ens_1d(np.arange(100.0)), "z", ref)
    sparse = marginal_entropy_histogram(_ens_1d([0.0, 0.1, 5.0]), "x", ref, bins=64, n_boot=4)
    assert "empty_bins" in sparse.flags


def test_gaussian_reference():
    p = ModelParams(4.0, 1.0, 1)
    assert gaussian_reference(p, "x").var == 0.25
    assert gaussian_reference(p, "v").var == 1.0

import json
import math

import numpy as np
import pytest

from hypolsi import gaussian as ga
from hypolsi.constants import AdmissibilityError, compute_constants
from hypolsi.gaussian import ExpQuadratic, ModelParams
from hypolsi.harness import (
    Check, ExperimentReport, fit_log_envelope, hypercontractive_norms, renyi_crossing_sweep,
    run_corrector_check, run_entropy_decay, run_interpolation_suite, run_mc_hypercontractivity,
    run_renyi_decay, run_stlsi, spectral_rate,
)
from hypolsi.sde import Potential

P1 = ModelParams(1.0, 1.0, 1)
MU = ga.stationary_law(P1)
ONE = ExpQuadratic(0.0, np.zeros(2), np.zeros((2, 2)))


def test_check_semantics():
    assert Check("a", 1.0, 1.0, 0.0).passed
    assert Check("a", 1.0 + 1e-9, 1.0, 1e-8).passed
    assert not Check("a", 1.1, 1.0, 0.05).passed
    assert not Check("nan", float("nan"), 1.0, 0.0).passed
    d = Check("a", 1.0, 2.0, 0.5).to_dict()
    assert d == {"description": "a", "lhs": 1.0, "rhs": 2.0, "margin": 0.5, "pass": True}


def test_report_artifacts(tmp_path):
    r = ExperimentReport("demo", {"rho": 1.0}, curves={"t": [0.0, 1.0, 2.0], "y": [1.0, 0.5, 0.25]})
    r.check("y decreases", 0.25, 1.0)
    r.results["inf"] = float("inf")
    files = r.write(tmp_path)
    assert {f.name for f in files} == {"report.json", "curves.csv", "plot.svg"}
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["passed"] is True and doc["results"]["inf"] == "inf"
    assert (tmp_path / "curves.csv").read_text().splitlines()[0] == "t,y"
    assert (tmp_path / "plot.svg").read_text().lstrip().startswith("<?xml")


def test_envelope_fit_on_damped_oscillation():
    t = np.linspace(0, 20, 4001)
    y = -0.7 * t + np.log(1.2 + np.cos(3 * t))
    assert fit_log_envelope(t, y).rate == pytest.approx(0.7, rel=1e-3)


def test_entropy_decay_equilibrium_start():
    r = run_entropy_decay(P1, MU, np.linspace(0, 5, 101))
    assert r.passed and "equilibrium_start" in r.flags
    assert max(abs(v) for v in r.curves["ent"]) <= 1e-14


def test_entropy_decay_rate_matches_spectrum():
    r = run_entropy_decay(P1, ga.kinetic_law(P1, [1.0, 0.0]), np.linspace(0, 25, 2501))
    assert r.passed
    assert spectral_rate(P1) == pytest.approx(1.0, rel=1e-12)
    assert abs(r.results["fitted_rate"] - 1.0) <= 0.1
    assert r.results["guaranteed_rate"] == pytest.approx(math.log(223 / 205) / 36)


def test_corrector_trivial_and_shifted():
    t = np.arange(5001) * 1e-3
    r0 = run_corrector_check(P1, MU, t)
    assert r0.passed and r0.results["source_term"] == 0.0
    assert max(abs(v) for v in r0.curves["dC_dt"]) < 1e-12
    r = run_corrector_check(P1, ga.GaussianLaw([1.0, 0.5], ga.stationary_cov(P1)), t)
    assert r.passed
    assert min(r.curves["slack"]) > -r.results["fd_tolerance"]


def test_corrector_rejects_bad_grid():
    with pytest.raises(ValueError):
        run_corrector_check(P1, MU, [0.0, 0.1, 0.3, 0.4, 0.5])
    with pytest.raises(ValueError, match="coarse"):
        run_corrector_check(P1, ga.kinetic_law(P1, [1.0, 0.0]), np.linspace(0, 5, 6))


def test_stlsi_trivial_and_admissibility():
    r = run_stlsi(P1, 36.0, MU)
    assert r.passed and abs(r.results["lhs"]) < 1e-15
    with pytest.raises(AdmissibilityError, match="36"):
        run_stlsi(P1, 10.0, MU)
    with pytest.raises(ValueError):
        run_stlsi(P1, 36.0, MU, n_time=100)


def test_stlsi_slack_is_rho_invariant():
    ratios = []
    for rho in (1.0, 100.0):
        p = ModelParams(rho, 1.0, 1)
        r = run_stlsi(p, 36.0, ga.kinetic_law(p, [1.0, 0.0]))
        assert r.passed
        ratios.append(r.results["slack_ratio"])
    assert ratios[0] < 1
    assert abs(ratios[0] - ratios[1]) <= 1e-6 * ratios[0]


def test_interpolation_trivial_pair():
    r = run_interpolation_suite(P1, ONE, ONE, 36.0)
    assert r.passed
    assert r.results["Z"] == 1.0 and r.results["E_T"] == 0.0
    assert r.results["ent_G0"] == 0.0 and r.results["closure_rhs"] == 0.0


def test_interpolation_random_pair():
    rng = np.random.default_rng(3)
    rep = compute_constants(1.0, 36.0)
    phi = ga.normalized(ga.random_expquad(rng, 2), MU, rep.p_c)
    psi = ga.normalized(ga.random_expquad(rng, 2), MU, rep.q_c_conjugate)
    r = run_interpolation_suite(P1, phi, psi, 36.0, [ga.random_expquad(rng, 2)])
    assert r.passed, [c for c in r.checks if not c.passed]
    assert r.results["Z"] <= 1 + 1e-10
    assert abs(r.results["closure_lhs"] - r.results["closure_rhs"]) < 1e-8


def test_hypercontractive_norms_exponent():
    rep = compute_constants(1.0, 36.0)
    f = ExpQuadratic(0.0, np.array([0.2, 0.1]), np.zeros((2, 2)))
    lhs, rhs, q = hypercontractive_norms(f, P1, rep, 2.0)
    assert q == pytest.approx(1 + rep.alpha_T)
    assert lhs <= rhs


def test_renyi_contraction_case():
    nu0 = ga.kinetic_law(P1, [1.0, 0.0])
    r = run_renyi_decay(P1, nu0, 2.0, 2.0, 36.0, np.linspace(0, 100, 201))
    assert r.passed
    # p = q: the order bound collapses to R_q(nu_t) <= R_q(nu_0)
    assert r.results["R_q0"] == r.results["R_p0"]
    assert max(r.curves["renyi_q"]) <= r.results["R_q0"] * (1 + 1e-12)


def test_renyi_rejects_bad_orders():
    with pytest.raises(ValueError):
        run_renyi_decay(P1, MU, 2.0, 3.0, 36.0, [0.0])


def test_crossing_time_scales_with_rho():
    sweep = renyi_crossing_sweep([1.0, 4.0], 1.0, [1.0, 0.0])
    assert sweep["max_relative_deviation"] < 1e-6


def test_mc_constant_function():
    r = run_mc_hypercontractivity(P1, Potential.quartic(1.0, 0.5), ONE, 2.0, 36.0, 40, 8, seed=1,
                                  h=0.05, t_burn=10.0, pool_size=20_000)
    assert r.passed
    assert r.results["norm_PTf_q"]["value"] == 1.0 and r.results["norm_f_p"]["value"] == 1.0
    assert r.results["statistical_band"] == 0.0


@pytest.mark.slow
def test_mc_quadratic_matches_closed_form():
    f = ExpQuadratic(0.0, np.array([0.1, 0.2]), np.zeros((2, 2)))
    r = run_mc_hypercontractivity(P1, Potential.quartic(1.0, 0.0), f, 2.0, 36.0, 400, 100, seed=3,
                                  h=0.02)
    assert r.passed, [c.to_dict() for c in r.checks if not c.passed]
    assert "closed_form_q" in r.results

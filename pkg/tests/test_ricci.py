import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftspec.mesh import icosphere_mesh
from driftspec.ricci import (
    AnalyticEigenfunction,
    FlowError,
    HomogeneousFlow,
    blowup_probe,
    eigen_along_flow,
    evolution_rhs,
    evolution_rhs_fem,
    fem_flow_spectrum,
    flow_state,
    monotonicity_verdict,
    sphere_monomial_integral,
)

S2 = HomogeneousFlow.from_tag("sphere-2")
S3 = HomogeneousFlow.from_tag("sphere-3")
TORUS = HomogeneousFlow.from_tag("flat-torus")


def test_flow_states():
    s = flow_state(S2, 0.0)
    assert (s.c, s.R, s.ricci) == (1.0, 2.0, 1.0)
    near = flow_state(S3, 0.25 - 1e-9)
    assert near.c == pytest.approx(4e-9) and near.R > 1e9
    t = flow_state(TORUS, 7.0)
    assert (t.c, t.R) == (1.0, 0.0)
    assert TORUS.blowup_time == math.inf
    with pytest.raises(FlowError):
        flow_state(S3, 0.25)
    with pytest.raises(FlowError):
        flow_state(S2, -0.1)


def test_sphere_integrals():
    assert sphere_monomial_integral((0, 0, 0)) == pytest.approx(4 * math.pi)
    assert sphere_monomial_integral((0, 0, 0, 0)) == pytest.approx(2 * math.pi**2)
    assert sphere_monomial_integral((2, 0, 0)) == pytest.approx(4 * math.pi / 3)
    assert sphere_monomial_integral((1, 0, 0)) == 0.0


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("k", [0, 1, 2, 3, 5])
def test_harmonic_polynomials_have_sphere_eigenvalues(n, k):
    u = AnalyticEigenfunction.sphere(n, k)
    assert u.unit_eigenvalue == pytest.approx(k * (k + n - 1), abs=1e-10)


@pytest.mark.parametrize("flow, k, factor", [(S2, 1, 2.0), (S2, 3, 2.0), (S3, 1, 4.0), (S3, 2, 4.0), (TORUS, 2, 0.0)])
def test_evolution_at_time_zero(flow, k, factor):
    u = AnalyticEigenfunction.sphere(flow.n, k) if flow.manifold == "sphere" else AnalyticEigenfunction.torus(2, k, flow.size)
    lam = u.unit_eigenvalue
    assert evolution_rhs(flow, u, flow_state(flow, 0.0)) == pytest.approx(factor * lam, rel=1e-10, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0.0, 0.245), k=st.integers(1, 4), psi=st.floats(0.2, 5.0))
def test_s3_prediction_matches_closed_form_derivative(t, k, psi):
    tr = eigen_along_flow(S3, [t], k, psi)
    assert tr.lam_prime_pred[0] == pytest.approx(tr.lam_prime_exact[0], rel=1e-10)
    assert tr.lam[0] == pytest.approx(psi * k * (k + 2) / (1 - 4 * t), rel=1e-10)


def test_s2_trace_and_export(tmp_path):
    tr = eigen_along_flow(S2, [0, 0.1, 0.2, 0.4], 1)
    assert np.allclose(tr.lam, 2 / (1 - 2 * tr.times), rtol=1e-12)
    assert tr.verdict == "increasing" and tr.hypothesis_satisfied
    tr.export(tmp_path / "trace.csv")
    rows = list(csv.DictReader((tmp_path / "trace.csv").read_text().splitlines()))
    assert list(rows[0]) == ["t", "lambda", "lambda_prime_pred", "lambda_prime_exact", "c_of_t", "R_min", "R_max"]
    assert len(rows) == 4


def test_s3_scale_invariant_and_ratio():
    tr = eigen_along_flow(S3, [0, 0.1, 0.2, 0.24], 1)
    inv = tr.scaling_invariant
    assert np.allclose(inv, inv[0], rtol=1e-10)
    assert tr.lam[-1] / tr.lam[0] == pytest.approx(25.0, abs=1e-8)
    assert tr.verdict == "increasing"


def test_torus_is_constant_with_equality_in_the_hypothesis():
    tr = eigen_along_flow(TORUS, [0, 1, 2], 1)
    assert np.all(tr.lam_prime_pred == 0.0)
    assert tr.verdict == "non-decreasing"
    assert tr.hypothesis_margin == 0.0 and tr.hypothesis_satisfied


def test_grid_validation():
    with pytest.raises(FlowError):
        eigen_along_flow(S2, [0.1, 0.1])
    with pytest.raises(FlowError):
        eigen_along_flow(S3, [0.0, 0.3])


def test_icosphere_evolution_within_one_percent():
    m = icosphere_mesh(3)
    for t in (0.0, 0.2):
        spec = fem_flow_spectrum(m, S2, t, 6)
        pred = evolution_rhs_fem(spec, [1, 2, 3], S2, t)
        assert np.allclose(pred, 2 * 2 / (1 - 2 * t) ** 2, rtol=0.01)


def test_fem_rejects_wrong_meshes():
    from driftspec.mesh import rectangle_mesh

    with pytest.raises(FlowError):
        fem_flow_spectrum(rectangle_mesh(nx=4), S2, 0.0, 2)


def test_blowup_probe():
    rep = blowup_probe(S3, 1, [0.0, 0.1, 0.2, 0.24], epsilon=1 / 3)
    assert rep.lam[-1] == pytest.approx(75.0)
    assert rep.constant == pytest.approx(0.75)
    assert rep.fit_spread < 1e-12 and rep.diverges
    assert rep.bound_holds and rep.pinching_ok
    # the bound lambda (R_min + (2 eps - 1) R_max) with eps = 1/3 equals 4 lambda / c here
    assert np.allclose(rep.slope_bound, 4 * rep.lam / (1 - 4 * rep.times))
    with pytest.raises(FlowError):
        blowup_probe(S3, 1, [0.0, 0.1], epsilon=0.6)
    with pytest.raises(FlowError):
        blowup_probe(S3, 1, [0.0, 0.25])
    with pytest.raises(FlowError):
        blowup_probe(S2, 1, [0.0])


def test_monotonicity_verdicts():
    assert monotonicity_verdict([1, 2, 3]) == "increasing"
    assert monotonicity_verdict([1, 1, 2]) == "non-decreasing"
    assert monotonicity_verdict([1, 0.5]) == "not monotone"

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftspec.fields import (
    FieldError,
    MetricField,
    ScalarField,
    SymTensorField,
    TensorFamily,
    cell_gradient,
    ellipticity_bounds,
    generalized_eigvals,
    induced_metric,
    lie_derivative_metric,
    perturb_metric,
    trace_g,
    weighted_volume,
)
from driftspec.mesh import icosphere_mesh, rectangle_mesh


@pytest.fixture(scope="module")
def square():
    return rectangle_mesh(nx=6)


def test_asymmetric_tensor_is_rejected(square):
    A = np.zeros((square.n_cells, 2, 2))
    A[:, 0, 1] = 1.0
    with pytest.raises(FieldError, match="not symmetric"):
        SymTensorField(A)


def test_metric_must_be_positive_definite(square):
    g = np.broadcast_to(np.diag([1.0, -1.0]), (square.n_cells, 2, 2))
    with pytest.raises(FieldError, match="positive-definite on cell 0"):
        MetricField(g)


def test_psi_must_be_positive():
    with pytest.raises(FieldError):
        ScalarField([1.0, 0.0], "psi")
    with pytest.raises(FieldError):
        ScalarField([np.nan], "eta")


def test_induced_metric_is_identity_in_local_frames(square):
    g = induced_metric(square)
    assert np.allclose(g.values, np.eye(2))
    s = icosphere_mesh(1)
    assert np.allclose(induced_metric(s).values, np.eye(2))


def test_chart_metric_sampled_at_centroids(square):
    g = induced_metric(square, lambda x: np.diag([1.0 + x[0], 2.0]))
    c = square.cell_centroids()
    assert np.allclose(g.values[:, 0, 0], 1.0 + c[:, 0])
    with pytest.raises(FieldError, match="flat chart"):
        induced_metric(icosphere_mesh(1), lambda x: np.eye(2))


def test_ellipticity_bounds_and_offending_cell(square):
    g = induced_metric(square)
    T = SymTensorField.constant(square, np.diag([0.5, 3.0]))
    assert ellipticity_bounds(T, g) == pytest.approx((0.5, 3.0))
    bad = T.values.copy()
    bad[7] = np.diag([1.0, -1.0])
    with pytest.raises(FieldError, match="cell 7"):
        ellipticity_bounds(SymTensorField(bad), g)


def test_perturb_metric_zero_step_and_loss_of_positivity(square):
    g = induced_metric(square)
    H = g.as_tensor("H")
    assert perturb_metric(g, H, 0.0) is g
    assert np.allclose(perturb_metric(g, H, 0.5).values, 1.5 * np.eye(2))
    with pytest.raises(FieldError, match="loses positive-definiteness"):
        perturb_metric(g, H, -1.0)


def test_trace_and_weighted_volume(square):
    g = induced_metric(square)
    assert np.allclose(trace_g(g, g.values), 2.0)
    eta = np.full(square.n_vertices, np.log(2.0))
    assert weighted_volume(square, g, eta) == pytest.approx(np.pi**2 / 2)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), c=st.floats(-2, 2))
def test_cell_gradient_is_exact_for_affine_functions(a, b, c):
    m = rectangle_mesh(nx=4)
    f = a * m.vertices[:, 0] + b * m.vertices[:, 1] + c
    assert np.allclose(cell_gradient(m, f), [a, b], atol=1e-12)


def test_lie_derivative_of_linear_field(square):
    g = induced_metric(square)
    A = np.array([[0.3, -0.2], [0.5, 0.1]])
    V = square.vertices @ A.T
    H = lie_derivative_metric(square, g, V)
    assert np.allclose(H.values, A + A.T)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.1, 10.0))
def test_generalized_eigenvalues_scale_inversely_with_metric(scale):
    m = rectangle_mesh(nx=4)
    g = induced_metric(m)
    T = SymTensorField.constant(m, [[2.0, 0.5], [0.5, 1.0]])
    w1 = generalized_eigvals(T.values, g)
    w2 = generalized_eigvals(T.values, MetricField(scale * g.values))
    assert np.allclose(w2, w1 / scale)


def test_tensor_family_rules(square):
    g = induced_metric(square)
    H = SymTensorField.constant(square, [[1.0, 2.0], [2.0, 3.0]], "H")
    psi = 1.0 + square.vertices[:, 0]
    fam = TensorFamily.conformal(psi)
    psi_c = psi[square.cells].mean(axis=1)
    assert np.allclose(fam.evaluate(square, g).values, psi_c[:, None, None] * np.eye(2))
    assert np.allclose(fam.derivative(square, g, H).values, psi_c[:, None, None] * H.values)
    assert np.allclose(TensorFamily.metric().derivative(square, g, H).values, H.values)
    fixed = TensorFamily.fixed(g)
    assert np.allclose(fixed.derivative(square, g, H).values, 0.0)
    with pytest.raises(FieldError):
        TensorFamily("exotic")
    with pytest.raises(FieldError):
        TensorFamily.conformal(-psi)

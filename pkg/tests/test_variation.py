import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftspec.assembly import assemble, solve_eigen
from driftspec.fields import FieldError, SymTensorField, TensorFamily, induced_metric
from driftspec.mesh import rectangle_mesh
from driftspec.variation import (
    VariationSpec,
    _match,
    compare_slopes,
    fd_slopes,
    hadamard_slopes,
    richardson,
    slope_matrix,
)



def conformal_bump(mesh, g, x0=1.0, y0=2.0):
    c = mesh.cell_centroids()
    a = np.exp(-((c[:, 0] - x0) ** 2 + (c[:, 1] - y0) ** 2))
    return SymTensorField(a[:, None, None] * g.values, "H")


def test_uniform_scaling_metric_family_gives_minus_lambda(square_dirichlet):
    op = square_dirichlet.operator
    var = VariationSpec(op.metric.as_tensor("H"))
    for i, lam in enumerate(square_dirichlet.eigenvalues):
        assert hadamard_slopes(square_dirichlet, [i], var)[0] == pytest.approx(-lam, rel=1e-10)


def test_uniform_scaling_fixed_family_gives_minus_two_lambda(square32):
    g = induced_metric(square32)
    fam = TensorFamily.fixed(g)
    s = solve_eigen(assemble(square32, g, fam), 4)
    var = VariationSpec(g.as_tensor("H"), family=fam)
    assert np.allclose([hadamard_slopes(s, [i], var)[0] for i in range(4)], -2 * s.eigenvalues, rtol=1e-10)


def test_interval_uniform_scaling_is_minus_lambda(interval_dirichlet):
    g = interval_dirichlet.operator.metric
    var = VariationSpec(g.as_tensor("H"))
    assert hadamard_slopes(interval_dirichlet, [2], var)[0] == pytest.approx(-interval_dirichlet.eigenvalues[2])


def test_conformal_bump_matches_finite_differences(square_dirichlet, square32):
    var = VariationSpec(conformal_bump(square32, square_dirichlet.operator.metric))
    for cluster in ([0], [1, 2], [3]):
        rep = compare_slopes(square_dirichlet, cluster, var)
        assert rep.rel_err.max() < 1e-6
        assert np.allclose(rep.fd.order, 2.0, atol=0.05)


def test_conformal_family_with_weight_rate_matches_fd(square32):
    g = induced_metric(square32)
    x, y = square32.vertices.T
    fam = TensorFamily.conformal(1.0 + 0.3 * np.sin(x) * np.sin(y))
    eta = 0.2 * x
    s = solve_eigen(assemble(square32, g, fam, eta), 3)
    var = VariationSpec(conformal_bump(square32, g), eta_dot=np.cos(x) * np.cos(y), family=fam)
    fd = fd_slopes(s, var, [0]).slopes
    for form in ("gradient", "weak"):
        assert hadamard_slopes(s, [0], var, form)[0] == pytest.approx(fd[0], rel=1e-3)
    assert hadamard_slopes(s, [0], var, "weak")[0] == pytest.approx(fd[0], rel=1e-8)


def test_tensor_prime_override_is_used(square_dirichlet):
    op = square_dirichlet.operator
    H = SymTensorField(np.zeros_like(op.metric.values), "H")
    tp = SymTensorField(op.metric.values.copy(), "Tprime")
    # T' = g with H = 0 scales T by (1 + t): slopes equal lambda
    var = VariationSpec(H, tensor_prime=tp)
    assert hadamard_slopes(square_dirichlet, [0], var)[0] == pytest.approx(square_dirichlet.eigenvalues[0])
    assert fd_slopes(square_dirichlet, var, [0]).slopes[0] == pytest.approx(square_dirichlet.eigenvalues[0], rel=1e-8)


def test_slope_matrix_is_symmetric(square_dirichlet, square32):
    var = VariationSpec(conformal_bump(square32, square_dirichlet.operator.metric), eta_dot=square32.vertices[:, 0])
    S = slope_matrix(square_dirichlet, [1, 2], var)
    assert np.allclose(S, S.T)


def test_wrong_shapes_and_families_are_rejected(square_dirichlet):
    m = rectangle_mesh(nx=4)
    H = SymTensorField(np.zeros((m.n_cells, 2, 2)), "H")
    with pytest.raises(FieldError):
        slope_matrix(square_dirichlet, [0], VariationSpec(H))
    op = square_dirichlet.operator
    var = VariationSpec(op.metric.as_tensor("H"), family=TensorFamily.conformal(np.full(op.mesh.n_vertices, 2.0)))
    with pytest.raises(FieldError, match="does not reproduce"):
        fd_slopes(square_dirichlet, var, [0])


def test_fd_step_validation(square_dirichlet):
    var = VariationSpec(square_dirichlet.operator.metric.as_tensor("H"))
    with pytest.raises(ValueError, match="decreasing"):
        fd_slopes(square_dirichlet, var, [0], steps=(1e-3, 1e-2))
    with pytest.raises(ValueError, match="noise floor"):
        fd_slopes(square_dirichlet, var, [0], steps=(1e-2, 1e-12))


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3), h=st.floats(0.01, 0.2))
def test_richardson_removes_even_error_terms(a, b, c, h):
    steps = np.array([h, h / 2, h / 4])
    values = a + b * steps**2 + c * steps**4
    assert richardson(values, steps)[-1][0] == pytest.approx(a, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(4))))
def test_branch_matching_recovers_permutations(perm):
    Q = np.linalg.qr(np.random.default_rng(3).standard_normal((10, 4)))[0]
    assert list(_match(Q, Q[:, perm])) == [perm.index(i) for i in range(4)]


def test_slope_report_export(tmp_path, square_dirichlet, square32):
    var = VariationSpec(conformal_bump(square32, square_dirichlet.operator.metric))
    rep = compare_slopes(square_dirichlet, [1, 2], var)
    rep.export(tmp_path / "slopes.csv")
    rows = list(csv.DictReader((tmp_path / "slopes.csv").read_text().splitlines()))
    assert list(rows[0]) == ["branch", "predicted", "oracle", "rel_err", "fd_order"]
    assert len(rows) == 2
    assert rep.summary()["multiplicity"] == 2


def test_fd_is_thread_count_independent(square_dirichlet, square32):
    var = VariationSpec(conformal_bump(square32, square_dirichlet.operator.metric))
    a = fd_slopes(square_dirichlet, var, [1, 2], n_jobs=1).slopes
    b = fd_slopes(square_dirichlet, var, [1, 2], n_jobs=3).slopes
    assert np.array_equal(a, b)

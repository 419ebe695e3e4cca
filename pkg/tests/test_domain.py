import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftspec.domain import (
    BoundaryField,
    DiffeoFamily,
    DomainError,
    boundary_geometry,
    boundary_slopes,
    compare_domain_slopes,
    conormal_residual,
    domain_fd_slopes,
    extremal_check,
    make_volume_preserving,
    pullback_metric,
    pullback_tensor,
    volume_variation,
)
from driftspec.fields import SymTensorField, TensorFamily, induced_metric
from driftspec.mesh import annulus_mesh, disk_mesh, icosphere_mesh, interval_mesh, rectangle_mesh
from driftspec.variation import hadamard_slopes

from conftest import solve


def test_pullback_at_zero_is_identity(square32):
    g = induced_metric(square32)
    eta = square32.vertices[:, 0]
    g_t, eta_t = pullback_metric(square32, g, square32.vertices, 0.0, eta)
    assert g_t is g
    assert np.array_equal(eta_t, eta)


def test_interval_dilation_pullback():
    m = interval_mesh(length=2.0, n=20)
    g_t, _ = pullback_metric(m, induced_metric(m), m.vertices, 0.3)
    assert np.allclose(g_t.values, 1.3**2)


def test_rigid_translation_is_an_isometry(square32):
    g = induced_metric(square32)
    V = np.tile([0.4, -0.7], (square32.n_vertices, 1))
    g_t, eta_t = pullback_metric(square32, g, V, 0.2, lambda x: x[0] + 2 * x[1])
    assert np.allclose(g_t.values, g.values)
    assert np.allclose(eta_t, square32.vertices @ [1, 2] + 0.2 * (0.4 - 1.4))


def test_pullback_tensor_uses_the_jacobian(square32):
    T = SymTensorField.constant(square32, [[2.0, 0.0], [0.0, 1.0]])
    V = square32.vertices * [1.0, 0.0]
    assert np.allclose(pullback_tensor(square32, T, V, 0.5).values, np.diag([4.5, 1.0]))


def test_diffeo_injectivity_radius_and_inversion():
    m = interval_mesh(length=1.0, n=10)
    fam = DiffeoFamily(m, -m.vertices)
    assert fam.max_step() == pytest.approx(1.0)
    with pytest.raises(DomainError, match="inverts cell"):
        fam.check(1.5)
    with pytest.raises(DomainError, match="chart mesh"):
        DiffeoFamily(icosphere_mesh(1), np.zeros((42, 3)))


@pytest.mark.parametrize("bc", ["dirichlet", "t-neumann"])
def test_interval_dilation_slopes_are_minus_two_lambda(bc):
    s = solve(interval_mesh(n=10000), 7, bc)
    start = 1 if bc == "dirichlet" else 0
    for i in range(7):
        k = i + start
        if k == 0:
            continue
        slope = boundary_slopes(s, [i], s.operator.mesh.vertices)[0]
        assert slope == pytest.approx(-2.0 * k**2, rel=1e-6)


def test_interval_dilation_error_is_second_order():
    errs = []
    for n in (100, 200, 400):
        s = solve(interval_mesh(n=n), 3)
        errs.append(abs(boundary_slopes(s, [2], s.operator.mesh.vertices)[0] / -18.0 - 1))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_interval_dilation_cell_gradient_is_only_first_order(interval_dirichlet):
    V = interval_dirichlet.operator.mesh.vertices
    slope = boundary_slopes(interval_dirichlet, [0], V, "cell")[0]
    assert 1e-6 < abs(slope + 2.0) < 1e-2


def test_volume_route_is_the_exact_discrete_derivative(square32):
    s = solve(square32, 3, "dirichlet", eta=0.3 * square32.vertices[:, 1])
    x, y = square32.vertices.T
    V = np.column_stack([0.2 * x * np.sin(y), 0.1 * x * y])
    var = volume_variation(s.operator, V)
    pred = hadamard_slopes(s, [0], var, "weak")[0]
    fd = domain_fd_slopes(s, [0], V).slopes[0]
    assert pred == pytest.approx(fd, rel=1e-7)


def test_tangential_field_gives_zero_slopes(square_neumann, square32):
    x, y = square32.vertices.T
    V = np.column_stack([np.sin(x) * np.cos(y), np.sin(y) * np.cos(2 * x)])
    for cluster in ([1, 2], [3], [4, 5]):
        lam = square_neumann.eigenvalues[cluster[0]]
        assert np.abs(boundary_slopes(square_neumann, cluster, V)).max() <= 1e-8 * (1 + lam)


def test_disk_dilation_matches_pullback_fd(disk16):
    V = disk16.operator.mesh.vertices
    rep = compare_domain_slopes(disk16, [0], V)
    assert rep.rel_err[0] < 0.02
    assert rep.predicted[0] == pytest.approx(-2 * disk16.eigenvalues[0], rel=0.02)


def test_neumann_random_field_matches_fd(square_neumann, square32):
    x, y = square32.vertices.T
    V = np.column_stack([0.3 * np.cos(x) + 0.2 * np.sin(y), 0.1 + 0.3 * np.sin(2 * x) * np.cos(y)])
    rep = compare_domain_slopes(square_neumann, [3], V)
    assert rep.rel_err[0] < 0.02


def test_anisotropic_tensor_dirichlet_dilation():
    # T fixed and constant: dilation by (1+t) divides every eigenvalue by (1+t)^2
    m = rectangle_mesh(nx=24)
    g = induced_metric(m)
    T = SymTensorField.constant(m, [[2.0, 0.3], [0.3, 1.0]])
    from driftspec.assembly import assemble, solve_eigen

    s = solve_eigen(assemble(m, g, TensorFamily.fixed(T)), 2)
    assert boundary_slopes(s, [0], m.vertices)[0] == pytest.approx(-2 * s.eigenvalues[0], rel=0.02)
    assert domain_fd_slopes(s, [0], m.vertices).slopes[0] == pytest.approx(-2 * s.eigenvalues[0], rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_outward_normal_speed_never_raises_dirichlet_eigenvalues(seed, square_dirichlet):
    rng = np.random.default_rng(seed)
    m = square_dirichlet.operator.mesh
    c = m.vertices - np.pi / 2
    V = c * rng.uniform(0.1, 1.0, (m.n_vertices, 1))  # outward on the convex square
    assert np.all(boundary_slopes(square_dirichlet, [1, 2], V) <= 1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mean_subtracted_profile_has_zero_integral(seed, square_dirichlet):
    rng = np.random.default_rng(seed)
    nb = len(square_dirichlet.operator.mesh.boundary_faces)
    v = make_volume_preserving(square_dirichlet.operator, rng.standard_normal(nb) * 10 ** rng.uniform(-3, 3))
    assert abs(v.integral()) <= 1e-12 * v.abs_integral()


def test_two_component_field_on_annulus():
    s = solve(annulus_mesh(n=6), 2)
    v = make_volume_preserving(s.operator, mode="two-component")
    assert abs(v.integral()) <= 1e-12 * v.abs_integral()
    inner = v.component == 0
    assert np.all(v.values[inner] == v.values[inner][0])
    assert v.values[inner][0] * v.values[~inner][0] < 0
    zero = make_volume_preserving(s.operator, np.zeros(len(v.values)))
    assert zero.integral() == 0.0


def test_two_component_needs_two_components(square_dirichlet):
    with pytest.raises(DomainError, match="at least two components"):
        make_volume_preserving(square_dirichlet.operator, mode="two-component")


def test_volume_preserving_slopes_from_boundary_field(square_dirichlet):
    v = make_volume_preserving(square_dirichlet.operator, lambda x: x[0] + x[1] ** 2)
    slopes = boundary_slopes(square_dirichlet, [0], v)
    assert np.isfinite(slopes).all()
    with pytest.raises(DomainError):
        boundary_slopes(square_dirichlet, [0], BoundaryField(np.ones(3), np.zeros(3), np.ones(3)))


def test_extremal_disk_is_constant_and_improves_with_refinement(disk16):
    coarse = extremal_check(disk16, 0)
    fine = extremal_check(solve(disk_mesh(n=32), 1), 0)
    assert coarse.ratio < 0.02 and fine.ratio < coarse.ratio
    # |d phi / d nu| for the normalised first disk mode is j0 / sqrt(pi)
    from scipy.special import jn_zeros

    assert fine.mean == pytest.approx(jn_zeros(0, 1)[0] / math.sqrt(math.pi), rel=0.01)


def test_extremal_square_matches_sine_profile(square_dirichlet):
    rep = extremal_check(square_dirichlet, 0)
    analytic = math.sqrt(0.5 - (2 / math.pi) ** 2) / (2 / math.pi)
    assert rep.ratio == pytest.approx(analytic, rel=0.02)
    assert rep.ratio > 0.2


def test_extremal_annulus_reports_each_component(tmp_path):
    s = solve(annulus_mesh(n=6), 2)
    rep = extremal_check(s, 0)
    assert set(rep.component_means) == {0, 1}
    assert all(np.isfinite(v) and v > 0 for v in rep.component_means.values())
    rep.export(tmp_path / "b.csv")
    rows = list(csv.DictReader((tmp_path / "b.csv").read_text().splitlines()))
    assert list(rows[0]) == ["face_id", "component", "s", "value"]
    assert len(rows) == len(s.operator.mesh.boundary_faces)


def test_extremal_check_needs_dirichlet(square_neumann):
    with pytest.raises(DomainError, match="Dirichlet"):
        extremal_check(square_neumann, 1)


def test_boundary_lengths_sum_to_perimeter(square_dirichlet):
    geo = boundary_geometry(square_dirichlet.operator)
    assert geo.length.sum() == pytest.approx(4 * math.pi)
    assert np.allclose(geo.t_normal, 1.0)


def test_conormal_residual_is_small_for_neumann_modes(square_neumann):
    assert conormal_residual(square_neumann, 3) < 0.1

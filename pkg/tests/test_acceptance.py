"""End-to-end acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL criterion N: ...`` line (also repeated in
the terminal summary) and then asserts the verdict.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from driftspec.assembly import assemble, solve_eigen
from driftspec.cli import main
from driftspec.domain import boundary_slopes, compare_domain_slopes, extremal_check
from driftspec.fields import SymTensorField, TensorFamily, induced_metric
from driftspec.mesh import disk_mesh, icosphere_mesh, interval_mesh, rectangle_mesh
from driftspec.ricci import HomogeneousFlow, eigen_along_flow, evolution_rhs_fem, fem_flow_spectrum
from driftspec.splitting import _trig_series, cluster_slopes, property_p_tensor, splitting_experiment
from driftspec.variation import VariationSpec, compare_slopes, hadamard_slopes

from conftest import solve

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS = []


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.abs(b)


@pytest.fixture(scope="module")
def square():
    return rectangle_mesh(nx=32)


@pytest.fixture(scope="module")
def square_spec(square):
    return solve(square, 6)


def test_criterion_1_spectrum_accuracy():
    s = solve(interval_mesh(n=400), 6)
    e1 = rel(s.eigenvalues, np.arange(1, 7) ** 2).max()
    q = solve(rectangle_mesh(nx=100), 8)
    exact = np.array([2, 5, 5, 8, 10, 10, 13, 13], dtype=float)
    e2 = rel(q.eigenvalues, exact).max()
    verdict(1, e1 <= 5e-3 and e2 <= 5e-3,
            f"interval max rel err {e1:.2e}, square 100x100 max rel err {e2:.2e} (tol 5e-3)")


def test_criterion_2_weighted_operator_invariance(square):
    g = induced_metric(square)
    eta = 0.3 * np.sin(square.vertices[:, 0]) * square.vertices[:, 1]
    base = solve_eigen(assemble(square, g, TensorFamily.metric(), eta), 6)
    shifted = solve_eigen(assemble(square, g, TensorFamily.metric(), eta + 3.7), 6)
    doubled = solve_eigen(assemble(square, g, TensorFamily.fixed(SymTensorField(2 * g.values)), eta), 6)
    e_shift = rel(shifted.eigenvalues, base.eigenvalues).max()
    e_double = rel(doubled.eigenvalues, 2 * base.eigenvalues).max()
    verdict(2, e_shift <= 1e-10 and e_double <= 1e-12,
            f"eta + const rel change {e_shift:.2e} (tol 1e-10), T -> 2T rel err {e_double:.2e} (tol 1e-12)")


def test_criterion_3_metric_formula(square, square_spec):
    g = square_spec.operator.metric
    H = g.as_tensor("H")
    lam = square_spec.eigenvalues
    e_metric = max(rel(hadamard_slopes(square_spec, [i], VariationSpec(H))[0], -lam[i]) for i in (0, 3))
    fam = TensorFamily.fixed(g)
    fixed = solve_eigen(assemble(square, g, fam), 4)
    e_fixed = max(rel(hadamard_slopes(fixed, [i], VariationSpec(H, family=fam))[0], -2 * fixed.eigenvalues[i])
                  for i in (0, 3))
    rng = np.random.default_rng(2024)
    a = _trig_series(square.cell_centroids(), rng)
    Hc = SymTensorField((0.5 * a / np.abs(a).max())[:, None, None] * g.values, "H")
    e_fd = compare_slopes(square_spec, [0], VariationSpec(Hc)).rel_err.max()
    verdict(3, e_metric <= 1e-8 and e_fixed <= 1e-8 and e_fd <= 1e-3,
            f"H = g metric family {e_metric:.1e}, fixed family {e_fixed:.1e} (tol 1e-8); "
            f"random conformal vs Richardson FD {e_fd:.1e} (tol 1e-3)")


def test_criterion_4_degenerate_branches(square, square_spec):
    g = square_spec.operator.metric
    errs = []
    for seed in range(5):
        a = _trig_series(square.cell_centroids(), np.random.default_rng(seed))
        H = SymTensorField((0.5 * a / np.abs(a).max())[:, None, None] * g.values, "H")
        errs.append(compare_slopes(square_spec, [1, 2], VariationSpec(H)).rel_err.max())
    worst = max(errs)
    verdict(4, worst <= 1e-2, f"lambda=5 pair, 5 seeds, worst branch rel err {worst:.1e} (tol 1e-2)")


def test_criterion_5_domain_formula():
    s = solve(interval_mesh(n=10000), 6)
    V = s.operator.mesh.vertices
    slopes = np.array([boundary_slopes(s, [i], V)[0] for i in range(6)])
    e_int = rel(slopes, -2.0 * np.arange(1, 7) ** 2).max()
    d = solve(disk_mesh(n=16), 2)
    e_disk = compare_domain_slopes(d, [0], d.operator.mesh.vertices).rel_err.max()
    verdict(5, e_int <= 1e-6 and e_disk <= 2e-2,
            f"interval dilation vs -2k^2 {e_int:.1e} (tol 1e-6, n=10000); disk dilation vs FD {e_disk:.1e} (tol 2e-2)")


def test_criterion_6_neumann_formula(square):
    s = solve(square, 8, "t-neumann")
    x, y = square.vertices.T
    rng = np.random.default_rng(6)
    c = rng.uniform(-0.3, 0.3, 4)
    V = np.column_stack([c[0] * np.cos(x) + c[1] * np.sin(y) + 0.1, c[2] * np.sin(2 * x) * np.cos(y) + c[3]])
    e_fd = compare_domain_slopes(s, [3], V).rel_err.max()
    W = np.column_stack([np.sin(x) * np.cos(y), np.sin(y) * np.cos(2 * x)])
    tang = max(np.abs(boundary_slopes(s, [i], W)).max() / (1 + s.eigenvalues[i]) for i in range(1, 8))
    verdict(6, e_fd <= 2e-2 and tang <= 1e-8,
            f"seeded V vs FD {e_fd:.1e} (tol 2e-2); tangential |slope|/(1+lambda) {tang:.1e} (tol 1e-8)")


def test_criterion_7_extremal_criterion(square_spec):
    coarse = extremal_check(solve(disk_mesh(n=16), 1), 0).ratio
    fine = extremal_check(solve(disk_mesh(n=32), 1), 0).ratio
    sq = extremal_check(square_spec, 0).ratio
    verdict(7, fine <= 2e-2 and fine < coarse and sq >= 0.2,
            f"disk ratio {coarse:.1e} -> {fine:.1e} under refinement (tol 2e-2); square ratio {sq:.3f} (>= 0.2)")


def test_criterion_8_generic_splitting(square_spec):
    fm = splitting_experiment(square_spec, [1, 2], "metric", 20, seed=8).fraction
    fd = splitting_experiment(square_spec, [1, 2], "domain", 20, seed=8).fraction
    gap = np.ptp(cluster_slopes(square_spec, [1, 2], "metric", square_spec.operator.metric.as_tensor("H")))
    ok = fm >= 0.95 and fd >= 0.95 and gap <= 1e-6 * (1 + square_spec.eigenvalues[1])
    verdict(8, ok, f"split fraction metric {fm:.2f}, domain {fd:.2f} (>= 0.95); H = g gap {gap:.1e}")


def test_criterion_9_property_p_classifier():
    m = rectangle_mesh(nx=8)
    g = induced_metric(m)
    psi = 1.0 + 0.5 * np.sin(m.vertices[:, 0])
    T = SymTensorField.constant(m, [[2.0, 0.4], [0.4, 1.0]])
    got = (property_p_tensor(TensorFamily.conformal(psi), m, g, 3).classification,
           property_p_tensor(TensorFamily.metric(), m, g, 2).classification,
           property_p_tensor(TensorFamily.fixed(T), m, g, 3).classification)
    verdict(9, got == ("positive", "identically-zero", "negative"), f"classifications {got}")


def test_criterion_10_ricci_flow():
    s2 = eigen_along_flow(HomogeneousFlow.from_tag("sphere-2"), [0.0], 1)
    e_s2 = rel(s2.lam_prime_pred[0], 2 * s2.lam[0])
    mesh = icosphere_mesh(3)
    spec = fem_flow_spectrum(mesh, HomogeneousFlow.from_tag("sphere-2"), 0.0, 6)
    e_fem = rel(evolution_rhs_fem(spec, [1, 2, 3], HomogeneousFlow.from_tag("sphere-2"), 0.0), 4.0).max()
    S3 = HomogeneousFlow.from_tag("sphere-3")
    tr = eigen_along_flow(S3, [0.0, 0.05, 0.1, 0.15, 0.2, 0.24], 1)
    e_s3 = rel(tr.lam_prime_pred[0], 4 * tr.lam[0])
    inv = tr.lam * tr.c
    e_inv = np.ptp(inv) / inv[0]
    ratio = tr.lam[-1] / tr.lam[0]
    tor = eigen_along_flow(HomogeneousFlow.from_tag("flat-torus"), [0.0, 0.5, 1.0], 1)
    ok = (e_s2 <= 1e-10 and e_fem <= 1e-2 and e_s3 <= 1e-10 and e_inv <= 1e-10 and abs(ratio - 25) <= 1e-8
          and tr.verdict == "increasing" and np.all(tor.lam_prime_pred == 0) and tor.verdict == "non-decreasing")
    verdict(10, ok, f"S2 {e_s2:.1e}, S2 FEM {e_fem:.1e}, S3 {e_s3:.1e}, lambda c spread {e_inv:.1e}, "
                    f"ratio {ratio:.10f}, S3 {tr.verdict}, torus {tor.verdict}")


def test_criterion_11_determinism(tmp_path):
    differing = []
    for cfg in sorted(CONFIGS.glob("*.json")):
        kind = json.loads(cfg.read_text())["experiment"]
        a, b = tmp_path / cfg.stem / "a", tmp_path / cfg.stem / "b"
        assert main([kind, "--config", str(cfg), "--out", str(a)]) == 0
        assert main([kind, "--config", str(cfg), "--out", str(b), "--threads", "2"]) == 0
        for f in sorted(a.glob("*.csv")):
            if f.read_bytes() != (b / f.name).read_bytes():
                differing.append(f"{cfg.stem}/{f.name}")
    n = len(list(CONFIGS.glob("*.json")))
    verdict(11, not differing, f"{n} configs re-run, differing CSVs: {differing or 'none'}")

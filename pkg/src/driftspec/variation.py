"""First-order eigenvalue branches under metric, tensor and weight variations.

For a cluster of mass-orthonormal eigenfunctions ``phi_1..phi_m`` sharing the
eigenvalue ``lambda`` the branch derivatives are the eigenvalues of

    S_ij = 1/2 int [ h (T(dphi_i, dphi_j) - lambda phi_i phi_j)
                     + 2 HT(dphi_i, dphi_j)
                     + T(d eta_dot, d(phi_i phi_j)) ] e^{-eta} dM

with ``h = tr_g H`` and ``HT = -(T H + H T) + T'``.  The finite-difference
oracle re-solves the perturbed problems and tracks branches by eigenvector
overlap.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assembly import (
    OperatorPair,
    Spectrum,
    assemble,
    mass_local,
    mass_matrix,
    sandwich,
    solve_eigen,
    stiffness_local,
    stiffness_matrix,
    _scatter,
)
from .fields import (
    FieldError,
    MetricField,
    SymTensorField,
    TensorFamily,
    cell_average,
    cell_gradient,
    perturb_metric,
    trace_g,
)
from .io import write_csv

log = logging.getLogger(__name__)

DEFAULT_STEPS = (1e-2, 5e-3, 2.5e-3)


class BranchMatchingError(RuntimeError):
    """Perturbed eigenvectors could not be matched to the unperturbed cluster."""


@dataclass(frozen=True, eq=False)
class VariationSpec:
    """A first-order variation ``g -> g + tH``, ``eta -> eta + t eta_dot``.

    ``tensor_prime`` overrides the family derivative ``dF_g(H)`` when the
    tensor variation does not come from a family rule (domain pullbacks).
    """

    H: SymTensorField
    eta_dot: np.ndarray | None = None
    family: TensorFamily = field(default_factory=TensorFamily.metric)
    tensor_prime: SymTensorField | None = None

    def tprime(self, op: OperatorPair) -> SymTensorField:
        if self.tensor_prime is not None:
            return self.tensor_prime
        return self.family.derivative(op.mesh, op.metric, self.H)

    def eta_rate(self, n_vertices: int) -> np.ndarray:
        if self.eta_dot is None:
            return np.zeros(n_vertices)
        return np.asarray(self.eta_dot, dtype=float).ravel()


def script_h(T, H, Tprime, g: MetricField) -> SymTensorField:
    """``-(T H + H T) + T'`` with products taken through ``g^{-1}``."""
    t, hh, tp = np.asarray(T), np.asarray(H), np.asarray(Tprime)
    if not t.shape == hh.shape == tp.shape == g.values.shape:
        raise FieldError("T, H, T' and g must share the shape (nc, d, d)")
    gi = g.inverse
    th = t @ gi @ hh
    return SymTensorField(-(th + np.swapaxes(th, 1, 2)) + tp, "HT")


def _cluster_basis(spectrum: Spectrum, cluster, tol=1e-8):
    cluster = list(cluster)
    if not cluster:
        raise ValueError("cluster is empty")
    phi = spectrum.full_vectors[:, cluster]
    X = spectrum.vectors[:, cluster]
    gram = X.T @ (spectrum.operator.B @ X)
    err = np.abs(gram - np.eye(len(cluster))).max()
    if err > tol:
        raise ValueError(f"cluster eigenfunctions are not mass-orthonormal (error {err:.2e})")
    return phi, float(np.mean(spectrum.eigenvalues[cluster]))


def _eta_gradient_matrix(op: OperatorPair, eta_dot):
    """Sparse P with ``phi^T P psi = int mean(phi) T(d eta_dot, d psi) dm`` per cell."""
    mesh = op.mesh
    d1 = mesh.dim + 1
    a = np.einsum("cij,cj->ci", sandwich(op.metric, op.tensor.values), cell_gradient(mesh, eta_dot))
    q = np.einsum("cbj,cj->cb", mesh.basis_gradients, a)
    local = (op.cell_weights / d1)[:, None, None] * np.broadcast_to(q[:, None, :], (mesh.n_cells, d1, d1))
    return _scatter(mesh, local)


def slope_matrix(spectrum: Spectrum, cluster, var: VariationSpec, eta_form: str = "gradient") -> np.ndarray:
    """The symmetric m-by-m matrix whose eigenvalues are the branch slopes.

    ``eta_form="gradient"`` integrates the weight term as
    ``1/2 T(d eta_dot, d(phi_i phi_j))``; ``"weak"`` uses its integrated-by-parts
    twin ``-eta_dot (T(dphi_i, dphi_j) - lambda phi_i phi_j)``, which is the
    exact derivative of the discrete pencil.
    """
    op = spectrum.operator
    mesh, g = op.mesh, op.metric
    if np.asarray(var.H).shape != g.values.shape:
        raise FieldError("H must be defined on the operator's cells")
    phi, lam = _cluster_basis(spectrum, cluster)
    w = op.cell_weights
    h = trace_g(g, var.H.values)
    ht = script_h(op.tensor, var.H, var.tprime(op), g)
    form_t = sandwich(g, op.tensor.values)
    local = stiffness_local(mesh, sandwich(g, ht.values), w)
    local += stiffness_local(mesh, form_t, 0.5 * h * w)
    local -= lam * mass_local(mesh, 0.5 * h * w)
    M = _scatter(mesh, local)
    S = phi.T @ (M @ phi)
    eta_dot = var.eta_rate(mesh.n_vertices)
    if np.any(eta_dot):
        if eta_form == "gradient":
            P = _eta_gradient_matrix(op, eta_dot)
            E = phi.T @ (P @ phi)
            S = S + 0.5 * (E + E.T)
        elif eta_form == "weak":
            we = -cell_average(mesh, eta_dot) * w
            Me = stiffness_matrix(mesh, form_t, we) - lam * mass_matrix(mesh, we)
            S = S + phi.T @ (Me @ phi)
        else:
            raise ValueError(f"unknown eta_form {eta_form!r}")
    return 0.5 * (S + S.T)


def hadamard_slopes(spectrum: Spectrum, cluster, var: VariationSpec, eta_form: str = "gradient") -> np.ndarray:
    """Predicted branch derivatives of a cluster, sorted ascending."""
    return np.linalg.eigvalsh(slope_matrix(spectrum, cluster, var, eta_form))


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass(frozen=True)
class FDResult:
    """Finite-difference branch slopes with Richardson diagnostics."""

    slopes: np.ndarray
    steps: tuple
    differences: np.ndarray  # (n_steps, m) central differences per matched branch
    error: np.ndarray
    order: np.ndarray


def _select_branches(base: Spectrum, cluster, spec_t: Spectrum, min_overlap=0.5):
    X0 = base.vectors[:, cluster]
    P = X0.T @ (base.operator.B @ spec_t.vectors)
    weight = np.einsum("ij,ij->j", P, P)
    sel = np.sort(np.argsort(-weight, kind="stable")[: len(cluster)])
    C = P[:, sel]
    smin = np.linalg.svd(C, compute_uv=False).min()
    if weight[sel].min() < min_overlap or smin < min_overlap:
        raise BranchMatchingError(
            f"branch overlap too small (min weight {weight[sel].min():.3f}, "
            f"smallest singular value {smin:.3f}); retry with a smaller step"
        )
    return spec_t.eigenvalues[sel], C


def _match(Ca, Cb):
    """Permutation p maximizing sum |<a_i, b_p(i)>| between two branch bases."""
    _, cols = linear_sum_assignment(-np.abs(Ca.T @ Cb))
    return cols


def richardson(values, steps):
    """Neville table extrapolating central differences to ``t = 0`` in powers of ``t^2``.

    ``table[j][i]`` combines steps ``i..i+j``; ``table[-1][0]`` is the final estimate.
    """
    x = np.asarray(steps, dtype=float) ** 2
    table = [np.asarray(values, dtype=float)]
    for j in range(1, len(x)):
        prev = table[-1]
        ratio = (x[:-j] / x[j:]).reshape((-1,) + (1,) * (prev.ndim - 1))
        table.append(prev[1:] + (prev[1:] - prev[:-1]) / (ratio - 1.0))
    return table


def fd_branch_slopes(base: Spectrum, cluster, rebuild, steps=DEFAULT_STEPS, n_jobs: int = 1) -> FDResult:
    """Central-difference slopes of the branches emanating from ``cluster``.

    ``rebuild(t)`` must return the :class:`OperatorPair` of the perturbed
    problem on the same mesh and DOF set.
    """
    cluster = list(cluster)
    steps = tuple(float(s) for s in steps)
    if not steps or any(s <= 0 for s in steps) or list(steps) != sorted(steps, reverse=True):
        raise ValueError("steps must be positive and strictly decreasing")
    floor = math.sqrt(max(float(base.residuals.max()), 1e-16))
    if steps[-1] < floor:
        raise ValueError(f"smallest step {steps[-1]:.1e} is below the noise floor {floor:.1e}")
    m = len(cluster)
    k = min(base.operator.n_free, max(len(base), max(cluster) + m + 3))

    def solve(t):
        return solve_eigen(rebuild(t), k)

    ts = [s for t in steps for s in (t, -t)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            spectra = list(pool.map(solve, ts))
    else:
        spectra = [solve(t) for t in ts]

    diffs = []
    ref = None
    for i, t in enumerate(steps):
        lp, Cp = _select_branches(base, cluster, spectra[2 * i])
        lm, Cm = _select_branches(base, cluster, spectra[2 * i + 1])
        pm = _match(Cp, Cm)
        d = (lp - lm[pm]) / (2 * t)
        if ref is None:
            ref = Cp
        else:
            d = d[_match(ref, Cp)]
        diffs.append(d)
    diffs = np.array(diffs)
    table = richardson(diffs, steps)
    slopes = table[-1][-1]
    error = np.abs(slopes - table[-2][-1]) if len(table) > 1 else np.full(m, np.nan)
    if len(steps) >= 3:
        r = steps[-3] / steps[-2]
        with np.errstate(divide="ignore", invalid="ignore"):
            order = np.log(np.abs(diffs[-3] - diffs[-2]) / np.abs(diffs[-2] - diffs[-1])) / np.log(r)
    else:
        order = np.full(m, np.nan)
    idx = np.argsort(slopes)
    return FDResult(slopes[idx], steps, diffs[:, idx], error[idx], order[idx])


def metric_rebuild(op: OperatorPair, var: VariationSpec):
    """Perturbed problem ``g + tH``, ``T(t)`` per family rule, ``eta + t eta_dot``."""
    fam = var.family
    mesh = op.mesh
    if var.tensor_prime is None and fam.rule != "fixed":
        expected = fam.evaluate(mesh, op.metric).values
        if not np.allclose(expected, op.tensor.values, rtol=1e-12, atol=1e-14):
            raise FieldError("the variation's tensor family does not reproduce the operator's T")
    eta_dot = var.eta_rate(mesh.n_vertices)

    def rebuild(t):
        g_t = perturb_metric(op.metric, var.H, t)
        if var.tensor_prime is not None:
            T_t = SymTensorField(op.tensor.values + t * var.tensor_prime.values)
        elif fam.rule == "fixed":
            T_t = op.tensor
        else:
            T_t = fam.evaluate(mesh, g_t)
        return assemble(mesh, g_t, T_t, op.eta + t * eta_dot, op.bc)

    return rebuild


def fd_slopes(spectrum: Spectrum, var: VariationSpec, cluster, steps=DEFAULT_STEPS, n_jobs: int = 1) -> FDResult:
    """Finite-difference oracle for :func:`hadamard_slopes`."""
    return fd_branch_slopes(spectrum, cluster, metric_rebuild(spectrum.operator, var), steps, n_jobs)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class SlopeReport:
    eigenvalue: float
    predicted: np.ndarray
    oracle: np.ndarray
    fd: FDResult | None = None

    def __post_init__(self):
        if len(self.predicted) != len(self.oracle):
            raise ValueError("predicted and oracle slopes must have equal length")

    @property
    def multiplicity(self) -> int:
        return len(self.predicted)

    @property
    def rel_err(self) -> np.ndarray:
        p, o = np.asarray(self.predicted), np.asarray(self.oracle)
        floor = 1e-8 * (1.0 + abs(self.eigenvalue))
        return np.abs(p - o) / np.maximum(np.maximum(np.abs(o), np.abs(p)), floor)

    def rows(self):
        order = self.fd.order if self.fd is not None else [None] * self.multiplicity
        return [
            (i, self.predicted[i], self.oracle[i], self.rel_err[i], order[i])
            for i in range(self.multiplicity)
        ]

    def export(self, path):
        return write_csv(path, ["branch", "predicted", "oracle", "rel_err", "fd_order"], self.rows())

    def summary(self) -> dict:
        out = {
            "eigenvalue": float(self.eigenvalue),
            "multiplicity": self.multiplicity,
            "max_rel_err": float(self.rel_err.max()),
            "predicted": [float(v) for v in self.predicted],
            "oracle": [float(v) for v in self.oracle],
        }
        if self.fd is not None:
            out["fd_steps"] = list(self.fd.steps)
            out["fd_error_estimate"] = [float(v) for v in self.fd.error]
        return out


def compare_slopes(spectrum: Spectrum, cluster, var: VariationSpec, steps=DEFAULT_STEPS,
                   eta_form: str = "gradient", n_jobs: int = 1) -> SlopeReport:
    predicted = hadamard_slopes(spectrum, cluster, var, eta_form)
    fd = fd_slopes(spectrum, var, cluster, steps, n_jobs)
    lam = float(np.mean(spectrum.eigenvalues[list(cluster)]))
    return SlopeReport(lam, predicted, fd.slopes, fd)

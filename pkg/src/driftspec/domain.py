"""Eigenvalue branches under deformations of the domain.

A deformation ``f_t = id + tV`` of a chart domain is realised on the fixed
reference mesh by pulling back the metric, the tensor and the weight.  The
boundary formulas need the outward normal flux ``q = T(grad phi, nu)`` of each
eigenfunction.  By default it is recovered from the residual of the discrete
equations at the boundary nodes (the discrete Green identity), which is far
more accurate than the one-sided cell gradient; the latter is available as
``method="cell"``.

Slope matrices for a cluster ``phi_1..phi_m`` with normal speed ``v``:

* Dirichlet: ``S_ij = -int q_i q_j v / T(nu, nu) dnu``
* T-Neumann: ``S_ij = int (T(grad phi_i, grad phi_j) - lambda phi_i phi_j) v dnu``

with ``dnu = e^{-eta} dsigma``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .assembly import OperatorPair, Spectrum, assemble, sandwich
from .fields import (
    MetricField,
    SymTensorField,
    TensorFamily,
    VectorField,
    cell_average,
    cell_gradient,
    lie_derivative_metric,
    vector_gradient,
)
from .io import write_csv
from .mesh import Mesh
from .variation import (
    DEFAULT_STEPS,
    FDResult,
    SlopeReport,
    VariationSpec,
    _cluster_basis,
    fd_branch_slopes,
)

FLUX_METHODS = ("recovered", "cell")

# Gauss-Legendre rule on [0, 1], exact for the cubic integrands on edges.
_GAUSS_NODES = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


class DomainError(ValueError):
    """Raised for invalid deformations or boundary data."""


def _chart_only(mesh: Mesh):
    if mesh.is_embedded:
        raise DomainError("domain deformations need a flat chart mesh")
    if mesh.boundary_faces.size == 0:
        raise DomainError(f"{mesh.topology} mesh has no boundary")


def _face_rule(dim):
    if dim == 1:
        return np.zeros(1), np.ones(1)
    return _GAUSS_NODES, _GAUSS_WEIGHTS


def _on_faces(mesh: Mesh, vertex_values):
    """Interpolate vertex data to the face quadrature nodes, shape (nb, nq, ...)."""
    f = np.asarray(vertex_values, dtype=float)
    faces = mesh.boundary_faces
    s, _ = _face_rule(mesh.dim)
    if mesh.dim == 1:
        return f[faces[:, 0]][:, None]
    a, b = f[faces[:, 0]], f[faces[:, 1]]
    shape = (1, -1) + (1,) * (f.ndim - 1)
    s = s.reshape(shape)
    return (1.0 - s) * a[:, None] + s * b[:, None]


def vertex_gradient(mesh: Mesh, f) -> np.ndarray:
    """Volume-weighted average of the P1 cell gradients around each vertex, shape (nv, d)."""
    grad = cell_gradient(mesh, f)
    w = mesh.chart_volumes
    num = np.zeros((mesh.n_vertices, mesh.dim))
    den = np.zeros(mesh.n_vertices)
    for a in range(mesh.dim + 1):
        np.add.at(num, mesh.cells[:, a], w[:, None] * grad)
        np.add.at(den, mesh.cells[:, a], w)
    return num / den[:, None]


# ---------------------------------------------------------------------------
# boundary geometry


@dataclass(frozen=True, eq=False)
class BoundaryGeometry:
    """Per-face normals, lengths and weights of an operator's boundary."""

    op: OperatorPair

    @cached_property
    def cells(self) -> np.ndarray:
        return self.op.mesh.face_cells[0]

    @cached_property
    def covector(self) -> np.ndarray:
        """Outward conormal covector of each face in local coordinates, shape (nb, d)."""
        c, opp = self.op.mesh.face_cells
        return -self.op.mesh.basis_gradients[c, opp]

    @cached_property
    def metric(self) -> np.ndarray:
        return self.op.metric.values[self.cells]

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.metric)

    @cached_property
    def tensor_form(self) -> np.ndarray:
        """``g^{-1} T g^{-1}`` on each face's cell."""
        return sandwich(self.op.metric, self.op.tensor.values)[self.cells]

    @cached_property
    def covector_norm(self) -> np.ndarray:
        w = self.covector
        return np.sqrt(np.einsum("fi,fij,fj->f", w, self.inverse, w))

    @cached_property
    def normal(self) -> np.ndarray:
        """Outward unit normal vector ``g^{-1} w / |w|``."""
        return np.einsum("fij,fj->fi", self.inverse, self.covector) / self.covector_norm[:, None]

    @cached_property
    def t_normal(self) -> np.ndarray:
        """``T(nu, nu)`` per face."""
        T = self.op.tensor.values[self.cells]
        n = self.normal
        return np.einsum("fi,fij,fj->f", n, T, n)

    @cached_property
    def edge(self) -> np.ndarray:
        mesh = self.op.mesh
        if mesh.dim == 1:
            return np.zeros((len(self.cells), 1))
        faces = mesh.boundary_faces
        return mesh.vertices[faces[:, 1]] - mesh.vertices[faces[:, 0]]

    @cached_property
    def length(self) -> np.ndarray:
        """Riemannian face measure (1 for the endpoints of an interval)."""
        if self.op.mesh.dim == 1:
            return np.ones(len(self.cells))
        e = self.edge
        return np.sqrt(np.einsum("fi,fij,fj->f", e, self.metric, e))

    @cached_property
    def weight(self) -> np.ndarray:
        """Face measure in ``dnu = e^{-eta} dsigma``."""
        eta = self.op.eta[self.op.mesh.boundary_faces].mean(axis=1)
        return self.length * np.exp(-eta)

    @cached_property
    def t_tangential(self) -> np.ndarray:
        """``T(tau,tau) - T(tau,nu)^2 / T(nu,nu)``: the form left on T-Neumann traces."""
        if self.op.mesh.dim == 1:
            return np.zeros(len(self.cells))
        T = self.op.tensor.values[self.cells]
        tau = self.edge / self.length[:, None]
        tt = np.einsum("fi,fij,fj->f", tau, T, tau)
        tn = np.einsum("fi,fij,fj->f", tau, T, self.normal)
        return tt - tn**2 / self.t_normal

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Weighted P1 mass matrix of the boundary, indexed by vertex."""
        mesh = self.op.mesh
        n = mesh.n_vertices
        faces = mesh.boundary_faces
        if mesh.dim == 1:
            return sp.csr_matrix((self.weight, (faces[:, 0], faces[:, 0])), shape=(n, n))
        ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        local = self.weight[:, None, None] * ref
        rows = np.repeat(faces, 2, axis=1).ravel()
        cols = np.tile(faces, (1, 2)).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def normal_speed(self, V) -> np.ndarray:
        """``<V, nu>`` at the face quadrature nodes of a P1 chart vector field."""
        v = np.asarray(V, dtype=float)
        mesh = self.op.mesh
        if v.shape != (mesh.n_vertices, mesh.dim):
            raise DomainError(f"V must have shape ({mesh.n_vertices}, {mesh.dim})")
        vq = _on_faces(mesh, v)
        return np.einsum("fqi,fi->fq", vq, self.covector) / self.covector_norm[:, None]

    def integrate(self, values) -> float:
        """``int values dnu`` for values at the quadrature nodes."""
        _, w = _face_rule(self.op.mesh.dim)
        return float(np.einsum("fq,q,f->", np.asarray(values), w, self.weight))


def boundary_geometry(op: OperatorPair) -> BoundaryGeometry:
    _chart_only(op.mesh)
    return BoundaryGeometry(op)


def boundary_arclength(mesh: Mesh, lengths) -> np.ndarray:
    """Arclength of each face midpoint along its boundary component.

    Faces are walked head to tail starting from the lowest-numbered face of
    each component.  Interval endpoints get 0.
    """
    nb = len(mesh.boundary_faces)
    s = np.zeros(nb)
    if mesh.dim == 1:
        return s
    faces = mesh.boundary_faces
    starting = {int(a): f for f, a in enumerate(faces[:, 0])}
    seen = np.zeros(nb, dtype=bool)
    for first in range(nb):
        if seen[first]:
            continue
        f, acc = first, 0.0
        while not seen[f]:
            seen[f] = True
            s[f] = acc + 0.5 * lengths[f]
            acc += lengths[f]
            f = starting.get(int(faces[f, 1]), f)
    return s


# ---------------------------------------------------------------------------
# deformations


@dataclass(frozen=True, eq=False)
class DiffeoFamily:
    """``f_t = id + tV`` for a P1 chart vector field ``V``."""

    mesh: Mesh
    V: VectorField

    def __post_init__(self):
        _chart_only(self.mesh)
        V = self.V if isinstance(self.V, VectorField) else VectorField(self.V)
        if V.values.shape != (self.mesh.n_vertices, self.mesh.dim):
            raise DomainError(f"V must have shape ({self.mesh.n_vertices}, {self.mesh.dim})")
        object.__setattr__(self, "V", V)

    @cached_property
    def rate(self) -> np.ndarray:
        """Per-cell Jacobian of ``V``."""
        return vector_gradient(self.mesh, self.V.values)

    def jacobian(self, t: float) -> np.ndarray:
        return np.eye(self.mesh.dim) + t * self.rate

    def max_step(self) -> float:
        """Largest ``t_max`` with ``f_t`` orientation preserving on every cell for ``|t| < t_max``."""
        A = self.rate
        if self.mesh.dim == 1:
            a = np.abs(A[:, 0, 0])
            return float(1.0 / a.max()) if a.max() > 0 else np.inf
        # det(I + tA) = 1 + t tr A + t^2 det A
        tr, det = np.trace(A, axis1=1, axis2=2), np.linalg.det(A)
        best = np.inf
        for b, c in zip(tr, det):
            for r in np.roots([c, b, 1.0]) if abs(c) > 1e-300 else ([-1.0 / b] if b else []):
                if abs(np.imag(r)) < 1e-14:
                    best = min(best, abs(float(np.real(r))))
        return best

    def check(self, t: float):
        det = np.linalg.det(self.jacobian(t))
        bad = np.flatnonzero(det <= 0.0)
        if bad.size:
            raise DomainError(f"f_t inverts cell {int(bad[0])} at t={t}")


def _compose(mesh: Mesh, values, V, t, fn=None):
    """``values o f_t`` at the vertices.

    With a callable ``fn`` the composition is exact; vertex data is
    extended to first order along ``V`` with the recovered gradient.
    """
    x = mesh.vertices + t * np.asarray(V)
    if fn is not None:
        return np.array([float(fn(p)) for p in x])
    values = np.asarray(values, dtype=float)
    if t == 0 or not np.any(values - values[0]):
        return values.copy()
    return values + t * np.einsum("vi,vi->v", vertex_gradient(mesh, values), np.asarray(V))


def pullback_metric(mesh: Mesh, g: MetricField, V, t: float, eta=None, chart_metric=None):
    """Metric and weight of ``f_t = id + tV`` pulled back to the reference mesh.

    Parameters
    ----------
    mesh : Mesh
        Flat chart mesh.
    g : MetricField
        Metric in chart coordinates.
    V : array_like of shape (nv, d)
    t : float
    eta : array_like or callable, optional
        Weight exponent; a callable is composed exactly, vertex data to first order.
    chart_metric : callable, optional
        ``x -> (d, d)`` chart metric, re-sampled at the moved centroids.

    Returns
    -------
    (MetricField, ndarray)
        ``f_t^* g`` and ``eta o f_t`` at the vertices.
    """
    fam = DiffeoFamily(mesh, V)
    if eta is None:
        eta_t = np.zeros(mesh.n_vertices)
    elif callable(eta):
        eta_t = _compose(mesh, None, fam.V.values, t, eta)
    else:
        eta_t = _compose(mesh, eta, fam.V.values, t)
    if t == 0:
        return g, eta_t
    fam.check(t)
    J = fam.jacobian(t)
    base = g.values
    if chart_metric is not None:
        moved = mesh.cell_centroids() + t * np.column_stack(
            [cell_average(mesh, fam.V.values[:, k]) for k in range(mesh.dim)]
        )
        base = np.array([np.atleast_2d(chart_metric(x)) for x in moved])
    return MetricField(np.swapaxes(J, 1, 2) @ base @ J), eta_t


def pullback_tensor(mesh: Mesh, T: SymTensorField, V, t: float) -> SymTensorField:
    """``f_t^* T`` for a (0,2) tensor frozen in chart coordinates."""
    if t == 0:
        return T
    J = DiffeoFamily(mesh, V).jacobian(t)
    return SymTensorField(np.swapaxes(J, 1, 2) @ T.values @ J, "T")


def domain_rebuild(op: OperatorPair, V, eta_fn=None, chart_metric=None):
    """Operator of the deformed problem ``f_t(Omega)`` on the reference mesh."""
    mesh = op.mesh
    fam = op.family
    V = np.asarray(V, dtype=float)

    def rebuild(t):
        g_t, eta_t = pullback_metric(mesh, op.metric, V, t, eta_fn if eta_fn else op.eta, chart_metric)
        if fam is not None and fam.rule == "metric":
            T_t = g_t.as_tensor()
        elif fam is not None and fam.rule == "conformal":
            psi_t = _compose(mesh, fam.psi, V, t)
            T_t = TensorFamily.conformal(psi_t).evaluate(mesh, g_t)
        else:
            T_t = pullback_tensor(mesh, op.tensor, V, t)
        return assemble(mesh, g_t, T_t, eta_t, op.bc)

    return rebuild


def domain_fd_slopes(spectrum: Spectrum, cluster, V, steps=DEFAULT_STEPS, n_jobs: int = 1,
                     eta_fn=None, chart_metric=None) -> FDResult:
    """Finite-difference branch slopes over the pulled-back problems."""
    op = spectrum.operator
    t_max = DiffeoFamily(op.mesh, V).max_step()
    if max(steps) >= t_max:
        raise DomainError(f"FD step {max(steps)} exceeds the injectivity radius {t_max:.3e} of f_t")
    return fd_branch_slopes(spectrum, cluster, domain_rebuild(op, V, eta_fn, chart_metric), steps, n_jobs)


def volume_variation(op: OperatorPair, V, chart_metric=None) -> VariationSpec:
    """The domain deformation as a metric/tensor/weight variation on the fixed mesh.

    ``H = L_V g``, ``eta_dot = <grad eta, V>`` and ``T'`` from the pullback of
    the operator's tensor rule.
    """
    mesh, g = op.mesh, op.metric
    V = np.asarray(V, dtype=float)
    H = lie_derivative_metric(mesh, g, V, chart_metric)
    eta_dot = np.einsum("vi,vi->v", vertex_gradient(mesh, op.eta), V)
    fam = op.family
    if fam is not None and fam.rule == "metric":
        tp = H.values
    elif fam is not None and fam.rule == "conformal":
        psi = cell_average(mesh, fam.psi)
        dpsi = cell_average(mesh, np.einsum("vi,vi->v", vertex_gradient(mesh, fam.psi), V))
        tp = psi[:, None, None] * H.values + dpsi[:, None, None] * g.values
    else:
        TA = op.tensor.values @ vector_gradient(mesh, V)
        tp = TA + np.swapaxes(TA, 1, 2)
    return VariationSpec(H, eta_dot=eta_dot, tensor_prime=SymTensorField(tp, "Tprime"))


# ---------------------------------------------------------------------------
# boundary fields and fluxes


@dataclass(frozen=True, eq=False)
class BoundaryField:
    """Face-constant boundary data with component labels and the face measure ``dnu``."""

    values: np.ndarray
    component: np.ndarray
    measure: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise DomainError("boundary field has non-finite values")
        if not (len(v) == len(self.component) == len(self.measure)):
            raise DomainError("boundary field arrays must have one entry per face")
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        return float(np.dot(self.values, self.measure))

    def abs_integral(self) -> float:
        return float(np.dot(np.abs(self.values), self.measure))


def _face_profile(op: OperatorPair, geo: BoundaryGeometry, profile) -> np.ndarray:
    mesh = op.mesh
    nb = len(mesh.boundary_faces)
    if profile is None:
        return np.ones(nb)
    if callable(profile):
        mid = mesh.vertices[mesh.boundary_faces].mean(axis=1)
        return np.array([float(profile(x)) for x in mid])
    p = np.asarray(profile, dtype=float)
    if p.shape == (mesh.n_vertices, mesh.dim):
        _, w = _face_rule(mesh.dim)
        return geo.normal_speed(p) @ w
    if p.shape == (nb,):
        return p
    raise DomainError("profile must be per-face values, a vector field, or a callable")


def make_volume_preserving(op: OperatorPair, profile=None, mode: str = "mean",
                           components=(0, 1)) -> BoundaryField:
    """A normal speed ``v`` with ``int v dnu = 0``.

    ``mode="mean"`` subtracts the weighted mean of ``profile`` (per-face
    values, a vector field, or a callable of the face midpoint).
    ``mode="two-component"`` sets ``v = |S_b|`` on component ``a`` and
    ``v = -|S_a|`` on component ``b``, where ``(a, b) = components`` and
    ``|S|`` is the weighted measure of a component.
    """
    geo = boundary_geometry(op)
    comp = op.mesh.component_labels
    meas = geo.weight
    if mode == "mean":
        p = _face_profile(op, geo, profile)
        v = p - np.dot(p, meas) / meas.sum()
        # one correction pass absorbs the rounding left by the first subtraction
        v = v - np.dot(v, meas) / meas.sum()
    elif mode == "two-component":
        if op.mesh.n_components < 2:
            raise DomainError("two-component mode needs a boundary with at least two components")
        a, b = components
        if a == b or not (0 <= a < op.mesh.n_components and 0 <= b < op.mesh.n_components):
            raise DomainError(f"invalid component pair {components!r}")
        size_a = meas[comp == a].sum()
        size_b = meas[comp == b].sum()
        v = np.zeros(len(meas))
        v[comp == a] = size_b
        v[comp == b] = -size_a
    else:
        raise DomainError(f"unknown mode {mode!r}")
    return BoundaryField(v, comp, meas)


def boundary_flux(spectrum: Spectrum, index, method: str = "recovered") -> np.ndarray:
    """``T(grad phi, nu)`` at the face quadrature nodes, shape (nb, nq) or (nb, nq, m).

    ``"recovered"`` solves ``M_b q = K phi - lambda B phi`` on the boundary
    nodes; ``"cell"`` evaluates the adjacent cell gradient.
    """
    op = spectrum.operator
    geo = boundary_geometry(op)
    idx = np.atleast_1d(index)
    phi = spectrum.full_vectors[:, idx]
    if method == "recovered":
        lam = spectrum.eigenvalues[idx]
        r = op.K_full @ phi - (op.B_full @ phi) * lam
        bv = op.mesh.boundary_vertices
        Mb = geo.mass[bv][:, bv].tocsc()
        q = np.zeros_like(phi)
        sol = spsolve(Mb, r[bv])
        q[bv] = sol.reshape(len(bv), -1)
        out = _on_faces(op.mesh, q)
    elif method == "cell":
        mesh = op.mesh
        grads = np.einsum("caj,cam->cjm", mesh.basis_gradients, phi[mesh.cells])[geo.cells]
        flux = np.einsum("fjm,fjk,fk->fm", grads, geo.tensor_form, geo.covector) / geo.covector_norm[:, None]
        nq = len(_face_rule(mesh.dim)[0])
        out = np.repeat(flux[:, None, :], nq, axis=1)
    else:
        raise ValueError(f"unknown flux method {method!r}; expected one of {FLUX_METHODS}")
    return out[..., 0] if np.ndim(index) == 0 else out


def _normal_values(geo: BoundaryGeometry, normal) -> np.ndarray:
    nq = len(_face_rule(geo.op.mesh.dim)[0])
    if isinstance(normal, BoundaryField):
        if len(normal.values) != len(geo.cells):
            raise DomainError("boundary field does not match the mesh boundary")
        return np.repeat(normal.values[:, None], nq, axis=1)
    V = normal.values if isinstance(normal, VectorField) else normal
    return geo.normal_speed(V)


def boundary_slope_matrix(spectrum: Spectrum, cluster, normal, method: str = "recovered") -> np.ndarray:
    """Symmetric m-by-m matrix of the boundary Hadamard formula for the active BC.

    ``normal`` is a vector field (nv, d) or a :class:`BoundaryField` of normal speeds.
    """
    op = spectrum.operator
    geo = boundary_geometry(op)
    cluster = list(cluster)
    phi, lam = _cluster_basis(spectrum, cluster)
    v = _normal_values(geo, normal)
    _, w = _face_rule(op.mesh.dim)
    wq = geo.weight[:, None] * w[None, :] * v
    if op.bc == "dirichlet":
        q = boundary_flux(spectrum, cluster, method)
        S = -np.einsum("fq,fqi,fqj->ij", wq / geo.t_normal[:, None], q, q)
    else:
        pq = _on_faces(op.mesh, phi)
        if method == "recovered":
            faces = op.mesh.boundary_faces
            if op.mesh.dim == 1:
                tang = np.zeros((len(faces), len(cluster)))
            else:
                tang = (phi[faces[:, 1]] - phi[faces[:, 0]]) / geo.length[:, None]
            grad_term = np.einsum("f,fi,fj->fij", geo.t_tangential, tang, tang)
        elif method == "cell":
            mesh = op.mesh
            grads = np.einsum("caj,cam->cjm", mesh.basis_gradients, phi[mesh.cells])[geo.cells]
            grad_term = np.einsum("fai,fab,fbj->fij", grads, geo.tensor_form, grads)
        else:
            raise ValueError(f"unknown flux method {method!r}; expected one of {FLUX_METHODS}")
        S = np.einsum("fq,fij->ij", wq, grad_term) - lam * np.einsum("fq,fqi,fqj->ij", wq, pq, pq)
    return 0.5 * (S + S.T)


def boundary_slopes(spectrum: Spectrum, cluster, normal, method: str = "recovered") -> np.ndarray:
    """Predicted branch slopes of a cluster under a domain deformation, ascending."""
    return np.linalg.eigvalsh(boundary_slope_matrix(spectrum, cluster, normal, method))


def compare_domain_slopes(spectrum: Spectrum, cluster, V, steps=DEFAULT_STEPS, method: str = "recovered",
                          n_jobs: int = 1, eta_fn=None) -> SlopeReport:
    predicted = boundary_slopes(spectrum, cluster, V, method)
    fd = domain_fd_slopes(spectrum, cluster, V, steps, n_jobs, eta_fn)
    lam = float(np.mean(spectrum.eigenvalues[list(cluster)]))
    return SlopeReport(lam, predicted, fd.slopes, fd)


def conormal_residual(spectrum: Spectrum, index: int) -> float:
    """Relative size of the discrete conormal derivative on a T-Neumann boundary.

    The T-Neumann condition is natural in the weak form, so it holds only
    approximately for the computed eigenfunction; this reports
    ``||T(grad phi, nu)|| / ||T(grad phi, grad phi)^{1/2}||`` over ``dnu``
    using adjacent cell gradients.
    """
    op = spectrum.operator
    geo = boundary_geometry(op)
    q = boundary_flux(spectrum, index, "cell")[:, 0]
    mesh = op.mesh
    phi = spectrum.full_vectors[:, index]
    grads = cell_gradient(mesh, phi)[geo.cells]
    energy = np.einsum("fa,fab,fb->f", grads, geo.tensor_form, grads)
    den = np.dot(energy, geo.weight)
    if den <= 0:
        return 0.0
    return float(np.sqrt(np.dot(q**2, geo.weight) / den))


# ---------------------------------------------------------------------------
# extremal-domain diagnostic


@dataclass(frozen=True)
class ExtremalReport:
    """Constancy statistics of ``|d phi / d nu| sqrt(T(nu, nu))`` on the boundary."""

    index: int
    eigenvalue: float
    values: np.ndarray
    component: np.ndarray
    arclength: np.ndarray
    measure: np.ndarray
    mean: float
    std: float
    component_means: dict
    ratio: float
    zero_mean: bool

    def rows(self):
        return [
            (f, int(self.component[f]), self.arclength[f], self.values[f])
            for f in range(len(self.values))
        ]

    def export(self, path):
        return write_csv(path, ["face_id", "component", "s", "value"], self.rows())

    def summary(self) -> dict:
        return {
            "index": self.index,
            "eigenvalue": self.eigenvalue,
            "mean": self.mean,
            "std": self.std,
            "ratio": self.ratio,
            "component_means": {str(k): v for k, v in self.component_means.items()},
            "zero_mean": self.zero_mean,
        }


def extremal_check(spectrum: Spectrum, k: int, method: str = "recovered") -> ExtremalReport:
    """Boundary profile of ``|d phi_k / d nu| sqrt(T(nu, nu))`` for a Dirichlet eigenfunction.

    Values are taken at face midpoints; mean and standard deviation are
    weighted by ``dnu``.  A vanishing mean is flagged and gives an infinite
    ratio.
    """
    op = spectrum.operator
    if op.bc != "dirichlet":
        raise DomainError("the extremal diagnostic applies to Dirichlet spectra")
    if not 0 <= k < len(spectrum):
        raise IndexError(f"eigen index {k} outside the computed range 0..{len(spectrum) - 1}")
    geo = boundary_geometry(op)
    q = boundary_flux(spectrum, k, method)
    # the middle Gauss node is the face midpoint
    mid = q[:, 0] if op.mesh.dim == 1 else q[:, 1]
    values = np.abs(mid) / np.sqrt(geo.t_normal)
    meas = geo.weight
    total = meas.sum()
    mean = float(np.dot(values, meas) / total)
    std = float(np.sqrt(max(np.dot((values - mean) ** 2, meas) / total, 0.0)))
    comp = op.mesh.component_labels
    comp_means = {
        int(c): float(np.dot(values[comp == c], meas[comp == c]) / meas[comp == c].sum())
        for c in np.unique(comp)
    }
    scale = float(np.abs(values).max(initial=0.0))
    zero = mean <= 1e-12 * max(scale, 1e-300) or scale == 0.0
    ratio = float("inf") if zero else std / mean
    return ExtremalReport(
        int(k), float(spectrum.eigenvalues[k]), values, comp,
        boundary_arclength(op.mesh, geo.length), meas, mean, std, comp_means, ratio, bool(zero),
    )

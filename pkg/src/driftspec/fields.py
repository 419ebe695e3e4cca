"""Geometric fields on a mesh: metrics, symmetric tensors, scalars, vectors.

Metrics and (0,2)-tensors are constant per cell and expressed in the cell's
local coordinates (see :class:`driftspec.mesh.Mesh`).  Scalars and vectors
live on vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

TENSOR_ROLES = ("T", "H", "HT", "Ric", "G", "Tprime")
SCALAR_ROLES = ("eta", "eta_dot", "psi", "h", "R", "eigenfunction")


class FieldError(ValueError):
    """Raised when a field violates its invariants."""


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Per-cell symmetric (0,2)-tensor in local coordinates, shape (nc, d, d)."""

    values: np.ndarray
    role: str = "T"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise FieldError(f"tensor values must have shape (nc, d, d), got {v.shape}")
        if self.role not in TENSOR_ROLES:
            raise FieldError(f"unknown tensor role {self.role!r}")
        scale = max(1.0, float(np.abs(v).max(initial=0.0)))
        asym = np.abs(v - np.swapaxes(v, 1, 2)).max(initial=0.0)
        if asym > 1e-12 * scale:
            raise FieldError(f"{self.role} tensor is not symmetric (max asymmetry {asym:.3e})")
        object.__setattr__(self, "values", _frozen(_sym(v)))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.shape[0]

    def with_role(self, role):
        return SymTensorField(self.values, role)

    @classmethod
    def constant(cls, mesh: Mesh, matrix, role="T"):
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(np.broadcast_to(m, (mesh.n_cells,) + m.shape).copy(), role)


@dataclass(frozen=True, eq=False)
class MetricField:
    """Per-cell SPD metric in local coordinates, shape (nc, d, d)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise FieldError(f"metric values must have shape (nc, d, d), got {v.shape}")
        v = _sym(v)
        w = np.linalg.eigvalsh(v)
        bad = np.flatnonzero(w[:, 0] <= 0.0)
        if bad.size:
            raise FieldError(f"metric is not positive-definite on cell {int(bad[0])}")
        object.__setattr__(self, "values", _frozen(v))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.values)

    @property
    def density(self) -> np.ndarray:
        """Per-cell volume density sqrt(det g)."""
        return np.sqrt(np.linalg.det(self.values))

    def as_tensor(self, role="T") -> SymTensorField:
        return SymTensorField(self.values, role)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Per-vertex scalar with a role tag; psi must be strictly positive."""

    values: np.ndarray
    role: str = "eta"

    def __post_init__(self):
        v = _frozen(np.ravel(self.values))
        if self.role not in SCALAR_ROLES:
            raise FieldError(f"unknown scalar role {self.role!r}")
        if not np.all(np.isfinite(v)):
            raise FieldError(f"{self.role} has non-finite values")
        if self.role == "psi" and np.any(v <= 0):
            raise FieldError("psi must be strictly positive")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Per-vertex vector field in chart (or ambient) coordinates, shape (nv, a)."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise FieldError("vector field values must have shape (nv, a)")
        if not np.all(np.isfinite(v)):
            raise FieldError("vector field has non-finite values")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return len(self.values)


def cell_average(mesh: Mesh, vertex_values) -> np.ndarray:
    """Average per-vertex values over the vertices of each cell."""
    return np.asarray(vertex_values, dtype=float)[mesh.cells].mean(axis=1)


def cell_volumes(mesh: Mesh, g: MetricField) -> np.ndarray:
    """Riemannian cell volumes ``|cell|_local * sqrt(det g)``."""
    return mesh.chart_volumes * g.density


def weighted_volume(mesh: Mesh, g: MetricField, eta=None) -> float:
    vol = cell_volumes(mesh, g)
    if eta is not None:
        vol = vol * np.exp(-cell_average(mesh, eta))
    return float(vol.sum())


def induced_metric(mesh: Mesh, chart_metric=None) -> MetricField:
    """Metric of each cell in its local coordinates.

    Without ``chart_metric`` this is the Euclidean metric of the chart, or the
    pullback of the ambient Euclidean metric to each facet for embedded
    meshes (the identity in the orthonormal facet frame).  ``chart_metric``
    may be a callable ``x -> (d, d)`` matrix in chart components, sampled at
    cell centroids (flat charts only).
    """
    vol = mesh.chart_volumes
    bad = np.flatnonzero(vol <= 1e-14 * max(vol.max(initial=0.0), 1e-300))
    if bad.size:
        raise FieldError(f"degenerate cell {int(bad[0])} has zero volume")
    d = mesh.dim
    if chart_metric is None:
        return MetricField(np.broadcast_to(np.eye(d), (mesh.n_cells, d, d)).copy())
    if mesh.is_embedded:
        raise FieldError("chart metrics apply to flat chart meshes only")
    centroids = mesh.cell_centroids()
    return MetricField(np.array([np.atleast_2d(chart_metric(x)) for x in centroids]))


def generalized_eigvals(A, g: MetricField) -> np.ndarray:
    """Per-cell eigenvalues of the pencil (A, g), ascending, shape (nc, d)."""
    a = np.asarray(A, dtype=float)
    if a.shape != g.values.shape:
        raise FieldError("tensor and metric must live on the same cells")
    L = np.linalg.cholesky(g.values)
    Li = np.linalg.inv(L)
    return np.linalg.eigvalsh(Li @ a @ np.swapaxes(Li, 1, 2))


def ellipticity_bounds(T: SymTensorField, g: MetricField) -> tuple[float, float]:
    """Extreme generalized eigenvalues of the pencil (T, g) over all cells.

    Returns ``(alpha, beta)`` with ``alpha |Y|^2 <= T(Y, Y) <= beta |Y|^2``.
    """
    w = generalized_eigvals(T, g)
    lo, hi = w[:, 0], w[:, -1]
    if lo.min() <= 0.0:
        bad = int(np.argmin(lo))
        raise FieldError(
            f"T is not positive-definite on cell {bad} (smallest eigenvalue {lo[bad]:.3e})"
        )
    return float(lo.min()), float(hi.max())


def perturb_metric(g: MetricField, H: SymTensorField, t: float) -> MetricField:
    """Return the metric ``g + t H``; raises if positivity is lost."""
    if t == 0:
        return g
    try:
        return MetricField(g.values + t * np.asarray(H.values))
    except FieldError as exc:
        raise FieldError(f"g + tH loses positive-definiteness at t={t}: {exc}") from None


def trace_g(g: MetricField, H) -> np.ndarray:
    """Per-cell trace ``g^{ij} H_ij``."""
    return np.einsum("cij,cji->c", g.inverse, np.asarray(H))


def cell_gradient(mesh: Mesh, vertex_values) -> np.ndarray:
    """Local-coordinate differential of a P1 field on each cell, shape (nc, d)."""
    f = np.asarray(vertex_values, dtype=float)
    return np.einsum("caj,ca->cj", mesh.basis_gradients, f[mesh.cells])


def vector_gradient(mesh: Mesh, V) -> np.ndarray:
    """Per-cell Jacobian ``dV^k / dx^j`` of a P1 chart vector field, shape (nc, d, d)."""
    if mesh.is_embedded:
        raise FieldError("vector field derivatives need a flat chart mesh")
    v = np.asarray(V, dtype=float)
    return np.einsum("caj,cak->ckj", mesh.basis_gradients, v[mesh.cells])


def lie_derivative_metric(mesh: Mesh, g: MetricField, V, chart_metric=None, step=1e-6) -> SymTensorField:
    """Lie derivative of ``g`` along a P1 vector field.

    ``H_ij = g_ik dV^k/dx^j + g_jk dV^k/dx^i + V^k dg_ij/dx^k``; the last term
    (equivalently the Christoffel contribution) needs ``chart_metric`` and is
    differenced centrally at the cell centroid.
    """
    A = vector_gradient(mesh, V)
    gv = g.values
    H = np.einsum("cik,ckj->cij", gv, A)
    H = H + np.swapaxes(H, 1, 2)
    if chart_metric is not None:
        vc = np.column_stack([cell_average(mesh, np.asarray(V)[:, k]) for k in range(mesh.dim)])
        for c, x in enumerate(mesh.cell_centroids()):
            dg = sum(
                vc[c, k] * (np.atleast_2d(chart_metric(x + step * e))
                            - np.atleast_2d(chart_metric(x - step * e))) / (2 * step)
                for k, e in enumerate(np.eye(mesh.dim))
            )
            H[c] += dg
    return SymTensorField(H, "H")


# ---------------------------------------------------------------------------
# tensor families g -> T_g


@dataclass(frozen=True, eq=False)
class TensorFamily:
    """Rule producing ``T_g`` from a metric and its derivative ``dF_g(H)``.

    ``fixed``: T independent of g.  ``metric``: T_g = g.  ``conformal``:
    T_g = psi g with psi > 0 given per vertex.
    """

    rule: str = "metric"
    tensor: SymTensorField | None = None
    psi: np.ndarray | None = None

    def __post_init__(self):
        if self.rule not in ("fixed", "metric", "conformal"):
            raise FieldError(f"unknown tensor family rule {self.rule!r}")
        if self.rule == "fixed" and self.tensor is None:
            raise FieldError("fixed family needs a tensor")
        if self.rule == "conformal":
            if self.psi is None:
                raise FieldError("conformal family needs psi")
            object.__setattr__(self, "psi", ScalarField(self.psi, "psi").values)

    @classmethod
    def fixed(cls, tensor):
        if isinstance(tensor, MetricField):
            tensor = tensor.as_tensor()
        return cls("fixed", tensor=tensor)

    @classmethod
    def metric(cls):
        return cls("metric")

    @classmethod
    def conformal(cls, psi):
        return cls("conformal", psi=psi)

    def cell_psi(self, mesh: Mesh) -> np.ndarray:
        if self.rule != "conformal":
            return np.ones(mesh.n_cells)
        return cell_average(mesh, self.psi)

    def evaluate(self, mesh: Mesh, g: MetricField) -> SymTensorField:
        if self.rule == "fixed":
            return self.tensor
        if self.rule == "metric":
            return g.as_tensor("T")
        return SymTensorField(self.cell_psi(mesh)[:, None, None] * g.values, "T")

    def derivative(self, mesh: Mesh, g: MetricField, H: SymTensorField) -> SymTensorField:
        """``T' = dF_g(H)``."""
        h = np.asarray(H.values)
        if self.rule == "fixed":
            return SymTensorField(np.zeros_like(h), "Tprime")
        return SymTensorField(self.cell_psi(mesh)[:, None, None] * h, "Tprime")

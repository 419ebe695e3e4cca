"""Stiffness/mass assembly for the weighted operator and its eigen-solver.

The discrete problem is the pencil ``K x = lambda B x`` with

    K_ab = int T(grad phi_a, grad phi_b) e^{-eta} dM
    B_ab = int phi_a phi_b e^{-eta} dM

over P1 hat functions, so ``lambda >= 0`` for ``-L phi = lambda phi``.
Dirichlet conditions drop boundary DOFs; the T-Neumann condition
``T(grad phi, nu) = 0`` is natural and adds no boundary term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .fields import (
    FieldError,
    MetricField,
    SymTensorField,
    TensorFamily,
    cell_average,
    ellipticity_bounds,
)
from .io import write_csv
from .mesh import Mesh

log = logging.getLogger(__name__)

BOUNDARY_CONDITIONS = ("dirichlet", "t-neumann")
DENSE_LIMIT = 500
DEFAULT_CLUSTER_TOL = 1e-6


class SolverError(RuntimeError):
    """Eigen-solver failure; carries the residual that was achieved."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def normalize_bc(bc: str) -> str:
    key = bc.lower().replace("_", "-")
    if key == "neumann":
        key = "t-neumann"
    if key not in BOUNDARY_CONDITIONS:
        raise ValueError(f"unknown boundary condition {bc!r}")
    return key


@dataclass(frozen=True, eq=False)
class OperatorPair:
    """Assembled stiffness/mass pair together with the data that produced it."""

    mesh: Mesh
    metric: MetricField
    tensor: SymTensorField
    eta: np.ndarray
    bc: str
    K_full: sp.csr_matrix
    B_full: sp.csr_matrix
    free: np.ndarray
    family: TensorFamily | None = None

    @cached_property
    def K(self) -> sp.csr_matrix:
        return self.K_full[self.free][:, self.free].tocsr()

    @cached_property
    def B(self) -> sp.csr_matrix:
        return self.B_full[self.free][:, self.free].tocsr()

    @property
    def n_free(self) -> int:
        return len(self.free)

    @cached_property
    def cell_weights(self) -> np.ndarray:
        """Per-cell ``e^{-eta} dM`` volumes."""
        return local_weights(self.mesh, self.metric, self.eta)

    def extend(self, x) -> np.ndarray:
        """Embed free-DOF vectors into full vertex vectors (zero on Dirichlet nodes)."""
        x = np.asarray(x)
        out = np.zeros((self.mesh.n_vertices,) + x.shape[1:])
        out[self.free] = x
        return out


def local_weights(mesh: Mesh, g: MetricField, eta) -> np.ndarray:
    return mesh.chart_volumes * g.density * np.exp(-cell_average(mesh, eta))


def sandwich(g: MetricField, A) -> np.ndarray:
    """``g^{-1} A g^{-1}``: the bilinear form of ``A`` acting on differentials."""
    gi = g.inverse
    return gi @ np.asarray(A) @ gi


def _scatter(mesh: Mesh, local) -> sp.csr_matrix:
    cells = mesh.cells
    n = mesh.n_vertices
    rows = np.repeat(cells, cells.shape[1], axis=1).ravel()
    cols = np.tile(cells, (1, cells.shape[1])).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_local(mesh: Mesh, form, weights) -> np.ndarray:
    """Per-cell ``w * G form G^T`` for a per-cell bilinear form on differentials."""
    G = mesh.basis_gradients
    return weights[:, None, None] * np.einsum("cai,cij,cbj->cab", G, form, G)


def mass_local(mesh: Mesh, weights) -> np.ndarray:
    d = mesh.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    return weights[:, None, None] * ref


def stiffness_matrix(mesh: Mesh, form, weights) -> sp.csr_matrix:
    return _scatter(mesh, stiffness_local(mesh, form, weights))


def mass_matrix(mesh: Mesh, weights) -> sp.csr_matrix:
    return _scatter(mesh, mass_local(mesh, weights))


def assemble(mesh: Mesh, g: MetricField, T, eta=None, bc: str = "dirichlet") -> OperatorPair:
    """Assemble the weighted stiffness/mass pair.

    Parameters
    ----------
    mesh : Mesh
    g : MetricField
    T : SymTensorField or TensorFamily
        Diffusion tensor, or a family rule evaluated at ``g``.
    eta : array_like of shape (nv,), optional
        Weight exponent; the measure is ``e^{-eta} dM``.
    bc : {"dirichlet", "t-neumann"}
    """
    bc = normalize_bc(bc)
    family = None
    if isinstance(T, TensorFamily):
        family = T
        T = family.evaluate(mesh, g)
    ellipticity_bounds(T, g)
    eta = np.zeros(mesh.n_vertices) if eta is None else np.asarray(eta, dtype=float).ravel()
    if eta.shape != (mesh.n_vertices,):
        raise FieldError("eta must have one value per vertex")
    if not np.all(np.isfinite(eta)):
        raise FieldError("eta has non-finite values")
    w = local_weights(mesh, g, eta)
    K = stiffness_matrix(mesh, sandwich(g, T.values), w)
    B = mass_matrix(mesh, w)
    if bc == "dirichlet":
        free = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices)
    else:
        free = np.arange(mesh.n_vertices)
    if free.size == 0:
        raise FieldError("no free degrees of freedom remain")
    return OperatorPair(mesh, g, T, eta, bc, K, B, free, family)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Mass-orthonormal eigenpairs of an :class:`OperatorPair`."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    operator: OperatorPair
    residuals: np.ndarray
    orthonormality_residual: float

    @property
    def bc(self) -> str:
        return self.operator.bc

    def __len__(self):
        return len(self.eigenvalues)

    @cached_property
    def full_vectors(self) -> np.ndarray:
        """Eigenvectors on all vertices, shape (nv, k)."""
        return self.operator.extend(self.vectors)

    def rayleigh_quotients(self) -> np.ndarray:
        K, B, X = self.operator.K, self.operator.B, self.vectors
        return np.einsum("ik,ik->k", X, K @ X) / np.einsum("ik,ik->k", X, B @ X)


def _residuals(K, B, lam, X):
    KX, BX = K @ X, B @ X
    num = np.linalg.norm(KX - BX * lam, axis=0)
    # the largest computed eigenvalue sets the scale, so zero modes stay well-defined
    scale = np.abs(lam) + np.abs(lam).max(initial=0.0)
    den = np.linalg.norm(KX, axis=0) + scale * np.linalg.norm(BX, axis=0)
    return num / np.where(den > 0, den, 1.0)


def _shift(K, B) -> float:
    ratio = K.diagonal() / B.diagonal()
    return -1e-6 * float(np.median(np.abs(ratio)))


def solve_eigen(op: OperatorPair, k: int, method: str = "auto", tol: float = 1e-8) -> Spectrum:
    """The ``k`` smallest eigenpairs of ``K x = lambda B x``.

    Dense LAPACK up to :data:`DENSE_LIMIT` free DOFs, shift-invert Lanczos
    above.  Either way a final Rayleigh-Ritz step restores B-orthonormality.
    """
    n = op.n_free
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    K, B = op.K, op.B
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT or 3 * k >= n else "sparse"
    if method == "dense":
        lam, X = scipy.linalg.eigh(K.toarray(), B.toarray(), subset_by_index=[0, k - 1])
    elif method == "sparse":
        if k >= n - 1:
            raise ValueError("sparse solver needs k < n - 1; use method='dense'")
        # guard pairs keep Lanczos from skipping copies of a multiple eigenvalue
        kk = min(n - 2, k + max(6, k // 2))
        ncv = min(n, max(2 * kk + 1, kk + 20))
        # a fixed generic start vector: constants are eigenvectors of closed problems
        v0 = np.random.default_rng(0).standard_normal(n)
        try:
            _, X = eigsh(K, k=kk, M=B, sigma=_shift(K, B), which="LM", v0=v0, ncv=ncv, tol=1e-13)
        except ArpackNoConvergence as exc:
            X = exc.eigenvectors
            res = _residuals(K, B, exc.eigenvalues, X) if X.size else None
            raise SolverError(
                f"shift-invert Lanczos did not converge ({len(exc.eigenvalues)} of {k} pairs)",
                residual=None if res is None else float(res.max()),
            ) from None
    else:
        raise ValueError(f"unknown method {method!r}")
    # Rayleigh-Ritz on the computed subspace
    kr = X.T @ (K @ X)
    br = X.T @ (B @ X)
    lam, Y = scipy.linalg.eigh(0.5 * (kr + kr.T), 0.5 * (br + br.T))
    lam, X = lam[:k], X @ Y[:, :k]
    X = X / np.sqrt(np.einsum("ik,ik->k", X, B @ X))
    # fix signs so that the largest-magnitude entry is positive
    piv = np.argmax(np.abs(X), axis=0)
    X = X * np.sign(X[piv, np.arange(k)])
    res = _residuals(K, B, lam, X)
    gram = X.T @ (B @ X)
    ortho = float(np.abs(gram - np.eye(k)).max())
    if res.max() > tol:
        raise SolverError(f"eigen residual {res.max():.3e} exceeds {tol:.1e}", residual=float(res.max()))
    log.debug("solved %d pairs with %s solver, max residual %.2e", k, method, res.max())
    return Spectrum(lam, X, op, res, ortho)


def group_multiplets(spectrum, rel_tol: float | None = None) -> list[list[int]]:
    """Maximal runs of consecutive eigenvalues with gaps ``< rel_tol (1 + lambda)``.

    >>> group_multiplets([2.0, 5.0, 5.0, 8.0])
    [[0], [1, 2], [3]]
    """
    lam = np.asarray(getattr(spectrum, "eigenvalues", spectrum), dtype=float)
    rel_tol = DEFAULT_CLUSTER_TOL if rel_tol is None else rel_tol
    if lam.size == 0:
        return []
    if np.any(np.diff(lam) < -1e-12 * (1 + np.abs(lam[:-1]))):
        raise ValueError("spectrum must be sorted")
    clusters = [[0]]
    for i in range(1, lam.size):
        if lam[i] - lam[i - 1] < rel_tol * (1.0 + abs(lam[i - 1])):
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


def cluster_containing(spectrum, index: int, rel_tol: float | None = None) -> list[int]:
    for c in group_multiplets(spectrum, rel_tol):
        if index in c:
            return c
    raise IndexError(f"eigen index {index} is outside the computed spectrum")


def spectrum_rows(spectrum: Spectrum, rel_tol: float | None = None):
    cid = np.empty(len(spectrum), dtype=int)
    for j, c in enumerate(group_multiplets(spectrum, rel_tol)):
        cid[c] = j
    return [
        (i, spectrum.eigenvalues[i], cid[i], spectrum.residuals[i]) for i in range(len(spectrum))
    ]


def export_spectrum(spectrum: Spectrum, path, rel_tol: float | None = None):
    """CSV with columns index, lambda, cluster_id, residual."""
    return write_csv(path, ["index", "lambda", "cluster_id", "residual"], spectrum_rows(spectrum, rel_tol))


def analytic_spectrum(kind: str, k: int, bc: str = "dirichlet", **size) -> np.ndarray:
    """Exact eigenvalues of the flat Laplacian on canonical domains (test oracle)."""
    bc = normalize_bc(bc)
    if kind == "interval":
        L = size.get("length", math.pi)
        start = 1 if bc == "dirichlet" else 0
        return np.array([(j * math.pi / L) ** 2 for j in range(start, start + k)])
    if kind in ("rectangle", "square"):
        a, b = size.get("width", math.pi), size.get("height", math.pi)
        start = 1 if bc == "dirichlet" else 0
        m = int(math.sqrt(k)) + 4
        vals = sorted(
            (i * math.pi / a) ** 2 + (j * math.pi / b) ** 2
            for i in range(start, start + 4 * m)
            for j in range(start, start + 4 * m)
        )
        return np.array(vals[:k])
    if kind in ("flat-torus", "torus"):
        L = size.get("side", 2 * math.pi)
        m = int(math.sqrt(k)) + 4
        vals = sorted(
            (2 * math.pi / L) ** 2 * (i * i + j * j)
            for i in range(-2 * m, 2 * m + 1)
            for j in range(-2 * m, 2 * m + 1)
        )
        return np.array(vals[:k])
    if kind in ("sphere", "icosphere"):
        vals = []
        l = 0
        while len(vals) < k:
            vals += [l * (l + 1.0)] * (2 * l + 1)
            l += 1
        return np.array(vals[:k])
    raise ValueError(f"no analytic spectrum for {kind!r}")

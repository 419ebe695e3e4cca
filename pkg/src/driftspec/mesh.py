"""Simplicial meshes for canonical manifolds and domains.

Every cell carries a local affine frame: chart coordinates for flat meshes
(interval, rectangle, disk, annulus, flat torus) and an orthonormal facet
frame for embedded surfaces (icosphere).  Metrics and tensors are stored in
these per-cell local coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

TOPOLOGIES = ("interval", "rectangle", "disk", "annulus", "flat-torus", "sphere-embedded")

_MIN_CELLS_PER_SIDE = 4


class MeshError(ValueError):
    """Raised for invalid mesh requests or inconsistent mesh data."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh of dimension 1 or 2.

    Parameters
    ----------
    vertices : ndarray of shape (nv, a)
        Chart coordinates (``a == dim``) or embedding coordinates (``a == 3``).
    cells : ndarray of shape (nc, dim + 1)
        Vertex indices of each simplex, positively oriented in its local frame.
    boundary_faces : ndarray of shape (nb, dim)
        Boundary faces.  In 2D each edge ``(a, b)`` is oriented with the
        domain on its left, so the outward normal points to the right.
    component_labels : ndarray of shape (nb,)
        Connected boundary component of each face.
    topology : str
        One of :data:`TOPOLOGIES`.
    period : ndarray of shape (dim,) or None
        Periods of a flat torus chart; edge vectors use the minimum image.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_faces: np.ndarray
    component_labels: np.ndarray
    topology: str
    period: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float))
        object.__setattr__(self, "cells", _frozen(self.cells, np.int64))
        object.__setattr__(self, "boundary_faces", _frozen(self.boundary_faces, np.int64))
        object.__setattr__(self, "component_labels", _frozen(self.component_labels, np.int64))
        if self.period is not None:
            object.__setattr__(self, "period", _frozen(self.period, float))
        if self.topology not in TOPOLOGIES:
            raise MeshError(f"unknown topology tag {self.topology!r}")
        if self.dim not in (1, 2):
            raise MeshError("only 1D and 2D simplicial meshes are supported")
        if self.boundary_faces.shape[0] and self.boundary_faces.shape[1] != self.dim:
            raise MeshError("boundary faces must have dim vertices each")
        if len(self.component_labels) != len(self.boundary_faces):
            raise MeshError("one component label per boundary face is required")
        det = np.linalg.det(self.frame_jacobians)
        bad = np.flatnonzero(det <= 0.0)
        if bad.size:
            raise MeshError(f"cell {int(bad[0])} has non-positive oriented volume")

    @classmethod
    def from_cells(cls, vertices, cells, topology, period=None):
        """Build a mesh and derive its oriented boundary from the cells."""
        cells = np.asarray(cells, dtype=np.int64)
        faces, labels = _extract_boundary(cells, len(vertices))
        return cls(vertices, cells, faces, labels, topology, period)

    @property
    def dim(self) -> int:
        return self.cells.shape[1] - 1

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def is_embedded(self) -> bool:
        return self.vertices.shape[1] > self.dim

    @property
    def n_components(self) -> int:
        return int(self.component_labels.max()) + 1 if len(self.component_labels) else 0

    @cached_property
    def edge_vectors(self) -> np.ndarray:
        """Ambient edge vectors ``v_i - v_0`` of each cell, shape (nc, a, dim)."""
        x = self.vertices[self.cells]
        e = x[:, 1:, :] - x[:, :1, :]
        if self.period is not None:
            e = e - self.period * np.round(e / self.period)
        return np.transpose(e, (0, 2, 1))

    @cached_property
    def frames(self) -> np.ndarray:
        """Ambient basis of each cell's local coordinates, shape (nc, a, dim)."""
        e = self.edge_vectors
        if not self.is_embedded:
            eye = np.eye(self.dim)
            return np.broadcast_to(eye, (self.n_cells, self.dim, self.dim)).copy()
        q, r = np.linalg.qr(e)
        # QR may flip signs; keep the frame aligned with the first two edges
        s = np.sign(np.diagonal(r, axis1=1, axis2=2))
        s[s == 0] = 1.0
        return q * s[:, None, :]

    @cached_property
    def frame_jacobians(self) -> np.ndarray:
        """Matrices mapping reference-simplex coordinates to local ones, (nc, dim, dim)."""
        if not self.is_embedded:
            return self.edge_vectors
        return np.einsum("cai,caj->cij", self.frames, self.edge_vectors)

    @cached_property
    def chart_volumes(self) -> np.ndarray:
        """Cell volumes in local coordinates (Euclidean in the chart or facet frame)."""
        return np.abs(np.linalg.det(self.frame_jacobians)) / math.factorial(self.dim)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Local-coordinate differentials of the P1 hat functions, shape (nc, dim + 1, dim)."""
        ref = np.vstack([-np.ones((1, self.dim)), np.eye(self.dim)])
        inv = np.linalg.inv(self.frame_jacobians)
        return np.einsum("ak,ckj->caj", ref, inv)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_faces.ravel())

    @cached_property
    def face_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Adjacent cell and the local index of its vertex opposite each boundary face."""
        lookup = {}
        for c, cell in enumerate(self.cells):
            for k in range(self.dim + 1):
                key = tuple(sorted(np.delete(cell, k)))
                lookup.setdefault(key, []).append((c, k))
        cells = np.empty(len(self.boundary_faces), dtype=np.int64)
        opposite = np.empty(len(self.boundary_faces), dtype=np.int64)
        for f, face in enumerate(self.boundary_faces):
            (c, k), = lookup[tuple(sorted(face))]
            cells[f], opposite[f] = c, k
        return cells, opposite

    def cell_centroids(self) -> np.ndarray:
        """Ambient centroids; for periodic meshes the result is wrapped into the period box."""
        x = self.vertices[self.cells[:, 0]]
        c = x + self.edge_vectors.sum(axis=2) / (self.dim + 1)
        if self.period is not None:
            c = np.mod(c, self.period)
        return c


def _extract_boundary(cells, n_vertices):
    dim = cells.shape[1] - 1
    if dim == 1:
        counts = np.bincount(cells.ravel(), minlength=n_vertices)
        ends = np.flatnonzero(counts == 1)
        faces = ends[:, None]
        return faces, np.arange(len(ends))
    # oriented edges (v0,v1), (v1,v2), (v2,v0) keep the cell on their left
    edges = np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    faces = edges[counts[inverse.ravel()] == 1]
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    faces = faces[np.lexsort((faces[:, 1], faces[:, 0]))]
    graph = coo_matrix(
        (np.ones(len(faces)), (faces[:, 0], faces[:, 1])), shape=(n_vertices, n_vertices)
    )
    _, comp = connected_components(graph, directed=False)
    # relabel components in order of first appearance for determinism
    raw = comp[faces[:, 0]]
    order = {}
    for r in raw:
        order.setdefault(int(r), len(order))
    return faces, np.array([order[int(r)] for r in raw], dtype=np.int64)


# ---------------------------------------------------------------------------
# canonical constructions


def interval_mesh(length=math.pi, n=200):
    if n < _MIN_CELLS_PER_SIDE:
        raise MeshError(f"resolution must be at least {_MIN_CELLS_PER_SIDE} cells, got {n}")
    if length <= 0:
        raise MeshError("interval length must be positive")
    x = np.linspace(0.0, length, n + 1)[:, None]
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x, cells, np.array([[0], [n]]), np.array([0, 1]), "interval")


def _union_jack(nx, ny, periodic=False):
    """Triangles of an nx-by-ny grid with alternating diagonals."""
    def vid(i, j):
        if periodic:
            return (j % ny) * nx + (i % nx)
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return np.array(tris, dtype=np.int64)


def rectangle_mesh(width=math.pi, height=math.pi, nx=32, ny=None):
    ny = nx if ny is None else ny
    if min(nx, ny) < _MIN_CELLS_PER_SIDE:
        raise MeshError(f"resolution must be at least {_MIN_CELLS_PER_SIDE} cells per side")
    if width <= 0 or height <= 0:
        raise MeshError("rectangle sides must be positive")
    xs, ys = np.meshgrid(np.linspace(0, width, nx + 1), np.linspace(0, height, ny + 1))
    vertices = np.column_stack([xs.ravel(), ys.ravel()])
    return Mesh.from_cells(vertices, _union_jack(nx, ny), "rectangle")


def torus_mesh(side=2 * math.pi, n=64):
    if n < _MIN_CELLS_PER_SIDE:
        raise MeshError(f"resolution must be at least {_MIN_CELLS_PER_SIDE} cells per side")
    if side <= 0:
        raise MeshError("torus side must be positive")
    h = side / n
    xs, ys = np.meshgrid(np.arange(n) * h, np.arange(n) * h)
    vertices = np.column_stack([xs.ravel(), ys.ravel()])
    cells = _union_jack(n, n, periodic=True)
    return Mesh(
        vertices, cells, np.zeros((0, 2)), np.zeros(0), "flat-torus", period=[side, side]
    )


def _zip_rings(inner, outer):
    """Triangulate the band between two closed rings by merging on angle.

    Angles are compared as exact fractions of a turn so that ties at sector
    boundaries resolve identically in every sector.
    """
    m, n = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < m or j < n:
        # next outer angle (j+1)/n <= next inner angle (i+1)/m
        if j < n and (i == m or (j + 1) * m <= (i + 1) * n):
            tris.append((inner[i % m], outer[j % n], outer[(j + 1) % n]))
            j += 1
        else:
            tris.append((inner[i % m], outer[j % n], inner[(i + 1) % m]))
            i += 1
    return tris


def disk_mesh(radius=1.0, n=16):
    """Unit-disk style mesh with ``n`` rings; ring k carries 6k vertices."""
    if n < _MIN_CELLS_PER_SIDE:
        raise MeshError(f"resolution must be at least {_MIN_CELLS_PER_SIDE} rings")
    if radius <= 0:
        raise MeshError("disk radius must be positive")
    vertices = [(0.0, 0.0)]
    rings = [[0]]
    for k in range(1, n + 1):
        th = 2 * np.pi * np.arange(6 * k) / (6 * k)
        r = radius * k / n
        start = len(vertices)
        vertices += list(zip(r * np.cos(th), r * np.sin(th)))
        rings.append(list(range(start, start + 6 * k)))
    tris = [(0, rings[1][j], rings[1][(j + 1) % 6]) for j in range(6)]
    for k in range(2, n + 1):
        tris += _zip_rings(rings[k - 1], rings[k])
    return Mesh.from_cells(np.array(vertices), _orient(np.array(vertices), tris), "disk")


def annulus_mesh(inner=1.0, outer=2.0, n=8, n_theta=None):
    """Annulus with ``n`` radial layers and ``n_theta`` angular cells."""
    n_theta = int(round(2 * np.pi * (inner + outer) / 2 / ((outer - inner) / n))) if n_theta is None else n_theta
    if n < _MIN_CELLS_PER_SIDE or n_theta < _MIN_CELLS_PER_SIDE:
        raise MeshError(f"resolution must be at least {_MIN_CELLS_PER_SIDE} cells per side")
    if not 0 < inner < outer:
        raise MeshError("annulus radii must satisfy 0 < inner < outer")
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    radii = np.linspace(inner, outer, n + 1)
    vertices = np.array([(r * np.cos(t), r * np.sin(t)) for r in radii for t in th])
    tris = []
    for i in range(n):
        for j in range(n_theta):
            a = i * n_theta + j
            b = i * n_theta + (j + 1) % n_theta
            c, d = a + n_theta, b + n_theta
            if (i + j) % 2 == 0:
                tris += [(a, b, d), (a, d, c)]
            else:
                tris += [(a, b, c), (b, d, c)]
    return Mesh.from_cells(vertices, _orient(vertices, tris), "annulus")


def _orient(vertices, tris):
    tris = np.array(tris, dtype=np.int64)
    x = vertices[tris]
    e1, e2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
    flip = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def icosphere_mesh(subdivisions=3):
    """Icosphere with vertices on the unit sphere and outward-oriented facets."""
    if subdivisions < 0:
        raise MeshError("subdivision level must be non-negative")
    p = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
        (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
        (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    x = np.array(verts)
    f = np.array(faces, dtype=np.int64)
    normal = np.cross(x[f[:, 1]] - x[f[:, 0]], x[f[:, 2]] - x[f[:, 0]])
    flip = np.einsum("ij,ij->i", normal, x[f].mean(axis=1)) < 0
    f[flip] = f[flip][:, [0, 2, 1]]
    return Mesh(x, f, np.zeros((0, 2)), np.zeros(0), "sphere-embedded")


_BUILDERS = {
    "interval": (interval_mesh, {"length", "n"}),
    "rectangle": (rectangle_mesh, {"width", "height", "nx", "ny"}),
    "square": (rectangle_mesh, {"width", "height", "nx", "ny"}),
    "disk": (disk_mesh, {"radius", "n"}),
    "annulus": (annulus_mesh, {"inner", "outer", "n", "n_theta"}),
    "flat-torus": (torus_mesh, {"side", "n"}),
    "torus": (torus_mesh, {"side", "n"}),
    "sphere": (icosphere_mesh, {"subdivisions"}),
    "icosphere": (icosphere_mesh, {"subdivisions"}),
}


def build_canonical(kind, **params):
    """Build a canonical mesh by name.

    >>> build_canonical("interval", length=3.0, n=10).n_cells
    10
    """
    if kind in ("ball", "sphere-3", "tetrahedral") or params.get("dim") == 3:
        raise MeshError("3D meshes are not supported; 3D cases use the analytic flow path")
    params.pop("dim", None)
    try:
        builder, allowed = _BUILDERS[kind]
    except KeyError:
        raise MeshError(f"unknown domain kind {kind!r}") from None
    unknown = set(params) - allowed
    if unknown:
        raise MeshError(f"unknown parameters for {kind}: {sorted(unknown)}")
    return builder(**params)


# ---------------------------------------------------------------------------
# plain-text mesh files


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``dim nv nc nb`` header, vertices, cells, then labelled boundary faces."""
    lines = [f"# topology {mesh.topology}"]
    if mesh.period is not None:
        lines.append("# period " + " ".join(repr(float(p)) for p in mesh.period))
    lines.append(f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {len(mesh.boundary_faces)}")
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines += [
        " ".join(str(int(i)) for i in f) + f" {int(lab)}"
        for f, lab in zip(mesh.boundary_faces, mesh.component_labels)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    topology, period = None, None
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            words = line[1:].split()
            if words[:1] == ["topology"]:
                topology = words[1]
            elif words[:1] == ["period"]:
                period = [float(w) for w in words[1:]]
            continue
        rows.append(line.split())
    if not rows or len(rows[0]) != 4:
        raise MeshError(f"{path}: header must read 'dim nv nc nb'")
    dim, nv, nc, nb = (int(w) for w in rows[0])
    body = rows[1:]
    if len(body) != nv + nc + nb:
        raise MeshError(f"{path}: expected {nv + nc + nb} data lines, found {len(body)}")
    vertices = np.array(body[:nv], dtype=float)
    cells = np.array(body[nv:nv + nc], dtype=np.int64).reshape(nc, dim + 1)
    bfaces = np.array(body[nv + nc:], dtype=np.int64).reshape(nb, dim + 1)
    if topology is None:
        topology = "interval" if dim == 1 else "rectangle"
    return Mesh(vertices, cells, bfaces[:, :dim], bfaces[:, dim], topology, period)

"""Generic splitting of multiple eigenvalues.

Two ingredients: a classifier for the sign of ``G = (n - 4) T_g + 2 dF_g(g)``
of a tensor family, and Monte-Carlo experiments that draw random smooth
metric or domain perturbations and record whether the predicted branch
slopes of a cluster separate at first order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import Spectrum
from .domain import boundary_slopes
from .fields import MetricField, SymTensorField, TensorFamily, generalized_eigvals
from .io import write_csv
from .mesh import Mesh
from .variation import VariationSpec, hadamard_slopes

log = logging.getLogger(__name__)

CLASSES = ("positive", "negative", "identically-zero", "indefinite")
MODES = ("metric", "domain")


@dataclass(frozen=True, eq=False)
class PropertyPReport:
    """Sign classification of ``G`` against ``g``; ``witness`` is a cell breaking definiteness."""

    G: SymTensorField
    classification: str
    witness: int | None = None
    extremes: tuple[float, float] = (0.0, 0.0)

    @property
    def satisfied(self) -> bool:
        return self.classification != "indefinite"


def property_p_tensor(family: TensorFamily, mesh: Mesh, g: MetricField, n: int | None = None,
                      zero_tol: float = 1e-13) -> PropertyPReport:
    """Compute ``G = (n - 4) T_g + 2 dF_g(g)`` per cell and classify its sign.

    Parameters
    ----------
    family : TensorFamily
    mesh : Mesh
    g : MetricField
    n : int, optional
        Manifold dimension entering the coefficient ``n - 4``; defaults to
        the mesh dimension.
    zero_tol : float
        Generalized eigenvalues below ``zero_tol`` times the size of ``T`` count as zero.
    """
    n = mesh.dim if n is None else int(n)
    T = family.evaluate(mesh, g)
    dF = family.derivative(mesh, g, g.as_tensor("H"))
    G = SymTensorField((n - 4) * T.values + 2.0 * dF.values, "G")
    w = generalized_eigvals(G.values, g)
    scale = float(np.abs(generalized_eigvals(T.values, g)).max())
    lo, hi = float(w.min()), float(w.max())
    eps = zero_tol * scale
    if max(abs(lo), abs(hi)) <= eps:
        return PropertyPReport(G, "identically-zero", None, (lo, hi))
    if lo > eps:
        return PropertyPReport(G, "positive", None, (lo, hi))
    if hi < -eps:
        return PropertyPReport(G, "negative", None, (lo, hi))
    # mixed signs or a degenerate direction: report the first offending cell
    if hi > eps:
        witness = int(np.flatnonzero(w[:, 0] <= eps)[0])
    else:
        witness = int(np.flatnonzero(w[:, -1] >= -eps)[0])
    return PropertyPReport(G, "indefinite", witness, (lo, hi))


# ---------------------------------------------------------------------------
# random smooth perturbations


def _trig_series(points, rng, n_modes=3, decay=2.0):
    """Random ``sum_k c_k cos(k.x + p_k)`` with integer wave vectors and ``|c_k| ~ (1+|k|)^-decay``."""
    points = np.asarray(points, dtype=float)
    dim = points.shape[1]
    grid = np.stack(np.meshgrid(*[np.arange(-n_modes, n_modes + 1)] * dim, indexing="ij"), -1).reshape(-1, dim)
    coef = rng.standard_normal(len(grid)) / (1.0 + np.linalg.norm(grid, axis=1)) ** decay
    phase = rng.uniform(0.0, 2.0 * np.pi, len(grid))
    return np.cos(points @ grid.T + phase) @ coef


def random_metric_perturbation(mesh: Mesh, g: MetricField, rng, n_modes=3, size=0.5) -> SymTensorField:
    """Random conformal-plus-shear ``H`` with ``|H| <= size`` relative to ``g``.

    The conformal factor and the traceless shear components are independent
    trigonometric series sampled at cell centroids.
    """
    x = mesh.cell_centroids()
    d = mesh.dim
    conf = _trig_series(x, rng, n_modes)
    H = conf[:, None, None] * g.values
    for i in range(d):
        for j in range(i, d):
            if i == j == d - 1:
                continue
            s = _trig_series(x, rng, n_modes)
            E = np.zeros((d, d))
            if i == j:
                E[i, i], E[d - 1, d - 1] = 1.0, -1.0
            else:
                E[i, j] = E[j, i] = 1.0
            H = H + s[:, None, None] * E
    w = np.abs(generalized_eigvals(H, g)).max()
    if w > 0:
        H = H * (size / w)
    return SymTensorField(H, "H")


def random_domain_field(mesh: Mesh, rng, n_modes=3, size=0.1) -> np.ndarray:
    """Random smooth chart vector field at the vertices, ``max |V| = size``.

    Only its trace on the boundary enters the boundary formulas.
    """
    x = mesh.vertices
    V = np.column_stack([_trig_series(x, rng, n_modes) for _ in range(mesh.dim)])
    peak = np.linalg.norm(V, axis=1).max()
    return V * (size / peak) if peak > 0 else V


# ---------------------------------------------------------------------------
# experiments


def slope_gap(slopes) -> float:
    """Smallest gap between consecutive sorted slopes."""
    s = np.sort(np.asarray(slopes, dtype=float))
    return float(np.diff(s).min()) if len(s) > 1 else float("inf")


def split_threshold(eigenvalue: float) -> float:
    return 1e-6 * (1.0 + abs(eigenvalue))


def cluster_slopes(spectrum: Spectrum, cluster, mode: str, perturbation) -> np.ndarray:
    """Predicted branch slopes of one perturbation (``H`` in metric mode, ``V`` in domain mode)."""
    op = spectrum.operator
    if mode == "metric":
        fam = op.family if op.family is not None else TensorFamily.fixed(op.tensor)
        return hadamard_slopes(spectrum, cluster, VariationSpec(perturbation, family=fam))
    if mode == "domain":
        return boundary_slopes(spectrum, cluster, perturbation)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class SplittingStats:
    """Per-trial slope gaps of a cluster and the fraction that split at first order."""

    mode: str
    eigenvalue: float
    multiplicity: int
    seed: int
    threshold: float
    gaps: np.ndarray
    distinct: np.ndarray
    near_cluster: bool = False
    classification: str | None = None
    slopes: list = field(default_factory=list)

    @property
    def trials(self) -> int:
        return len(self.gaps)

    @property
    def split(self) -> np.ndarray:
        return self.gaps > self.threshold

    @property
    def fraction(self) -> float | None:
        if self.trials == 0:
            return None
        return float(np.mean(self.split))

    @property
    def outside_hypotheses(self) -> bool:
        return self.classification == "indefinite"

    def rows(self):
        return [(i, self.gaps[i], bool(self.split[i])) for i in range(self.trials)]

    def export(self, path):
        return write_csv(path, ["trial", "gap", "split_bool"], self.rows())

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "eigenvalue": self.eigenvalue,
            "multiplicity": self.multiplicity,
            "trials": self.trials,
            "seed": self.seed,
            "threshold": self.threshold,
            "fraction": self.fraction,
            "min_distinct": int(self.distinct.min()) if self.trials else None,
            "near_cluster": self.near_cluster,
            "property_p": self.classification,
            "outside_hypotheses": self.outside_hypotheses,
        }


def splitting_experiment(spectrum: Spectrum, cluster, mode: str = "metric", trials: int = 20,
                         seed: int = 0, n_modes: int = 3, n_jobs: int = 1) -> SplittingStats:
    """Draw ``trials`` random perturbations and record the first-order slope gaps.

    Each trial uses its own generator spawned from ``seed``, so results do
    not depend on ``n_jobs``.
    """
    cluster = list(cluster)
    if len(cluster) < 2:
        raise ValueError("splitting experiments need a cluster of multiplicity at least 2")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if trials < 0:
        raise ValueError("trials must be non-negative")
    op = spectrum.operator
    lams = spectrum.eigenvalues[cluster]
    lam = float(np.mean(lams))
    threshold = split_threshold(lam)
    spread = float(lams.max() - lams.min())
    near = spread > 1e-8 * (1.0 + abs(lam))
    if near:
        log.warning("cluster at %.6g has spread %.2e: it is a near-cluster of simple eigenvalues", lam, spread)
    classification = None
    if mode == "metric":
        fam = op.family if op.family is not None else TensorFamily.fixed(op.tensor)
        classification = property_p_tensor(fam, op.mesh, op.metric).classification
    children = np.random.SeedSequence(seed).spawn(trials)

    def run(child):
        rng = np.random.default_rng(child)
        if mode == "metric":
            pert = random_metric_perturbation(op.mesh, op.metric, rng, n_modes)
        else:
            pert = random_domain_field(op.mesh, rng, n_modes)
        return cluster_slopes(spectrum, cluster, mode, pert)

    if n_jobs > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            slopes = list(pool.map(run, children))
    else:
        slopes = [run(c) for c in children]
    gaps = np.array([slope_gap(s) for s in slopes])
    distinct = np.array([1 + int(np.sum(np.diff(np.sort(s)) > threshold)) for s in slopes], dtype=int)
    return SplittingStats(mode, lam, len(cluster), int(seed), threshold, gaps, distinct, near,
                          classification, [np.asarray(s) for s in slopes])

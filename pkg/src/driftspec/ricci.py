"""Eigenvalues along Ricci flow on homogeneous manifolds.

Round spheres and flat tori stay homogeneous under ``dg/dt = -2 Ric``, so the
flow is the scale law ``g(t) = s(t) g_unit``: ``s(t) = r^2 - 2(n - 1) t`` on a
sphere of initial radius ``r`` and ``s = 1`` on a flat torus.  With the
families ``T = psi g`` the evolution

    lambda' = int R (lambda u^2 - T(du, du)) dm
              + int [4 Ric(T du, du) + T'(du, du)] dm,      T' = -2 psi Ric,

is evaluated either from exact integrals of harmonic polynomials (spheres)
and Fourier modes (tori), or from an icosphere finite element solution.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .assembly import Spectrum, assemble, mass_local, sandwich, solve_eigen, stiffness_local, _scatter
from .fields import MetricField, TensorFamily
from .io import write_csv
from .mesh import Mesh
from .variation import _cluster_basis

VERDICTS = ("increasing", "non-decreasing", "not monotone")


class FlowError(ValueError):
    """Raised for times outside ``[0, delta)`` or unsupported flow data."""


@dataclass(frozen=True)
class HomogeneousFlow:
    """Ricci flow of a round sphere or a flat torus as a scale law.

    Parameters
    ----------
    manifold : {"sphere", "flat-torus"}
    n : int
        Dimension.
    size : float
        Initial radius of the sphere, or side length of the torus.
    """

    manifold: str
    n: int
    size: float = 1.0

    def __post_init__(self):
        if self.manifold not in ("sphere", "flat-torus"):
            raise FlowError(f"unknown homogeneous manifold {self.manifold!r}")
        if self.n < 1 or (self.manifold == "sphere" and self.n < 2):
            raise FlowError(f"invalid dimension {self.n} for {self.manifold}")
        if not self.size > 0:
            raise FlowError("size must be positive")

    @classmethod
    def from_tag(cls, tag: str, size: float | None = None):
        """``"sphere-2"``, ``"sphere-3"``, ``"flat-torus"`` or ``"flat-torus-n"``."""
        if tag.startswith("sphere-"):
            return cls("sphere", int(tag.split("-")[1]), 1.0 if size is None else size)
        if tag == "flat-torus" or tag.startswith("flat-torus-"):
            n = int(tag.rsplit("-", 1)[1]) if tag != "flat-torus" else 2
            return cls("flat-torus", n, 2 * math.pi if size is None else size)
        raise FlowError(f"unknown flow tag {tag!r}")

    @property
    def ricci_factor(self) -> float:
        """``Ric = ricci_factor * g_unit``; constant along the flow."""
        return float(self.n - 1) if self.manifold == "sphere" else 0.0

    @property
    def blowup_time(self) -> float:
        if self.manifold == "flat-torus":
            return math.inf
        return self.size**2 / (2.0 * (self.n - 1))

    def scale(self, t: float) -> float:
        """``s(t)`` with ``g(t) = s(t) g_unit``."""
        if self.manifold == "flat-torus":
            return 1.0
        return self.size**2 - 2.0 * (self.n - 1) * t

    def c(self, t: float) -> float:
        """``g(t) = c(t) g(0)``."""
        return self.scale(t) / self.scale(0.0)

    def scalar_curvature(self, t: float) -> float:
        return self.n * self.ricci_factor / self.scale(t)

    def check_time(self, t: float):
        if not (0.0 <= t < self.blowup_time):
            raise FlowError(f"time {t} outside [0, {self.blowup_time}) for {self.manifold}-{self.n}")


@dataclass(frozen=True)
class FlowState:
    """Scale, curvature and tensor data of a flow at time ``t`` for ``T = psi g``."""

    t: float
    c: float
    scale: float
    R: float
    ricci: float
    psi: float

    @property
    def tensor_factor(self) -> float:
        """``T = tensor_factor * g_unit``."""
        return self.psi * self.scale

    @property
    def tensor_rate_factor(self) -> float:
        """``T' = -2 psi Ric = tensor_rate_factor * g_unit``."""
        return -2.0 * self.psi * self.ricci

    def metric(self, mesh: Mesh) -> MetricField:
        d = mesh.dim
        return MetricField(np.broadcast_to(self.scale * np.eye(d), (mesh.n_cells, d, d)).copy())


def flow_state(flow: HomogeneousFlow, t: float, psi: float = 1.0) -> FlowState:
    flow.check_time(t)
    if not psi > 0:
        raise FlowError("psi must be positive")
    return FlowState(float(t), flow.c(t), flow.scale(t), flow.scalar_curvature(t), flow.ricci_factor, float(psi))


# ---------------------------------------------------------------------------
# exact integrals of eigenfunctions


def _poly_mul(p, q):
    out = defaultdict(float)
    for a, ca in p.items():
        for b, cb in q.items():
            out[tuple(i + j for i, j in zip(a, b))] += ca * cb
    return dict(out)


def _poly_diff(p, i):
    out = {}
    for a, c in p.items():
        if a[i]:
            b = list(a)
            b[i] -= 1
            out[tuple(b)] = out.get(tuple(b), 0.0) + c * a[i]
    return out


def sphere_monomial_integral(alpha) -> float:
    """``int_{S^n} x^alpha dsigma`` over the unit sphere in ``R^{len(alpha)}``."""
    if any(a % 2 for a in alpha):
        return 0.0
    beta = [(a + 1) / 2.0 for a in alpha]
    return 2.0 * math.exp(sum(math.lgamma(b) for b in beta) - math.lgamma(sum(beta)))


def _sphere_integral(p) -> float:
    return math.fsum(c * sphere_monomial_integral(a) for a, c in p.items())


@dataclass(frozen=True)
class AnalyticEigenfunction:
    """An eigenfunction with exact mass and energy integrals on the unit model.

    ``mass = int u^2 dsigma`` and ``energy = int |du|^2 dsigma`` for the unit
    sphere (or the torus of the flow's side), before any normalisation.
    """

    n: int
    degree: int
    mass: float
    energy: float

    @property
    def unit_eigenvalue(self) -> float:
        return self.energy / self.mass

    @classmethod
    def sphere(cls, n: int, degree: int):
        """``Re (x_1 + i x_2)^k`` restricted to the unit ``S^n``.

        The tangential gradient obeys ``|du|^2 = |grad p|^2 - k^2 p^2`` because
        ``p`` is homogeneous of degree ``k``.
        """
        if degree < 0:
            raise FlowError("degree must be non-negative")
        dim = n + 1
        p = {}
        for j in range(0, degree + 1, 2):
            a = [0] * dim
            a[0], a[1] = degree - j, j
            p[tuple(a)] = math.comb(degree, j) * (-1.0) ** (j // 2)
        mass = _sphere_integral(_poly_mul(p, p))
        grad2 = defaultdict(float)
        for i in range(dim):
            di = _poly_diff(p, i)
            for a, c in _poly_mul(di, di).items():
                grad2[a] += c
        energy = _sphere_integral(dict(grad2)) - degree**2 * mass
        return cls(n, degree, mass, energy)

    @classmethod
    def torus(cls, n: int, degree: int, side: float):
        """``cos(2 pi k x_1 / L)`` on the flat torus of side ``L``."""
        if degree < 1:
            raise FlowError("torus modes need degree >= 1")
        vol = side**n
        kappa = 2.0 * math.pi * degree / side
        return cls(n, degree, vol / 2.0, kappa**2 * vol / 2.0)


def analytic_eigenfunction(flow: HomogeneousFlow, degree: int) -> AnalyticEigenfunction:
    if flow.manifold == "sphere":
        return AnalyticEigenfunction.sphere(flow.n, degree)
    return AnalyticEigenfunction.torus(flow.n, degree, flow.size)


def _unit_scale(flow: HomogeneousFlow, state: FlowState) -> float:
    """Scale relative to the model on which the integrals were taken."""
    return state.scale if flow.manifold == "sphere" else 1.0


def analytic_eigenvalue(flow: HomogeneousFlow, u: AnalyticEigenfunction, state: FlowState) -> float:
    """Rayleigh quotient of ``u`` for ``div(psi grad)`` at the flow state."""
    return state.psi * u.energy / (_unit_scale(flow, state) * u.mass)


def evolution_rhs(flow: HomogeneousFlow, u: AnalyticEigenfunction, state: FlowState) -> float:
    """Evaluate the eigenvalue evolution from the exact integrals of ``u``.

    With ``g = s g_unit`` and ``u`` normalised in ``dm = s^{n/2} dsigma``:
    ``int u^2 dm = 1``, ``int |du|_g^2 dm = energy / (s mass)``, and every term
    is a constant times one of these two integrals.
    """
    s = _unit_scale(flow, state)
    n = u.n
    vol = s ** (n / 2.0)
    norm = 1.0 / (vol * u.mass)                  # u -> u / sqrt(vol * mass)
    int_u2 = vol * u.mass * norm
    int_du2 = vol * u.energy / s * norm          # int |du|_g^2 dm
    if abs(int_u2 - 1.0) > 1e-12:
        raise FlowError("eigenfunction is not mass-normalised")
    lam = analytic_eigenvalue(flow, u, state)
    psi = state.psi
    # T = psi g, so T(du, du) = psi |du|_g^2 and Ric(T du, du) = psi ric / s |du|_g^2
    ric_over_g = state.ricci / s
    term_r = state.R * (lam * int_u2 - psi * int_du2)
    term_ric = 4.0 * psi * ric_over_g * int_du2
    term_tp = state.tensor_rate_factor / s * int_du2
    return term_r + term_ric + term_tp


def exact_derivative(flow: HomogeneousFlow, u: AnalyticEigenfunction, t: float, psi: float = 1.0) -> float:
    """``d/dt [psi lambda_unit / s(t)]`` in closed form."""
    lam = psi * u.unit_eigenvalue
    if flow.manifold == "flat-torus":
        return 0.0
    return lam * 2.0 * (flow.n - 1) / flow.scale(t) ** 2


# ---------------------------------------------------------------------------
# finite element evaluation on an icosphere


def fem_flow_spectrum(mesh: Mesh, flow: HomogeneousFlow, t: float, k: int, psi=1.0) -> Spectrum:
    """Solve ``div(psi grad)`` on the mesh with metric ``s(t) g_unit``.

    ``psi`` may be a constant or per-vertex values.
    """
    if flow.manifold == "sphere" and mesh.topology != "sphere-embedded":
        raise FlowError("sphere flows need an embedded sphere mesh")
    if flow.manifold == "sphere" and flow.n != mesh.dim:
        raise FlowError(f"mesh dimension {mesh.dim} does not match the flow dimension {flow.n}")
    flow.check_time(t)
    psi_v = np.broadcast_to(np.asarray(psi, dtype=float), (mesh.n_vertices,)).copy()
    g = flow_state(flow, t).metric(mesh) if flow.manifold == "sphere" else _torus_metric(mesh)
    return solve_eigen(assemble(mesh, g, TensorFamily.conformal(psi_v), bc="t-neumann"), k)


def _torus_metric(mesh: Mesh) -> MetricField:
    d = mesh.dim
    return MetricField(np.broadcast_to(np.eye(d), (mesh.n_cells, d, d)).copy())


def evolution_matrix_fem(spectrum: Spectrum, cluster, flow: HomogeneousFlow, t: float) -> np.ndarray:
    """The evolution integrals as a symmetric matrix over a cluster of FEM eigenfunctions."""
    op = spectrum.operator
    mesh, g = op.mesh, op.metric
    phi, lam = _cluster_basis(spectrum, cluster)
    state = flow_state(flow, t)
    d = mesh.dim
    unit = np.broadcast_to(np.eye(d), (mesh.n_cells, d, d))
    if flow.manifold == "flat-torus":
        unit = g.values
    ric = state.ricci * unit
    psi_c = np.ones(mesh.n_cells) if op.family is None else op.family.cell_psi(mesh)
    tprime = -2.0 * psi_c[:, None, None] * ric
    w = op.cell_weights
    R = state.R
    gi = g.inverse
    # Ric(T du, du) = du^T g^{-1} T g^{-1} Ric g^{-1} du, symmetrised
    tric = gi @ op.tensor.values @ gi @ ric @ gi
    tric = 0.5 * (tric + np.swapaxes(tric, 1, 2))
    local = lam * mass_local(mesh, R * w)
    local -= stiffness_local(mesh, sandwich(g, op.tensor.values), R * w)
    local += stiffness_local(mesh, 4.0 * tric, w)
    local += stiffness_local(mesh, sandwich(g, tprime), w)
    M = _scatter(mesh, local)
    S = phi.T @ (M @ phi)
    return 0.5 * (S + S.T)


def evolution_rhs_fem(spectrum: Spectrum, cluster, flow: HomogeneousFlow, t: float) -> np.ndarray:
    """Predicted ``lambda'`` of each branch of a FEM cluster, ascending."""
    return np.linalg.eigvalsh(evolution_matrix_fem(spectrum, cluster, flow, t))


def monotonicity_hypothesis(state: FlowState) -> float:
    """Smallest eigenvalue of ``T' + 4 Ric(T, .)`` relative to ``g_unit``; >= 0 means satisfied."""
    return state.tensor_rate_factor + 4.0 * state.psi * state.ricci


# ---------------------------------------------------------------------------
# traces along the flow


def monotonicity_verdict(values, rel_tol: float = 1e-12) -> str:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return "non-decreasing"
    d = np.diff(v)
    tol = rel_tol * np.maximum(np.abs(v[1:]), 1.0)
    if np.all(d > tol):
        return "increasing"
    if np.all(d >= -tol):
        return "non-decreasing"
    return "not monotone"


@dataclass(frozen=True)
class FlowTrace:
    """Eigenvalue samples along a flow with predicted and exact derivatives."""

    flow: HomogeneousFlow
    degree: int
    psi: float
    times: np.ndarray
    lam: np.ndarray
    lam_scaling: np.ndarray
    lam_prime_pred: np.ndarray
    lam_prime_exact: np.ndarray
    c: np.ndarray
    R: np.ndarray
    hypothesis_margin: float
    verdict: str
    lam_fem: np.ndarray | None = None
    lam_prime_fem: np.ndarray | None = None
    eta_hessian_hypothesis: str = "reported-only"

    @property
    def hypothesis_satisfied(self) -> bool:
        return self.hypothesis_margin >= 0.0

    @property
    def scaling_invariant(self) -> np.ndarray:
        """``lambda(t) c(t)``; constant for ``T = psi g`` with constant ``psi``."""
        return self.lam * self.c

    def rows(self):
        return [
            (self.times[i], self.lam[i], self.lam_prime_pred[i], self.lam_prime_exact[i],
             self.c[i], self.R[i], self.R[i])
            for i in range(len(self.times))
        ]

    def export(self, path):
        header = ["t", "lambda", "lambda_prime_pred", "lambda_prime_exact", "c_of_t", "R_min", "R_max"]
        return write_csv(path, header, self.rows())

    def summary(self) -> dict:
        inv = self.scaling_invariant
        out = {
            "manifold": f"{self.flow.manifold}-{self.flow.n}",
            "degree": self.degree,
            "psi": self.psi,
            "blowup_time": self.flow.blowup_time if math.isfinite(self.flow.blowup_time) else None,
            "verdict": self.verdict,
            "hypothesis_satisfied": self.hypothesis_satisfied,
            "hypothesis_margin": self.hypothesis_margin,
            "max_rel_err_prime": float(np.max(_rel(self.lam_prime_pred, self.lam_prime_exact, self.lam))),
            "max_rel_err_scaling": float(np.max(np.abs(self.lam - self.lam_scaling) / np.abs(self.lam_scaling))),
            "scaling_invariant_spread": float((inv.max() - inv.min()) / abs(inv[0])) if inv[0] else 0.0,
            "lambda_ratio_last_first": float(self.lam[-1] / self.lam[0]) if self.lam[0] else None,
            "eta_hessian_hypothesis": self.eta_hessian_hypothesis,
        }
        if self.lam_fem is not None:
            out["max_rel_err_fem_lambda"] = float(np.max(np.abs(self.lam_fem - self.lam) / self.lam))
            out["max_rel_err_fem_prime"] = float(np.max(_rel(self.lam_prime_fem, self.lam_prime_exact, self.lam)))
        return out


def _rel(pred, exact, lam):
    pred, exact = np.asarray(pred), np.asarray(exact)
    return np.abs(pred - exact) / np.maximum(np.abs(exact), 1e-12 * np.maximum(np.abs(lam), 1.0))


def _grid(flow: HomogeneousFlow, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise FlowError("time grid must be a non-empty 1-d sequence")
    if np.any(np.diff(times) <= 0):
        raise FlowError("time grid must be strictly increasing")
    for t in times:
        flow.check_time(t)
    return times


def eigen_along_flow(flow: HomogeneousFlow, times, degree: int = 1, psi: float = 1.0,
                     mesh: Mesh | None = None, fem_cluster=None) -> FlowTrace:
    """Sample an eigenvalue branch on a time grid.

    The eigenvalue comes from the exact integrals of the degree-``degree``
    eigenfunction, compared against the scale law ``lambda(0) / c(t)``.  When
    ``mesh`` is given, each grid point is also re-solved by finite elements
    and the evolution integrals are evaluated on ``fem_cluster`` (indices of
    the FEM spectrum).
    """
    times = _grid(flow, times)
    u = analytic_eigenfunction(flow, degree)
    states = [flow_state(flow, t, psi) for t in times]
    lam = np.array([analytic_eigenvalue(flow, u, s) for s in states])
    lam0 = analytic_eigenvalue(flow, u, flow_state(flow, 0.0, psi))
    c = np.array([s.c for s in states])
    lam_scaling = lam0 / c
    pred = np.array([evolution_rhs(flow, u, s) for s in states])
    exact = np.array([exact_derivative(flow, u, t, psi) for t in times])
    margin = min(monotonicity_hypothesis(s) for s in states)
    lam_fem = prime_fem = None
    if mesh is not None:
        cluster = list(fem_cluster) if fem_cluster is not None else [1]
        k = max(cluster) + 2
        lam_fem, prime_fem = [], []
        for t in times:
            spec = fem_flow_spectrum(mesh, flow, t, k, psi)
            lam_fem.append(float(np.mean(spec.eigenvalues[cluster])))
            prime_fem.append(float(np.mean(evolution_rhs_fem(spec, cluster, flow, t))))
        lam_fem, prime_fem = np.array(lam_fem), np.array(prime_fem)
    return FlowTrace(flow, degree, float(psi), times, lam, lam_scaling, pred, exact, c,
                     np.array([s.R for s in states]), float(margin), monotonicity_verdict(lam),
                     lam_fem, prime_fem)


# ---------------------------------------------------------------------------
# blow-up near the extinction time


@dataclass(frozen=True)
class BlowupReport:
    """Samples of ``lambda(t)`` approaching the extinction time and a ``C / (delta - t)`` fit."""

    times: np.ndarray
    lam: np.ndarray
    lam_prime: np.ndarray
    slope_bound: np.ndarray
    delta: float
    epsilon: float
    constant: float
    constant_min: float
    fit_spread: float
    pinching_ok: bool

    @property
    def bound_holds(self) -> bool:
        tol = 1e-10 * np.abs(self.lam_prime)
        return bool(np.all(self.lam_prime >= self.slope_bound - tol))

    @property
    def diverges(self) -> bool:
        return self.constant_min > 0

    def summary(self) -> dict:
        return {
            "delta": self.delta,
            "epsilon": self.epsilon,
            "C_fit": self.constant,
            "C_min": self.constant_min,
            "fit_spread": self.fit_spread,
            "bound_holds": self.bound_holds,
            "pinching_ok": self.pinching_ok,
            "diverges": self.diverges,
            "lambda_last": float(self.lam[-1]),
        }


def blowup_probe(flow: HomogeneousFlow, degree: int, times, epsilon: float = 1.0 / 3.0,
                 psi: float = 1.0) -> BlowupReport:
    """Check the lower slope bound ``lambda (R_min + (2 eps - 1) R_max)`` and fit ``lambda (delta - t)``.

    Needs a three-dimensional sphere (strictly positive Ricci curvature) and
    a pinching constant ``0 < eps <= 1/2`` with ``Ric >= eps R g``.
    """
    if flow.manifold != "sphere" or flow.n != 3:
        raise FlowError("the blow-up probe needs a round three-sphere")
    if not (0.0 < epsilon <= 0.5):
        raise FlowError(f"pinching constant {epsilon} outside (0, 1/2]")
    trace = eigen_along_flow(flow, times, degree, psi)
    delta = flow.blowup_time
    R = trace.R  # homogeneous: R_min = R_max
    bound = trace.lam * (R + (2.0 * epsilon - 1.0) * R)
    prod = trace.lam * (delta - trace.times)
    constant = float(np.mean(prod))
    spread = float((prod.max() - prod.min()) / abs(constant)) if constant else math.inf
    # Ric = ricci_factor g_unit and R g = R s g_unit, so Ric >= eps R g iff ricci_factor >= eps R s
    pinching_ok = flow.ricci_factor >= epsilon * flow.n * flow.ricci_factor * (1.0 - 1e-12)
    return BlowupReport(trace.times, trace.lam, trace.lam_prime_pred, bound, delta, float(epsilon),
                        constant, float(prod.min()), spread, bool(pinching_ok))

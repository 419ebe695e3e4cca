"""Experiment configurations, runners and run manifests.

A configuration is a JSON object::

    {
      "experiment": "vary-metric",
      "domain": {"kind": "square", "nx": 32},
      "fields": {"family": "metric", "eta": 0.0},
      "bc": "dirichlet",
      "solver": {"k": 6},
      "variation": {"perturbation": "random-conformal", "cluster": 1},
      "fd": {"steps": [0.01, 0.005, 0.0025]},
      "seed": 0
    }

Scalar fields (``eta``, ``psi`` and profiles) are numbers or expressions in
the vertex coordinates ``x, y, z`` using ``sin cos tan exp log sqrt abs pi``.
Everything is validated before any computation starts.  Results are held in
memory and written only once the experiment has finished.
"""

from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import (
    BOUNDARY_CONDITIONS,
    DEFAULT_CLUSTER_TOL,
    analytic_spectrum,
    assemble,
    cluster_containing,
    normalize_bc,
    solve_eigen,
    spectrum_rows,
)
from .domain import FLUX_METHODS, compare_domain_slopes
from .fields import SymTensorField, TensorFamily, induced_metric
from .io import csv_text, write_json, atomic_write
from .mesh import MeshError, build_canonical, read_mesh
from .ricci import FlowError, HomogeneousFlow, blowup_probe, eigen_along_flow
from .splitting import MODES, _trig_series, random_domain_field, splitting_experiment
from .variation import DEFAULT_STEPS, VariationSpec, compare_slopes

SPECTRUM_HEADER = ["index", "lambda", "cluster_id", "residual"]
EXPERIMENTS = ("spectrum", "vary-metric", "vary-domain", "split", "extremal-check", "ricci-flow")

_ALLOWED_NAMES = {"x", "y", "z", "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "arctan2", "tanh"}
_NAMESPACE = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "abs": np.abs, "pi": math.pi, "arctan2": np.arctan2, "tanh": np.tanh,
}

_TOP_KEYS = {"experiment", "domain", "fields", "bc", "solver", "variation", "fd", "seed", "threads",
             "output", "flow", "split", "extremal", "tolerance"}

# keys accepted inside each section; "domain" is checked by the mesh builders
_SECTION_KEYS = {
    "fields": {"family", "psi", "tensor", "eta"},
    "solver": {"k", "tol", "cluster_tol"},
    "fd": {"steps"},
    "variation": {"cluster", "perturbation", "profile", "eta_dot", "eta_form", "field", "method", "modes"},
    "split": {"mode", "trials", "modes"},
    "extremal": {"index", "ratio_max", "ratio_min"},
    "flow": {"manifold", "size", "degree", "psi", "times", "fem", "blowup"},
}

DEFAULT_TOLERANCES = {
    "spectrum": 5e-3,
    "vary-metric": 1e-3,
    "vary-domain": 2e-2,
    "split": 0.95,
    "extremal-check": None,
    "ricci-flow": 1e-10,
}


class ConfigError(ValueError):
    """A configuration failed validation; the message names the offending field."""


# ---------------------------------------------------------------------------
# expressions


def _check_expression(text: str, where: str):
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: invalid expression {text!r} ({exc.msg})") from None
    allowed_nodes = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
                     ast.operator, ast.unaryop)
    for node in ast.walk(tree):
        if not isinstance(node, allowed_nodes):
            raise ConfigError(f"{where}: unsupported syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES:
            raise ConfigError(f"{where}: unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not isinstance(node.func, ast.Name):
            raise ConfigError(f"{where}: only plain function calls are allowed in {text!r}")
    return compile(tree, where, "eval")


def scalar_values(spec, points, where: str) -> np.ndarray:
    """Evaluate a numeric constant or coordinate expression at ``points``."""
    points = np.asarray(points, dtype=float)
    if isinstance(spec, bool) or spec is None:
        raise ConfigError(f"{where}: expected a number or an expression")
    if isinstance(spec, (int, float)):
        return np.full(len(points), float(spec))
    if not isinstance(spec, str):
        raise ConfigError(f"{where}: expected a number or an expression")
    code = _check_expression(spec, where)
    names = dict(_NAMESPACE)
    for i, axis in enumerate("xyz"):
        names[axis] = points[:, i] if i < points.shape[1] else np.zeros(len(points))
    with np.errstate(all="ignore"):
        out = eval(code, {"__builtins__": {}}, names)  # noqa: S307 - names are whitelisted above
    out = np.broadcast_to(np.asarray(out, dtype=float), (len(points),)).copy()
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{where}: expression {spec!r} produced non-finite values")
    return out


# ---------------------------------------------------------------------------
# validation


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _get(section: dict, key, kind, default, where):
    value = section.get(key, default)
    if kind is int:
        _require(isinstance(value, int) and not isinstance(value, bool), f"{where}.{key} must be an integer")
    elif kind is float:
        _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"{where}.{key} must be a number")
        value = float(value)
    elif kind is str:
        _require(isinstance(value, str), f"{where}.{key} must be a string")
    return value


def _section(cfg, key):
    value = cfg.get(key, {})
    _require(isinstance(value, dict), f"{key} must be an object")
    return value


@dataclass
class ExperimentConfig:
    """A validated experiment description (see the module docstring for the schema)."""

    raw: dict
    experiment: str
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, data: dict, experiment: str | None = None, seed: int | None = None,
                  threads: int | None = None):
        _require(isinstance(data, dict), "configuration must be a JSON object")
        raw = copy.deepcopy(data)
        unknown = set(raw) - _TOP_KEYS
        _require(not unknown, f"unknown configuration fields: {sorted(unknown)}")
        for name, keys in _SECTION_KEYS.items():
            section = raw.get(name, {})
            if isinstance(section, dict):
                extra = set(section) - keys
                _require(not extra, f"{name}: unknown fields {sorted(extra)}")
        kind = raw.get("experiment", experiment)
        _require(kind is not None, "experiment: missing experiment kind")
        _require(kind in EXPERIMENTS, f"experiment: unknown kind {kind!r}; expected one of {list(EXPERIMENTS)}")
        if experiment is not None and kind != experiment:
            raise ConfigError(f"experiment: config declares {kind!r} but the command is {experiment!r}")
        raw["experiment"] = kind
        if seed is not None:
            raw["seed"] = seed
        if threads is not None:
            raw["threads"] = threads
        cfg = cls(raw, kind, _get(raw, "seed", int, 0, "config"), _get(raw, "threads", int, 1, "config"))
        _require(cfg.threads >= 1, "threads must be at least 1")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, **overrides):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path} is not valid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data, **overrides)

    @property
    def config_hash(self) -> str:
        # thread count and output location do not influence results
        payload = {k: v for k, v in self.raw.items() if k not in ("threads", "output")}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    # -- validation -------------------------------------------------------

    def validate(self):
        if self.experiment == "ricci-flow":
            self._validate_flow()
            return
        self.problem = build_problem(self.raw)
        solver = _section(self.raw, "solver")
        k = _get(solver, "k", int, 6, "solver")
        _require(k >= 1, "solver.k must be positive")
        _require(k <= self.problem["n_free"], f"solver.k={k} exceeds the {self.problem['n_free']} free DOFs")
        _get(solver, "tol", float, 1e-8, "solver")
        _get(solver, "cluster_tol", float, DEFAULT_CLUSTER_TOL, "solver")
        fd = _section(self.raw, "fd")
        steps = fd.get("steps", list(DEFAULT_STEPS))
        _require(isinstance(steps, list) and steps and all(isinstance(s, (int, float)) and s > 0 for s in steps),
                 "fd.steps must be a non-empty list of positive numbers")
        _require(all(a > b for a, b in zip(steps, steps[1:])), "fd.steps must be strictly decreasing")
        var = _section(self.raw, "variation")
        if self.experiment in ("vary-metric", "vary-domain", "split"):
            cl = _get(var, "cluster", int, 0, "variation")
            _require(0 <= cl < k, f"variation.cluster={cl} outside the computed range 0..{k - 1}")
        if self.experiment == "vary-metric":
            kind = var.get("perturbation", "random-conformal")
            _require(kind in ("random-conformal", "conformal", "uniform", "random"),
                     f"variation.perturbation: unknown kind {kind!r}")
            if kind == "conformal":
                _require("profile" in var, "variation.profile is required for a conformal perturbation")
                scalar_values(var["profile"], self.problem["mesh"].cell_centroids(), "variation.profile")
            if "eta_dot" in var:
                scalar_values(var["eta_dot"], self.problem["mesh"].vertices, "variation.eta_dot")
            _require(var.get("eta_form", "gradient") in ("gradient", "weak"), "variation.eta_form must be gradient or weak")
        if self.experiment in ("vary-domain", "extremal-check", "split"):
            method = var.get("method", "recovered")
            _require(method in FLUX_METHODS, f"variation.method must be one of {list(FLUX_METHODS)}")
        if self.experiment in ("vary-domain", "extremal-check") or (
            self.experiment == "split" and _section(self.raw, "split").get("mode", "metric") == "domain"
        ):
            _require(not self.problem["mesh"].is_embedded and self.problem["mesh"].boundary_faces.size,
                     "domain: domain experiments need a chart mesh with boundary")
        if self.experiment == "vary-domain":
            V = var.get("field", "dilation")
            if isinstance(V, list):
                _require(len(V) == self.problem["mesh"].dim, "variation.field must list one expression per axis")
                for i, e in enumerate(V):
                    scalar_values(e, self.problem["mesh"].vertices, f"variation.field[{i}]")
            else:
                _require(V in ("dilation", "random"), f"variation.field: unknown kind {V!r}")
        if self.experiment == "split":
            sp_ = _section(self.raw, "split")
            _require(sp_.get("mode", "metric") in MODES, f"split.mode must be one of {list(MODES)}")
            _require(_get(sp_, "trials", int, 20, "split") >= 0, "split.trials must be non-negative")
        if self.experiment == "extremal-check":
            _require(self.problem["bc"] == "dirichlet", "bc: the extremal check needs Dirichlet conditions")
            idx = _get(_section(self.raw, "extremal"), "index", int, 0, "extremal")
            _require(0 <= idx < k, f"extremal.index={idx} outside the computed range 0..{k - 1}")
        tol = self.raw.get("tolerance", DEFAULT_TOLERANCES[self.experiment])
        _require(tol is None or (isinstance(tol, (int, float)) and tol >= 0), "tolerance must be a non-negative number")

    def _validate_flow(self):
        flow = _section(self.raw, "flow")
        tag = _get(flow, "manifold", str, "sphere-2", "flow")
        try:
            fl = HomogeneousFlow.from_tag(tag, flow.get("size"))
        except (FlowError, ValueError) as exc:
            raise ConfigError(f"flow.manifold: {exc}") from None
        _get(flow, "degree", int, 1, "flow")
        psi = _get(flow, "psi", float, 1.0, "flow")
        _require(psi > 0, "flow.psi must be positive")
        times = flow.get("times", [0.0, 0.1, 0.2])
        _require(isinstance(times, list) and times and all(isinstance(t, (int, float)) for t in times),
                 "flow.times must be a non-empty list of numbers")
        _require(all(a < b for a, b in zip(times, times[1:])), "flow.times must be strictly increasing")
        _require(all(0 <= t < fl.blowup_time for t in times),
                 f"flow.times must lie in [0, {fl.blowup_time}) for {tag}")
        fem = flow.get("fem")
        if fem is not None:
            _require(isinstance(fem, dict), "flow.fem must be an object")
            _require(fl.manifold == "sphere" and fl.n == 2, "flow.fem is available for sphere-2 only")
            _get(fem, "subdivisions", int, 3, "flow.fem")
            cl = fem.get("cluster", [1, 2, 3])
            _require(isinstance(cl, list) and cl and all(isinstance(i, int) and i >= 0 for i in cl),
                     "flow.fem.cluster must be a list of eigen indices")
        blow = flow.get("blowup")
        if blow is not None:
            _require(isinstance(blow, dict), "flow.blowup must be an object")
            _require(fl.manifold == "sphere" and fl.n == 3, "flow.blowup needs manifold sphere-3")
            eps = _get(blow, "epsilon", float, 1.0 / 3.0, "flow.blowup")
            _require(0 < eps <= 0.5, "flow.blowup.epsilon must lie in (0, 1/2]")
        self.flow = fl


def build_problem(raw: dict) -> dict:
    """Mesh, metric, tensor family and weight described by a configuration."""
    dom = _section(raw, "domain")
    try:
        if "mesh_file" in dom:
            _require(set(dom) == {"mesh_file"}, "domain: mesh_file cannot be combined with other fields")
            mesh = read_mesh(dom["mesh_file"])
        else:
            params = {k: v for k, v in dom.items() if k != "kind"}
            _require("kind" in dom, "domain.kind is required")
            mesh = build_canonical(dom["kind"], **params)
    except MeshError as exc:
        raise ConfigError(f"domain: {exc}") from None
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"domain: {exc}") from None
    g = induced_metric(mesh)
    fields = _section(raw, "fields")
    rule = fields.get("family", "metric")
    if rule == "metric":
        family = TensorFamily.metric()
    elif rule == "conformal":
        psi = scalar_values(fields.get("psi", 1.0), mesh.vertices, "fields.psi")
        _require(np.all(psi > 0), "fields.psi must be strictly positive")
        family = TensorFamily.conformal(psi)
    elif rule == "fixed":
        tensor = fields.get("tensor")
        _require(tensor is not None, "fields.tensor is required for the fixed family")
        try:
            A = np.array(tensor, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("fields.tensor must be a square matrix") from None
        _require(A.shape == (mesh.dim, mesh.dim), f"fields.tensor must be {mesh.dim}x{mesh.dim}")
        _require(np.allclose(A, A.T), "fields.tensor must be symmetric")
        _require(np.linalg.eigvalsh(A).min() > 0, "fields.tensor must be positive-definite")
        _require(not mesh.is_embedded, "fields.tensor applies to chart meshes only")
        family = TensorFamily.fixed(SymTensorField.constant(mesh, A))
    else:
        raise ConfigError(f"fields.family: unknown rule {rule!r}")
    eta = scalar_values(fields.get("eta", 0.0), mesh.vertices, "fields.eta")
    bc = raw.get("bc", "dirichlet")
    try:
        bc = normalize_bc(bc)
    except ValueError:
        raise ConfigError(f"bc: unknown boundary condition {bc!r}; expected one of {list(BOUNDARY_CONDITIONS)}") from None
    n_free = mesh.n_vertices - (len(mesh.boundary_vertices) if bc == "dirichlet" else 0)
    _require(n_free > 0, "domain: no free degrees of freedom remain")
    return {"mesh": mesh, "metric": g, "family": family, "eta": eta, "bc": bc, "n_free": n_free}


# ---------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    """In-memory artifacts of a run: CSV texts and a summary record."""

    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def check(self, name, value, tolerance, passed):
        self.checks.append({"name": name, "value": value, "tolerance": tolerance, "pass": passed})


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    version: str
    started: float
    elapsed: float
    files: list
    out_dir: str

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "version": self.version,
            "started": self.started,
            "elapsed_seconds": self.elapsed,
            "files": self.files,
        }


def _spectrum(cfg: ExperimentConfig):
    p = cfg.problem
    solver = _section(cfg.raw, "solver")
    op = assemble(p["mesh"], p["metric"], p["family"], p["eta"], p["bc"])
    return solve_eigen(op, solver.get("k", 6), tol=float(solver.get("tol", 1e-8)))


def _cluster(cfg, spectrum):
    var = _section(cfg.raw, "variation")
    tol = float(_section(cfg.raw, "solver").get("cluster_tol", DEFAULT_CLUSTER_TOL))
    return cluster_containing(spectrum, var.get("cluster", 0), tol)


def _steps(cfg):
    return tuple(float(s) for s in _section(cfg.raw, "fd").get("steps", DEFAULT_STEPS))


def _substream(seed: int, name: str):
    """Named generator derived from the master seed."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


def _spectrum_csv(cfg, spectrum):
    tol = float(_section(cfg.raw, "solver").get("cluster_tol", DEFAULT_CLUSTER_TOL))
    return csv_text(SPECTRUM_HEADER, spectrum_rows(spectrum, tol))


def run_spectrum(cfg: ExperimentConfig) -> RunResult:
    res = RunResult()
    spec = _spectrum(cfg)
    res.files["spectrum.csv"] = _spectrum_csv(cfg, spec)
    res.summary = {"eigenvalues": spec.eigenvalues.tolist(), "max_residual": float(spec.residuals.max())}
    dom = _section(cfg.raw, "domain")
    flat = cfg.problem["family"].rule == "metric" and not np.any(cfg.problem["eta"] - cfg.problem["eta"][0])
    if flat and dom.get("kind") in ("interval", "rectangle", "square", "flat-torus", "torus", "sphere", "icosphere"):
        size = {k: v for k, v in dom.items() if k in ("length", "width", "height", "side")}
        exact = analytic_spectrum(dom["kind"], len(spec), cfg.problem["bc"], **size)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(exact > 0, np.abs(spec.eigenvalues - exact) / np.where(exact > 0, exact, 1), np.abs(spec.eigenvalues))
        tol = cfg.raw.get("tolerance", DEFAULT_TOLERANCES["spectrum"])
        res.summary["analytic"] = exact.tolist()
        res.check("max_rel_err_vs_analytic", float(rel.max()), tol, bool(tol is None or rel.max() <= tol))
    return res


def _metric_perturbation(cfg, spectrum):
    var = _section(cfg.raw, "variation")
    op = spectrum.operator
    mesh, g = op.mesh, op.metric
    kind = var.get("perturbation", "random-conformal")
    if kind == "uniform":
        return g.as_tensor("H")
    if kind == "conformal":
        a = scalar_values(var["profile"], mesh.cell_centroids(), "variation.profile")
        return SymTensorField(a[:, None, None] * g.values, "H")
    rng = _substream(cfg.seed, "vary-metric")
    if kind == "random-conformal":
        a = _trig_series(mesh.cell_centroids(), rng, int(var.get("modes", 3)))
        a = 0.5 * a / np.abs(a).max()
        return SymTensorField(a[:, None, None] * g.values, "H")
    from .splitting import random_metric_perturbation

    return random_metric_perturbation(mesh, g, rng, int(var.get("modes", 3)))


def run_vary_metric(cfg: ExperimentConfig) -> RunResult:
    res = RunResult()
    spec = _spectrum(cfg)
    cluster = _cluster(cfg, spec)
    var = _section(cfg.raw, "variation")
    H = _metric_perturbation(cfg, spec)
    eta_dot = scalar_values(var["eta_dot"], spec.operator.mesh.vertices, "variation.eta_dot") if "eta_dot" in var else None
    vs = VariationSpec(H, eta_dot=eta_dot, family=spec.operator.family)
    report = compare_slopes(spec, cluster, vs, _steps(cfg), var.get("eta_form", "gradient"), cfg.threads)
    res.files["spectrum.csv"] = _spectrum_csv(cfg, spec)
    res.files["slopes.csv"] = csv_text(["branch", "predicted", "oracle", "rel_err", "fd_order"], report.rows())
    res.summary = {"cluster": cluster, **report.summary()}
    tol = cfg.raw.get("tolerance", DEFAULT_TOLERANCES["vary-metric"] if len(cluster) == 1 else 1e-2)
    err = float(report.rel_err.max())
    res.check("max_rel_err_vs_fd", err, tol, bool(tol is None or err <= tol))
    return res


def _domain_field(cfg, mesh):
    var = _section(cfg.raw, "variation")
    V = var.get("field", "dilation")
    if V == "dilation":
        return mesh.vertices.copy()
    if V == "random":
        return random_domain_field(mesh, _substream(cfg.seed, "vary-domain"), int(var.get("modes", 3)))
    return np.column_stack([scalar_values(e, mesh.vertices, f"variation.field[{i}]") for i, e in enumerate(V)])


def run_vary_domain(cfg: ExperimentConfig) -> RunResult:
    res = RunResult()
    spec = _spectrum(cfg)
    cluster = _cluster(cfg, spec)
    var = _section(cfg.raw, "variation")
    V = _domain_field(cfg, spec.operator.mesh)
    report = compare_domain_slopes(spec, cluster, V, _steps(cfg), var.get("method", "recovered"), cfg.threads)
    res.files["spectrum.csv"] = _spectrum_csv(cfg, spec)
    res.files["slopes.csv"] = csv_text(["branch", "predicted", "oracle", "rel_err", "fd_order"], report.rows())
    res.summary = {"cluster": cluster, **report.summary()}
    tol = cfg.raw.get("tolerance", DEFAULT_TOLERANCES["vary-domain"])
    err = float(report.rel_err.max())
    res.check("max_rel_err_vs_fd", err, tol, bool(tol is None or err <= tol))
    return res


def run_split(cfg: ExperimentConfig) -> RunResult:
    res = RunResult()
    spec = _spectrum(cfg)
    cluster = _cluster(cfg, spec)
    sp_ = _section(cfg.raw, "split")
    stats = splitting_experiment(spec, cluster, sp_.get("mode", "metric"), sp_.get("trials", 20),
                                 cfg.seed, int(sp_.get("modes", 3)), cfg.threads)
    res.files["spectrum.csv"] = _spectrum_csv(cfg, spec)
    res.files["stats.csv"] = csv_text(["trial", "gap", "split_bool"], stats.rows())
    res.summary = {"cluster": cluster, **stats.summary()}
    tol = cfg.raw.get("tolerance", DEFAULT_TOLERANCES["split"])
    if stats.fraction is not None and len(cluster) > 1:
        res.check("split_fraction", stats.fraction, tol, bool(tol is None or stats.fraction >= tol))
    return res


def run_extremal(cfg: ExperimentConfig) -> RunResult:
    from .domain import extremal_check

    res = RunResult()
    spec = _spectrum(cfg)
    ext = _section(cfg.raw, "extremal")
    method = _section(cfg.raw, "variation").get("method", "recovered")
    report = extremal_check(spec, ext.get("index", 0), method)
    res.files["spectrum.csv"] = _spectrum_csv(cfg, spec)
    res.files["boundary.csv"] = csv_text(["face_id", "component", "s", "value"], report.rows())
    res.summary = report.summary()
    if "ratio_max" in ext:
        res.check("deviation_ratio_max", report.ratio, ext["ratio_max"], bool(report.ratio <= ext["ratio_max"]))
    if "ratio_min" in ext:
        res.check("deviation_ratio_min", report.ratio, ext["ratio_min"], bool(report.ratio >= ext["ratio_min"]))
    return res


def run_ricci(cfg: ExperimentConfig) -> RunResult:
    from .mesh import icosphere_mesh

    res = RunResult()
    flow_cfg = _section(cfg.raw, "flow")
    fl = cfg.flow
    fem = flow_cfg.get("fem")
    mesh = icosphere_mesh(fem.get("subdivisions", 3)) if fem else None
    trace = eigen_along_flow(fl, flow_cfg.get("times", [0.0, 0.1, 0.2]), flow_cfg.get("degree", 1),
                             float(flow_cfg.get("psi", 1.0)), mesh, fem.get("cluster", [1, 2, 3]) if fem else None)
    header = ["t", "lambda", "lambda_prime_pred", "lambda_prime_exact", "c_of_t", "R_min", "R_max"]
    res.files["trace.csv"] = csv_text(header, trace.rows())
    res.summary = trace.summary()
    tol = cfg.raw.get("tolerance", DEFAULT_TOLERANCES["ricci-flow"])
    err = res.summary["max_rel_err_prime"]
    res.check("max_rel_err_prime", err, tol, bool(err <= tol))
    if fem:
        e = res.summary["max_rel_err_fem_prime"]
        res.check("max_rel_err_fem_prime", e, 1e-2, bool(e <= 1e-2))
    blow = flow_cfg.get("blowup")
    if blow is not None:
        times = blow.get("times", flow_cfg.get("times"))
        rep = blowup_probe(fl, flow_cfg.get("degree", 1), times, float(blow.get("epsilon", 1.0 / 3.0)),
                           float(flow_cfg.get("psi", 1.0)))
        res.summary["blowup"] = rep.summary()
        res.check("blowup_bound_holds", rep.bound_holds, None, rep.bound_holds)
    return res


RUNNERS = {
    "spectrum": run_spectrum,
    "vary-metric": run_vary_metric,
    "vary-domain": run_vary_domain,
    "split": run_split,
    "extremal-check": run_extremal,
    "ricci-flow": run_ricci,
}


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def run_config(cfg: ExperimentConfig, out_dir) -> RunManifest:
    """Run an experiment and write its CSVs, ``summary.json`` and ``manifest.json``."""
    out = Path(out_dir)
    started = time.time()
    t0 = time.perf_counter()
    result = RUNNERS[cfg.experiment](cfg)
    elapsed = time.perf_counter() - t0
    files = []
    for name, text in sorted(result.files.items()):
        atomic_write(out / name, text)
        files.append({"path": name, "sha256": _sha256(text)})
    summary = {"experiment": cfg.experiment, "seed": cfg.seed, **result.summary, "checks": result.checks}
    write_json(out / "summary.json", summary)
    files.append({"path": "summary.json"})
    manifest = RunManifest(cfg.experiment, cfg.config_hash, __version__, started, elapsed, files, str(out))
    write_json(out / "manifest.json", manifest.to_dict())
    return manifest


# ---------------------------------------------------------------------------
# reports


class ReportError(FileNotFoundError):
    """A manifest references an artifact that does not exist."""


REPORT_HEADER = ["experiment", "check", "value", "tolerance", "pass"]


def emit_report(manifests) -> list[tuple]:
    """Consolidate the checks of several runs into one table.

    ``manifests`` holds paths of ``manifest.json`` files or run directories.
    """
    rows = []
    for item in manifests:
        path = Path(item)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise ReportError(f"missing manifest: {path}")
        data = json.loads(path.read_text())
        base = path.parent
        for entry in data.get("files", []):
            target = base / entry["path"]
            if not target.exists():
                raise ReportError(f"missing artifact: {target}")
        summary = json.loads((base / "summary.json").read_text())
        for chk in summary.get("checks", []):
            rows.append((data["experiment"], chk["name"], chk["value"], chk["tolerance"], chk["pass"]))
    return rows


def report_csv(rows) -> str:
    return csv_text(REPORT_HEADER, rows)

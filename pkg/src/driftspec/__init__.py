"""Spectra of weighted divergence-form operators and their first-order variations."""

__version__ = "0.1.0"

from .assembly import (  # noqa: E402
    OperatorPair,
    SolverError,
    Spectrum,
    assemble,
    cluster_containing,
    group_multiplets,
    solve_eigen,
)
from .fields import MetricField, ScalarField, SymTensorField, TensorFamily, VectorField, induced_metric  # noqa: E402
from .mesh import Mesh, MeshError, build_canonical, read_mesh, write_mesh  # noqa: E402

__all__ = [
    "Mesh",
    "MeshError",
    "MetricField",
    "OperatorPair",
    "ScalarField",
    "SolverError",
    "Spectrum",
    "SymTensorField",
    "TensorFamily",
    "VectorField",
    "__version__",
    "assemble",
    "build_canonical",
    "cluster_containing",
    "group_multiplets",
    "induced_metric",
    "read_mesh",
    "solve_eigen",
    "write_mesh",
]

"""Localized orthogonal decomposition for heterogeneous Stokes flow.

The multiscale space is built from localized basis functions computed on a
Crouzeix-Raviart fine discretization; the pressure is piecewise constant on
the coarse mesh.
"""
from .coeffs import (PiecewiseConstantField, RandomCoefficientSpec, generate_multiscale_coefficient,
                     inject_to_fine)
from .cr_fem import assemble_operators, norms
from .estimator import StokesLOD
from .exceptions import DomainError, ResourceError, SingularSystemError, SolverAccuracyError
from .lod_basis import GLOBAL, apply_Rl, compute_basis
from .mesh import build_hierarchy
from .solver import compute_errors, solve_fine_reference, solve_lod

__version__ = "0.1.0"

__all__ = [
    "GLOBAL",
    "DomainError",
    "PiecewiseConstantField",
    "RandomCoefficientSpec",
    "ResourceError",
    "SingularSystemError",
    "SolverAccuracyError",
    "StokesLOD",
    "apply_Rl",
    "assemble_operators",
    "build_hierarchy",
    "compute_basis",
    "compute_errors",
    "generate_multiscale_coefficient",
    "inject_to_fine",
    "norms",
    "solve_fine_reference",
    "solve_lod",
]

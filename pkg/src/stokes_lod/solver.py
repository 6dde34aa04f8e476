"""Coarse LOD solve, pressure post-processing and the fine reference solve."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cr_fem import assemble_rhs, inject, l2_projection_coarse, norms
from .exceptions import DomainError, SingularSystemError
from .sparse_la import SaddleSystem


@dataclass
class LodSolution:
    """Result of the multiscale method.

    Attributes
    ----------
    coefficients : ndarray
        Weight of each basis function in the velocity.
    velocity : ndarray
        Reconstructed fine CR velocity.
    pressure : ndarray
        Coarse piecewise constant pressure with zero mean.
    pressure_pp : ndarray or None
        Post-processed fine piecewise constant pressure.
    """

    coefficients: np.ndarray
    velocity: np.ndarray
    pressure: np.ndarray
    pressure_pp: np.ndarray = None
    multiplier: float = 0.0


@dataclass
class FineSolution:
    """Fine CR velocity and fine piecewise constant pressure (zero mean)."""

    velocity: np.ndarray
    pressure: np.ndarray
    multiplier: float = 0.0


def _mean_zero_system(P, D, areas, rhs_primal):
    """Block system with unknowns ``(x, mu, p)``.

    Rows: ``P x + D^T p = rhs``, ``areas . p = 0``, ``D x + mu areas = 0``.
    """
    n, m = P.shape[0], D.shape[0]
    a = sp.csr_matrix(np.asarray(areas)[None, :])
    grid = [
        [sp.csr_matrix(P), None, D.T],
        [None, None, a],
        [D, a.T, None],
    ]
    mat = sp.bmat(grid, format="csc")
    rhs = np.concatenate([rhs_primal, np.zeros(1 + m)])
    return SaddleSystem([("primal", n), ("mu", 1), ("pressure", m)], mat, rhs, n_primal=n + 1)


def coarse_divergence_matrix(basis):
    """``b(phi_i, 1_K) = -|K| rho_(i, K)`` for every coarse triangle ``K``."""
    return sp.csr_matrix(-basis.ops.coarse.areas[:, None] * basis.rho_matrix())


def galerkin_matrix(A, phi, chunk=64):
    """Dense symmetrized ``phi^T A phi``, formed a few columns at a time."""
    n = phi.shape[1]
    out = np.empty((n, n))
    phi_t = phi.T.tocsr()
    for start in range(0, n, chunk):
        cols = phi[:, start:start + chunk].toarray()
        out[:, start:start + chunk] = phi_t @ (A @ cols)
    return 0.5 * (out + out.T)


def assemble_coarse_system(basis, f=None, load=None):
    """Galerkin system of the multiscale method.

    Either a callable ``f`` or a fine load vector ``load`` must be given.
    """
    ops = basis.ops
    if load is None:
        load = assemble_rhs(ops.space, f)
    phi = basis.phi
    A_c = galerkin_matrix(ops.A, phi)
    B_c = coarse_divergence_matrix(basis)
    return _mean_zero_system(A_c, B_c, ops.coarse.areas, phi.T @ load)


def solve_lod(basis, f=None, load=None, postprocess=True):
    """Solve the coarse saddle point problem and reconstruct the velocity.

    Raises
    ------
    SingularSystemError
        If the coarse system is singular (inf-sup failure).
    """
    system = assemble_coarse_system(basis, f, load)
    try:
        x = system.solve()
    except SingularSystemError as exc:
        raise SingularSystemError(f"coarse LOD system is singular: {exc}", exc.pivot) from exc
    parts = system.split(x)
    c = parts["primal"]
    sol = LodSolution(coefficients=c, velocity=basis.phi @ c,
                      pressure=parts["pressure"], multiplier=float(parts["mu"][0]))
    if postprocess:
        sol.pressure_pp = postprocess_pressure(sol, basis)
    return sol


def postprocess_pressure(sol, basis):
    """Coarse pressure on the fine mesh plus ``sum_i c_i xi_i``."""
    return inject(sol.pressure, basis.ops.hier) + basis.xi @ sol.coefficients


def assemble_fine_system(ops, f=None, load=None):
    if load is None:
        load = assemble_rhs(ops.space, f)
    return _mean_zero_system(ops.A, ops.B, ops.fine.areas, load)


def solve_fine_reference(ops, f=None, load=None):
    """CR Stokes solution on the fine mesh with a zero mean pressure."""
    system = assemble_fine_system(ops, f, load)
    parts = system.split(system.solve())
    return FineSolution(parts["primal"], parts["pressure"], float(parts["mu"][0]))


@dataclass
class ErrorRecord:
    err_u_h1: float
    err_u_l2: float
    err_p_l2: float
    err_pih_p_l2: float

    def as_tuple(self):
        return (self.err_u_h1, self.err_u_l2, self.err_p_l2, self.err_pih_p_l2)


def compute_errors(fine, lod, ops):
    """Velocity errors in the broken H1 seminorm and L2, pressure errors in L2.

    ``lod`` may also be a :class:`FineSolution` (its pressure is then used
    both as the post-processed and, projected, as the coarse pressure).
    """
    space = ops.space
    if fine.velocity.size != space.n_dofs or lod.velocity.size != space.n_dofs:
        raise DomainError("velocity vectors do not match the fine space")
    if fine.pressure.size != ops.fine.n_triangles:
        raise DomainError("fine pressure does not match the fine mesh")
    nrm = norms(space)
    du = fine.velocity - lod.velocity
    if isinstance(lod, FineSolution):
        p_pp = lod.pressure
        p_c = l2_projection_coarse(lod.pressure, ops.hier)
    else:
        p_pp = lod.pressure_pp
        p_c = lod.pressure
    if p_c.size != ops.coarse.n_triangles:
        raise DomainError("coarse pressure does not match the coarse mesh")
    pih = l2_projection_coarse(fine.pressure, ops.hier)
    return ErrorRecord(
        err_u_h1=nrm.broken_h1(du),
        err_u_l2=nrm.l2(du),
        err_p_l2=nrm.p0_l2(fine.pressure - p_pp),
        err_pih_p_l2=nrm.p0_l2(pih - p_c, areas=ops.coarse.areas),
    )


def divergence_ratio(velocity, ops):
    """``max_t |div v|_t / ||grad v||``, zero for a zero field."""
    div = np.abs(ops.space.elementwise_divergence(velocity)).max()
    energy = norms(ops.space).broken_h1(velocity)
    return float(div / energy) if energy > 0 else float(div)

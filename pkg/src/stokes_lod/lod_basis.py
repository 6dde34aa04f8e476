"""Localized basis functions and the face-integral preserving projection.

For a coarse interior face ``F`` and component ``j`` the basis function is
the velocity part of the patch saddle point problem

    A phi + B^T xi + C^T lam       = 0
    B phi            + M^T rho     = 0
    C phi                          = e_(F, j)
            M xi                   = 0

posed on the fine CR unknowns strictly inside ``N^ell(F)``.  ``xi`` is a fine
piecewise constant pressure with zero coarse averages, ``lam`` collects the
face multipliers of the coarse faces inside the patch and ``rho`` is the
(coarse piecewise constant) fine divergence of ``phi``.  Unknowns are stored
in the block order ``(velocity, rho, xi, lam)`` so that the first two blocks
form the primal part of a quasi-definite system.

Testing the divergence rows with all fine piecewise constants (instead of
only those with zero coarse averages) is what introduces ``rho``.  The
system is nonsingular also for patches that cover the whole domain: a
constant ``xi`` is excluded by ``M xi = 0``.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DomainError, SingularSystemError, SolverAccuracyError
from .mesh import build_patch, face_patch_mask
from .sparse_la import SaddleSystem

logger = logging.getLogger(__name__)

GLOBAL = None  # patch order meaning "whole domain"


def _velocity_dofs(space, fine_edges):
    k = space.edge_dof[fine_edges]
    assert np.all(k >= 0)
    return (2 * k[:, None] + np.arange(2)).ravel()


def _face_rows(ops, faces):
    """Rows of ``C`` belonging to the given coarse edges."""
    pos = np.searchsorted(ops.coarse.interior_edges, faces)
    return (2 * pos[:, None] + np.arange(2)).ravel()


def global_order(mesh):
    """A patch order large enough for every face patch to cover the mesh."""
    return mesh.n_triangles


def make_patch(ops, face, ell):
    """Patch of order ``ell``; ``ell=None`` requests the whole domain."""
    order = global_order(ops.coarse) if ell is GLOBAL else ell
    patch = build_patch(ops.hier, face, order)
    if ell is GLOBAL and not patch.is_global:
        raise AssertionError("global patch does not cover the domain")
    return patch


@dataclass
class PatchSystem:
    """Saddle point system of one patch together with its index maps."""

    patch: object
    system: SaddleSystem
    dofs: np.ndarray
    face_rows: np.ndarray
    _fact: object = None

    def rhs(self, face, component):
        """Right-hand side ``e_(F, j)`` in the constraint block."""
        b = np.zeros(self.system.matrix.shape[0])
        m = np.searchsorted(self.patch.coarse_faces, face)
        if m >= self.patch.coarse_faces.size or self.patch.coarse_faces[m] != face:
            raise DomainError(f"face {face} is not inside the patch")
        b[self.system.block("lam")][2 * m + component] = 1.0
        return b

    def factorization(self):
        if self._fact is None:
            self._fact = self.system.factorize()
        return self._fact


def assemble_basis_saddle(patch, ops):
    """Assemble the patch system (velocity, rho, xi, lam) described in the module docstring.

    Raises
    ------
    DomainError
        If no coarse face lies inside the patch.
    """
    if patch.coarse_faces.size == 0:
        raise DomainError(f"patch around face {patch.face} has no interior coarse faces")
    dofs = _velocity_dofs(ops.space, patch.fine_edges)
    rows = _face_rows(ops, patch.coarse_faces)
    ft = patch.fine_triangles
    ct = patch.coarse_triangles
    A = ops.A[dofs][:, dofs]
    B = ops.B[ft][:, dofs]
    C = ops.C[rows][:, dofs]
    M = ops.M[ct][:, ft]
    grid = [
        [A, None, B.T, C.T],
        [None, None, M, None],
        [B, M.T, None, None],
        [C, None, None, None],
    ]
    sizes = [dofs.size, ct.size, ft.size, rows.size]
    # bmat needs each block row/column to have at least one known shape
    mat = sp.bmat(grid, format="csc")
    blocks = list(zip(["velocity", "rho", "xi", "lam"], sizes))
    system = SaddleSystem(blocks, mat, n_primal=dofs.size + ct.size)
    return PatchSystem(patch, system, dofs, rows)


@dataclass
class BasisFunction:
    """Velocity, local pressure and multipliers of one basis problem.

    Velocity values are stored on the patch unknowns ``dofs`` (global CR
    numbering), pressures on ``patch.fine_triangles``, ``rho`` on
    ``patch.coarse_triangles`` and ``lam`` on the face rows ``face_rows``.
    """

    face: int
    component: int
    ell: object
    patch: object
    dofs: np.ndarray
    velocity: np.ndarray
    xi: np.ndarray
    rho: np.ndarray
    lam: np.ndarray
    face_rows: np.ndarray

    def velocity_vector(self, n_dofs):
        v = np.zeros(n_dofs)
        v[self.dofs] = self.velocity
        return v

    def xi_vector(self, n_triangles):
        q = np.zeros(n_triangles)
        q[self.patch.fine_triangles] = self.xi
        return q

    def lam_entry(self, row):
        """Multiplier of global face row ``row`` (zero if outside the patch)."""
        pos = np.flatnonzero(self.face_rows == row)
        return float(self.lam[pos[0]]) if pos.size else 0.0

    @property
    def own_row(self):
        m = np.searchsorted(self.patch.coarse_faces, self.face)
        return int(self.face_rows[2 * m + self.component])

    @property
    def own_multiplier(self):
        m = np.searchsorted(self.patch.coarse_faces, self.face)
        return float(self.lam[2 * m + self.component])


def _unpack(ps, x, face, component, ell):
    parts = ps.system.split(x)
    return BasisFunction(
        face=int(face), component=int(component), ell=ell, patch=ps.patch,
        dofs=ps.dofs, velocity=parts["velocity"].copy(), xi=parts["xi"].copy(),
        rho=parts["rho"].copy(), lam=parts["lam"].copy(), face_rows=ps.face_rows)


def solve_basis(ops, face, component, ell, patch_system=None):
    """Compute one basis function; ``ell=None`` gives the prototypical one."""
    ps = patch_system or assemble_basis_saddle(make_patch(ops, face, ell), ops)
    x = ps.factorization().solve(ps.rhs(face, component))
    return _unpack(ps, x, face, component, ell)


def _solve_face(ops, face, ell, shared=None):
    # ``shared``: the factorized global patch system, reused for every face
    ps = shared or assemble_basis_saddle(make_patch(ops, face, ell), ops)
    rhs = np.column_stack([ps.rhs(face, 0), ps.rhs(face, 1)])
    try:
        x = ps.factorization().solve(rhs)
    except SingularSystemError as exc:
        raise SingularSystemError(f"basis problem (face={face}, ell={ell}): {exc}",
                                  pivot=exc.pivot) from exc
    except SolverAccuracyError as exc:
        raise SolverAccuracyError(f"basis problem (face={face}, ell={ell}): {exc}",
                                  exc.residual) from exc
    return [_unpack(ps, x[:, j], face, j, ell) for j in range(2)]


def _pack(functions, name):
    """Move ``getattr(f, name)`` of all functions into one buffer of views."""
    ptr = np.zeros(len(functions) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([getattr(f, name).size for f in functions])
    buf = np.empty(ptr[-1])
    for i, f in enumerate(functions):
        buf[ptr[i]:ptr[i + 1]] = getattr(f, name)
        setattr(f, name, buf[ptr[i]:ptr[i + 1]])
    return buf, ptr


def _shared_csc(data, rows, ptr, shape):
    """CSC matrix that uses ``data`` without copying it."""
    # sorted rows: scipy never reorders data in place
    if not all(np.all(np.diff(rows[a:b]) > 0) for a, b in zip(ptr[:-1], ptr[1:])):
        raise AssertionError("basis unknowns must be sorted")
    mat = sp.csc_matrix((data, rows, ptr.astype(np.int32 if ptr[-1] < 2 ** 31 else np.int64)),
                        shape=shape, copy=False)
    mat.has_sorted_indices = True
    return mat


class CorrectorBasis:
    """All basis functions for one coarse mesh and patch order.

    Basis function ``i = 2 * m + j`` belongs to component ``j`` of the
    ``m``-th interior coarse edge, matching the row order of ``ops.C``.
    """

    def __init__(self, ops, ell, functions):
        self.ops = ops
        self.ell = ell
        self.functions = list(functions)
        # one buffer per field; the functions keep views into it and the
        # sparse matrices share it, so large patches are stored only once
        self._vel, self._vel_ptr = _pack(self.functions, "velocity")
        self._xiv, self._xi_ptr = _pack(self.functions, "xi")
        self._phi = None
        self._xi = None

    def __len__(self):
        return len(self.functions)

    def __getitem__(self, i):
        return self.functions[i]

    def __iter__(self):
        return iter(self.functions)

    @property
    def phi(self):
        """Sparse ``(n_dofs, N)`` matrix whose columns are the basis velocities."""
        if self._phi is None:
            rows = np.concatenate([f.dofs for f in self.functions]).astype(np.int32)
            self._phi = _shared_csc(self._vel, rows, self._vel_ptr,
                                    (self.ops.space.n_dofs, len(self)))
        return self._phi

    @property
    def xi(self):
        """Sparse ``(n_fine_triangles, N)`` matrix of local pressures."""
        if self._xi is None:
            rows = np.concatenate([f.patch.fine_triangles for f in self.functions]).astype(np.int32)
            self._xi = _shared_csc(self._xiv, rows, self._xi_ptr,
                                   (self.ops.fine.n_triangles, len(self)))
        return self._xi

    def rho_matrix(self):
        """Dense ``(n_coarse_triangles, N)`` coarse divergences."""
        out = np.zeros((self.ops.coarse.n_triangles, len(self)))
        for i, f in enumerate(self.functions):
            out[f.patch.coarse_triangles, i] = f.rho
        return out


def default_threads():
    env = os.environ.get("STOKES_LOD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def compute_basis(ops, ell, n_jobs=1):
    """Solve all ``2 * #interior coarse faces`` basis problems.

    Parameters
    ----------
    ops : FineOperators
    ell : int or None
        Patch order, ``None`` for global patches.
    n_jobs : int
        Worker threads; the result does not depend on it.
    """
    faces = ops.coarse.interior_edges
    if ell is GLOBAL and faces.size:
        # one system for all faces; the factorization dominates, so no threads
        shared = assemble_basis_saddle(make_patch(ops, faces[0], GLOBAL), ops)
        pairs = [_solve_face(ops, F, ell, shared) for F in faces]
    elif n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            pairs = list(pool.map(lambda F: _solve_face(ops, F, ell), faces))
    else:
        pairs = [_solve_face(ops, F, ell) for F in faces]
    logger.debug("computed %d basis functions (ell=%s)", 2 * len(faces), ell)
    return CorrectorBasis(ops, ell, [f for pair in pairs for f in pair])


def apply_Rl(v, basis):
    """``sum_(F,j) (integral of v . e_j over F) phi_(F,j)``."""
    return basis.phi @ (basis.ops.C @ np.asarray(v))


def measure_decay(bf, k, ops, norms):
    """Broken H1 seminorm of ``bf`` on the triangles outside ``N^k(F)``.

    ``k = 0`` excludes only the two coarse triangles sharing ``F``.
    """
    inside = face_patch_mask(ops.coarse, bf.face, k)
    outside = ~inside[ops.hier.fine_to_coarse_triangles()]
    v = bf.velocity_vector(ops.space.n_dofs)
    return norms.broken_h1(v, triangles=outside)


def localization_error(global_basis, local_basis, norms):
    """Largest broken H1 distance between corresponding basis functions."""
    if len(global_basis) != len(local_basis):
        raise DomainError("bases have different sizes")
    n = global_basis.ops.space.n_dofs
    worst = 0.0
    for g, loc in zip(global_basis, local_basis):
        diff = g.velocity_vector(n) - loc.velocity_vector(n)
        worst = max(worst, norms.broken_h1(diff))
    return worst


def basis_diagnostics(bf, ops):
    """Residuals of the defining properties of one basis function.

    Returns
    -------
    dict
        ``constraint``: max abs deviation of the patch face integrals from
        the unit vector; ``outside_faces``: max abs face integral over
        faces not inside the patch; ``divergence``: max deviation of the fine
        divergence from ``rho`` relative to the largest gradient entry;
        ``xi_average``: max abs coarse average of ``xi``; ``energy``:
        relative gap in ``a(phi, phi) = -lam_(F, j)``.
    """
    n = ops.space.n_dofs
    v = bf.velocity_vector(n)
    face_int = ops.C @ v
    target = np.zeros_like(face_int)
    target[bf.own_row] = 1.0
    inside = np.zeros(face_int.size, dtype=bool)
    inside[bf.face_rows] = True
    div = ops.space.elementwise_divergence(v)
    grads = ops.space.elementwise_gradients(v)
    parent = ops.hier.fine_to_coarse_triangles()
    rho_fine = np.zeros(ops.coarse.n_triangles)
    rho_fine[bf.patch.coarse_triangles] = bf.rho
    within = np.zeros(ops.fine.n_triangles, dtype=bool)
    within[bf.patch.fine_triangles] = True
    div_dev = np.abs(div - np.where(within, rho_fine[parent], 0.0)).max()
    xi = bf.xi_vector(ops.fine.n_triangles)
    xi_avg = (ops.M @ xi) / ops.coarse.areas
    energy = float(v @ (ops.A @ v))
    return {
        "constraint": float(np.abs(face_int - target)[inside].max()),
        "outside_faces": float(np.abs(face_int[~inside]).max()) if (~inside).any() else 0.0,
        "divergence": float(div_dev / np.abs(grads).max()),
        "xi_average": float(np.abs(xi_avg).max()),
        "xi_scale": float(np.abs(xi).max()),
        "energy": abs(energy + bf.own_multiplier) / energy,
    }


def export_basis(basis, directory):
    """Write one ``index value`` file per function and a manifest."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "manifest.txt"), "w") as man:
        man.write("file face component ell patch_coarse_triangles\n")
        for i, f in enumerate(basis):
            name = f"phi_{i:05d}.txt"
            with open(os.path.join(directory, name), "w") as fh:
                for d, val in zip(f.dofs, f.velocity):
                    fh.write(f"{d} {val:.17g}\n")
            ell = "global" if f.ell is GLOBAL else f.ell
            man.write(f"{name} {f.face} {f.component} {ell} {f.patch.coarse_triangles.size}\n")


def load_basis_vectors(directory, n_dofs):
    """Read exported velocities back as a sparse ``(n_dofs, N)`` matrix."""
    with open(os.path.join(directory, "manifest.txt")) as man:
        names = [line.split()[0] for line in man.readlines()[1:]]
    cols = []
    for name in names:
        data = np.loadtxt(os.path.join(directory, name), ndmin=2)
        v = np.zeros(n_dofs)
        v[data[:, 0].astype(np.int64)] = data[:, 1]
        cols.append(sp.csc_matrix(v[:, None]))
    return sp.hstack(cols, format="csc")

"""Crouzeix-Raviart velocities and piecewise constant pressures on the fine mesh.

Velocity unknowns live on interior fine edges (homogeneous Dirichlet data is
imposed by dropping boundary edges).  Unknown ``2 * k + j`` is component
``j`` at the ``k``-th interior edge, interior edges taken in global edge
order.  The scalar basis function attached to the edge opposite vertex ``i``
of a triangle is ``1 - 2 * lambda_i``, so its gradient is ``-2 grad lambda_i``
and its value at the three edge midpoints of the triangle is the Kronecker
delta.
"""
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .exceptions import DomainError

# three-point Gauss-Legendre rule on [0, 1]
_GL_T = np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


def barycentric_gradients(mesh):
    """Gradients of the barycentric coordinates, shape ``(T, 3, 2)``."""
    p = mesh.vertices[mesh.triangles]
    area2 = 2.0 * mesh.areas
    grads = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        a = p[:, (i + 1) % 3]
        b = p[:, (i + 2) % 3]
        grads[:, i, 0] = (a[:, 1] - b[:, 1]) / area2
        grads[:, i, 1] = (b[:, 0] - a[:, 0]) / area2
    return grads


class CRSpace:
    """Vector valued Crouzeix-Raviart space with zero boundary values.

    Parameters
    ----------
    mesh : Mesh
        The fine mesh.

    Attributes
    ----------
    edges : ndarray
        Global indices of the interior edges carrying unknowns.
    edge_dof : ndarray
        For each mesh edge its interior index, ``-1`` on the boundary.
    tri_dofs : ndarray, shape (T, 3)
        Interior index of each local edge, ``-1`` for boundary edges.
    grads : ndarray, shape (T, 3, 2)
        Gradients of the local scalar basis functions.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.edges = mesh.interior_edges
        self.edge_dof = -np.ones(mesh.n_edges, dtype=np.int64)
        self.edge_dof[self.edges] = np.arange(self.edges.size)
        self.tri_dofs = self.edge_dof[mesh.triangle_edges]
        self.grads = -2.0 * barycentric_gradients(mesh)
        self.areas = mesh.areas

    @property
    def n_edges(self):
        return self.edges.size

    @property
    def n_dofs(self):
        return 2 * self.edges.size

    def dof(self, edge, component):
        """Global unknown index of ``component`` at mesh edge ``edge``."""
        k = self.edge_dof[edge]
        return np.where(k >= 0, 2 * k + component, -1)

    def mass_diagonal(self):
        """Diagonal of the scalar CR mass matrix (midpoint rule is exact)."""
        m = np.zeros(self.n_edges)
        w = np.repeat(self.areas / 3.0, 3)
        k = self.tri_dofs.ravel()
        np.add.at(m, k[k >= 0], w[k >= 0])
        return np.repeat(m, 2)

    def interpolate(self, g):
        """CR interpolant (edge means) of a vector field ``g(x, y) -> (n, 2)``."""
        verts = self.mesh.vertices[self.mesh.edges[self.edges]]
        vals = np.zeros((self.n_edges, 2))
        for t, w in zip(_GL_T, _GL_W):
            pts = (1 - t) * verts[:, 0] + t * verts[:, 1]
            vals += w * np.asarray(g(pts[:, 0], pts[:, 1]), dtype=float).reshape(-1, 2)
        return vals.ravel()

    def _local_values(self, v):
        """Local unknowns per triangle, shape ``(T, 3, 2)``, zero on the boundary."""
        v = np.asarray(v).reshape(-1, 2)
        k = self.tri_dofs
        out = np.where((k >= 0)[..., None], v[np.maximum(k, 0)], 0.0)
        return out

    def elementwise_gradients(self, v):
        """Broken gradient ``G[t, j, d] = d v_j / d x_d`` on each triangle."""
        loc = self._local_values(v)
        return np.einsum("tij,tid->tjd", loc, self.grads)

    def elementwise_divergence(self, v):
        g = self.elementwise_gradients(v)
        return g[:, 0, 0] + g[:, 1, 1]

    def barycenter_values(self, v):
        """Values at triangle barycentres (mean of the three midpoint values)."""
        return self._local_values(v).mean(axis=1)


def _expand_vector(rows, cols, vals):
    """Duplicate scalar entries for both velocity components."""
    return (np.concatenate([2 * rows, 2 * rows + 1]),
            np.concatenate([2 * cols, 2 * cols + 1]),
            np.concatenate([vals, vals]))


def assemble_velocity_form(space, nu, sigma=None):
    """Matrix of ``(nu grad u, grad v) + (sigma u, v)`` on the CR space.

    Parameters
    ----------
    space : CRSpace
    nu, sigma : array_like or PiecewiseConstantField
        Element values on the fine mesh; ``sigma`` defaults to zero.

    Raises
    ------
    DomainError
        If a viscosity value is not positive or shapes do not match.
    """
    T = space.mesh.n_triangles
    nu = _element_values(nu, T, "nu")
    sigma = np.zeros(T) if sigma is None else _element_values(sigma, T, "sigma")
    if np.any(nu <= 0):
        raise DomainError("viscosity must be positive")
    if np.any(sigma < 0):
        raise DomainError("reaction coefficient must be non-negative")
    g = space.grads
    local = np.einsum("tid,tjd->tij", g, g) * (nu * space.areas)[:, None, None]
    local += np.eye(3)[None] * (sigma * space.areas / 3.0)[:, None, None]
    k = space.tri_dofs
    rows = np.broadcast_to(k[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(k[:, None, :], local.shape).ravel()
    keep = (rows >= 0) & (cols >= 0)
    r, c, v = _expand_vector(rows[keep], cols[keep], local.ravel()[keep])
    n = space.n_dofs
    return sp.csr_matrix((v, (r, c)), shape=(n, n))


def unit_stiffness(space):
    """Broken Laplacian with unit coefficient."""
    return assemble_velocity_form(space, np.ones(space.mesh.n_triangles))


def assemble_divergence(space):
    """Matrix of ``b(u, q) = -(q, div u)`` with rows indexed by fine triangles."""
    T = space.mesh.n_triangles
    k = space.tri_dofs
    rows = np.repeat(np.arange(T), 3)
    vals = -space.grads * space.areas[:, None, None]  # (T, 3, 2)
    keep = k.ravel() >= 0
    r = np.concatenate([rows[keep], rows[keep]])
    c = np.concatenate([2 * k.ravel()[keep], 2 * k.ravel()[keep] + 1])
    v = np.concatenate([vals[..., 0].ravel()[keep], vals[..., 1].ravel()[keep]])
    return sp.csr_matrix((v, (r, c)), shape=(T, space.n_dofs))


def assemble_coarse_average(hier, coarse_level=None, fine_level=None):
    """``(M chi)_K = integral of chi over K`` for fine piecewise constants ``chi``."""
    coarse_level = hier.coarse_level if coarse_level is None else coarse_level
    fine_level = hier.fine_level if fine_level is None else fine_level
    parent = hier.fine_to_coarse_triangles(coarse_level, fine_level)
    fine = hier.meshes[fine_level]
    return sp.csr_matrix((fine.areas, (parent, np.arange(fine.n_triangles))),
                         shape=(hier.meshes[coarse_level].n_triangles, fine.n_triangles))


def assemble_face_averages(space, hier, coarse_level=None):
    """Face integrals of each velocity component over coarse interior edges.

    Row ``2 * m + j`` belongs to component ``j`` on the ``m``-th interior
    coarse edge.  CR traces are linear on each fine edge, so the midpoint
    unknown times the fine edge length is the exact integral.
    """
    coarse_level = hier.coarse_level if coarse_level is None else coarse_level
    coarse = hier.meshes[coarse_level]
    faces = coarse.interior_edges
    fine_edges = hier.coarse_to_fine_edges(coarse_level, space.mesh.level)[faces]
    lengths = space.mesh.edge_lengths[fine_edges]
    k = space.edge_dof[fine_edges]
    assert np.all(k >= 0)
    rows = np.repeat(np.arange(faces.size), fine_edges.shape[1])
    r, c, v = _expand_vector(rows, k.ravel(), lengths.ravel())
    return sp.csr_matrix((v, (r, c)), shape=(2 * faces.size, space.n_dofs))


def assemble_rhs(space, f):
    """Load vector ``(f, phi)`` by the edge midpoint rule on each triangle.

    Parameters
    ----------
    f : callable
        ``f(x, y)`` returning an array of shape ``(n, 2)``.
    """
    mid = space.mesh.edge_midpoints[space.edges]
    vals = np.asarray(f(mid[:, 0], mid[:, 1]), dtype=float).reshape(-1, 2)
    return space.mass_diagonal() * vals.ravel()


def l2_projection_coarse(q, hier, coarse_level=None):
    """Coarse element averages of a fine piecewise constant function."""
    coarse_level = hier.coarse_level if coarse_level is None else coarse_level
    M = assemble_coarse_average(hier, coarse_level)
    return (M @ q) / hier.meshes[coarse_level].areas


def inject(qc, hier, coarse_level=None):
    """Coarse piecewise constant viewed on the fine mesh."""
    coarse_level = hier.coarse_level if coarse_level is None else coarse_level
    return np.asarray(qc)[hier.fine_to_coarse_triangles(coarse_level)]


@dataclass
class Norms:
    """Exact broken H1 seminorm and L2 norm on a CR space."""

    space: object

    def __post_init__(self):
        self._mass = self.space.mass_diagonal()

    def broken_h1(self, v, triangles=None):
        g = self.space.elementwise_gradients(v)
        e = (g ** 2).sum(axis=(1, 2)) * self.space.areas
        if triangles is not None:
            e = e[triangles]
        return float(np.sqrt(e.sum()))

    def l2(self, v):
        v = np.asarray(v)
        return float(np.sqrt(np.dot(self._mass * v, v)))

    def p0_l2(self, q, areas=None):
        """L2 norm of a piecewise constant on the fine mesh (or given areas)."""
        areas = self.space.areas if areas is None else areas
        return float(np.sqrt(np.dot(areas, np.asarray(q) ** 2)))


def norms(space):
    return Norms(space)


def _element_values(field, n, name):
    values = np.asarray(getattr(field, "values", field), dtype=float)
    if values.shape != (n,):
        raise DomainError(f"{name} has {values.size} values, mesh has {n} triangles")
    return values


@dataclass
class FineOperators:
    """Global operators shared by all patch problems.

    Attributes
    ----------
    A : velocity form, B : divergence, C : coarse face integrals,
    M : coarse averages of fine piecewise constants.
    """

    hier: object
    space: CRSpace
    nu: np.ndarray
    sigma: np.ndarray
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    M: sp.csr_matrix

    @property
    def coarse(self):
        return self.hier.coarse

    @property
    def fine(self):
        return self.hier.fine


def assemble_operators(hier, nu, sigma=None):
    """Assemble ``A, B, C, M`` for the coarse/fine pair of ``hier``."""
    space = CRSpace(hier.fine)
    T = hier.fine.n_triangles
    nu = _element_values(nu, T, "nu")
    sigma = np.zeros(T) if sigma is None else _element_values(sigma, T, "sigma")
    return FineOperators(
        hier=hier, space=space, nu=nu, sigma=sigma,
        A=assemble_velocity_form(space, nu, sigma),
        B=assemble_divergence(space),
        C=assemble_face_averages(space, hier),
        M=assemble_coarse_average(hier),
    )


def export_matrix_market(mat, path, comment=""):
    scipy.io.mmwrite(path, sp.coo_matrix(mat), comment=comment)

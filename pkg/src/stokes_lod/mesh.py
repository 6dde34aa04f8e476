"""Triangle meshes of the unit square, red refinement hierarchies and patches.

All vertices of the meshes produced here are dyadic rationals.  Each mesh
keeps integer vertex coordinates on the grid of spacing ``2**-level`` so that
geometric queries (which fine edge lies on which coarse edge, which fine
triangle lies in which coarse triangle) are answered combinatorially and
exactly, never with floating point tolerances.

Examples
--------
>>> from stokes_lod.mesh import build_hierarchy, build_patch
>>> hier = build_hierarchy(1, 3)
>>> hier.coarse.n_triangles, hier.fine.n_triangles
(8, 128)
>>> patch = build_patch(hier, hier.coarse.interior_edges[0], 1)
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import DomainError, ResourceError

#: Finest level accepted by :func:`build_hierarchy` unless overridden.
MAX_LEVEL = 10


def _frozen(a, dtype=np.int64):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _edge_table(triangles):
    """Unique sorted edges and the triangle->edge incidence.

    Local edge ``i`` of a triangle is the edge opposite its vertex ``i``.
    """
    t = triangles
    local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)  # (T,3,2)
    pairs = local.reshape(-1, 2)
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    edges, inverse = np.unique(np.stack([lo, hi], axis=1), axis=0, return_inverse=True)
    tri_edges = inverse.reshape(-1, 3)
    signs = np.where(pairs[:, 0] < pairs[:, 1], 1, -1).reshape(-1, 3)
    return edges, tri_edges, signs


def _edge_triangles(tri_edges, n_edges):
    adj = -np.ones((n_edges, 2), dtype=np.int64)
    flat = tri_edges.ravel()
    owner = np.repeat(np.arange(tri_edges.shape[0]), 3)
    order = np.lexsort((owner, flat))
    flat, owner = flat[order], owner[order]
    first = np.ones(flat.size, dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    adj[flat[first], 0] = owner[first]
    adj[flat[~first], 1] = owner[~first]
    return adj


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of the unit square.

    Attributes
    ----------
    level : int
        Refinement depth; the mesh is ``T_{2^-level}``.
    ivertices : ndarray of int, shape (V, 2)
        Vertex coordinates multiplied by ``2**level``.
    triangles : ndarray of int, shape (T, 3)
        Counterclockwise vertex triples.
    edges : ndarray of int, shape (E, 2)
        Sorted vertex pairs, ordered lexicographically.
    triangle_edges : ndarray of int, shape (T, 3)
        Edge opposite each local vertex.
    triangle_edge_signs : ndarray of int, shape (T, 3)
        ``+1`` if the counterclockwise traversal of the triangle runs along
        the edge from its lower to its higher vertex index.
    edge_triangles : ndarray of int, shape (E, 2)
        Adjacent triangles, ``-1`` in the second column on the boundary.
    """

    level: int
    ivertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False)
    triangle_edges: np.ndarray = field(init=False)
    triangle_edge_signs: np.ndarray = field(init=False)
    edge_triangles: np.ndarray = field(init=False)

    def __post_init__(self):
        ivert = _frozen(self.ivertices)
        tris = _frozen(self.triangles)
        edges, tri_edges, signs = _edge_table(tris)
        object.__setattr__(self, "ivertices", ivert)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "triangle_edges", _frozen(tri_edges))
        object.__setattr__(self, "triangle_edge_signs", _frozen(signs))
        object.__setattr__(self, "edge_triangles",
                           _frozen(_edge_triangles(tri_edges, edges.shape[0])))

    @property
    def n_vertices(self):
        return self.ivertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def vertices(self):
        return self.ivertices / float(2 ** self.level)

    @property
    def h(self):
        """Side length of the squares formed by joining opposing triangles."""
        return 2.0 ** -self.level

    @property
    def areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def edge_midpoints(self):
        return self.vertices[self.edges].mean(axis=1)

    @property
    def edge_lengths(self):
        d = np.diff(self.vertices[self.edges], axis=1)[:, 0]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def boundary_mask(self):
        return self.edge_triangles[:, 1] < 0

    @property
    def interior_edges(self):
        return np.flatnonzero(~self.boundary_mask)

    def vertex_triangle_incidence(self):
        """Sparse boolean (T, V) incidence matrix."""
        T = self.n_triangles
        rows = np.repeat(np.arange(T), 3)
        data = np.ones(3 * T, dtype=bool)
        return sp.csr_matrix((data, (rows, self.triangles.ravel())),
                             shape=(T, self.n_vertices))

    def check(self):
        """Assert conformity, positive areas summing to one, and Euler's relation."""
        counts = np.bincount(self.triangle_edges.ravel(), minlength=self.n_edges)
        assert np.all((counts == 1) | (counts == 2)), "non-conforming edge"
        assert np.array_equal(counts == 1, self.boundary_mask)
        areas = self.areas
        assert np.all(areas > 0), "non-positive triangle area"
        assert abs(areas.sum() - 1.0) < 1e-12
        assert self.n_vertices - self.n_edges + self.n_triangles == 1


def build_initial_mesh():
    """Unit square split by the diagonal from (0, 0) to (1, 1)."""
    ivert = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(0, ivert, tris)


def _refine(mesh):
    V = mesh.n_vertices
    t = mesh.triangles
    m = V + mesh.triangle_edges  # midpoint vertex opposite local vertex i
    ivert = np.vstack([2 * mesh.ivertices, mesh.ivertices[mesh.edges].sum(axis=1)])
    children = np.stack([
        np.stack([t[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], t[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], t[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ], axis=1).reshape(-1, 3)
    fine = Mesh(mesh.level + 1, ivert, children)

    # each coarse edge (a, b) with midpoint c splits into (a, c) and (b, c)
    n_fine_vertices = fine.n_vertices
    keys = fine.edges[:, 0] * n_fine_vertices + fine.edges[:, 1]
    mid = V + np.arange(mesh.n_edges)
    halves = np.stack([mesh.edges[:, 0] * n_fine_vertices + mid,
                       mesh.edges[:, 1] * n_fine_vertices + mid], axis=1)
    edge_children = np.searchsorted(keys, halves)
    assert np.array_equal(keys[edge_children], halves)
    return fine, edge_children


def refine_red(mesh):
    """Split every triangle into four congruent children.

    Child ``c`` of triangle ``t`` receives index ``4 * t + c``; children
    0, 1, 2 sit at the parent's vertices 0, 1, 2 and child 3 is the
    middle triangle.
    """
    return _refine(mesh)[0]


class MeshHierarchy:
    """Nested meshes ``T_{2^0}, ..., T_{2^-fine_level}``.

    Parameters
    ----------
    meshes : list of Mesh
        Meshes ordered from level 0 upwards.
    edge_children : list of ndarray
        ``edge_children[k]`` maps edges of level ``k`` to the two edges of
        level ``k + 1`` tiling them.
    coarse_level, fine_level : int
        Levels used as ``T_H`` and ``T_h``.
    """

    def __init__(self, meshes, edge_children, coarse_level, fine_level):
        self.meshes = list(meshes)
        self._edge_children = list(edge_children)
        self.coarse_level = coarse_level
        self.fine_level = fine_level

    @property
    def coarse(self):
        return self.meshes[self.coarse_level]

    @property
    def fine(self):
        return self.meshes[self.fine_level]

    def _check_levels(self, coarse, fine):
        if not 0 <= coarse <= fine < len(self.meshes):
            raise DomainError(f"invalid level pair ({coarse}, {fine})")
        return fine - coarse

    def fine_to_coarse_triangles(self, coarse=None, fine=None):
        """Index of the containing ``coarse``-level triangle for each fine triangle."""
        coarse = self.coarse_level if coarse is None else coarse
        fine = self.fine_level if fine is None else fine
        r = self._check_levels(coarse, fine)
        return np.arange(self.meshes[fine].n_triangles) // 4 ** r

    def coarse_to_fine_triangles(self, coarse=None, fine=None):
        """Array of shape ``(T_coarse, 4**r)`` listing descendants."""
        coarse = self.coarse_level if coarse is None else coarse
        fine = self.fine_level if fine is None else fine
        r = self._check_levels(coarse, fine)
        return np.arange(self.meshes[fine].n_triangles).reshape(-1, 4 ** r)

    def coarse_to_fine_edges(self, coarse=None, fine=None):
        """Array of shape ``(E_coarse, 2**r)`` listing fine edges on each coarse edge."""
        coarse = self.coarse_level if coarse is None else coarse
        fine = self.fine_level if fine is None else fine
        self._check_levels(coarse, fine)
        out = np.arange(self.meshes[coarse].n_edges)[:, None]
        for k in range(coarse, fine):
            out = self._edge_children[k][out].reshape(out.shape[0], -1)
        return out


def build_hierarchy(coarse_level, fine_level, max_level=MAX_LEVEL):
    """Refine the initial mesh ``fine_level`` times.

    Raises
    ------
    DomainError
        If the levels are not ordered ``0 <= coarse_level <= fine_level``.
    ResourceError
        If ``fine_level`` exceeds ``max_level``.
    """
    if not 0 <= coarse_level <= fine_level:
        raise DomainError(f"need 0 <= coarse_level <= fine_level, got {coarse_level}, {fine_level}")
    if fine_level > max_level:
        raise ResourceError(
            f"fine level {fine_level} exceeds the memory guard max_level={max_level} "
            f"({2 * 4 ** fine_level} triangles)")
    meshes = [build_initial_mesh()]
    children = []
    for _ in range(fine_level):
        fine, ch = _refine(meshes[-1])
        meshes.append(fine)
        children.append(_frozen(ch))
    return MeshHierarchy(meshes, children, coarse_level, fine_level)


def neighborhood(mesh, mask, order=1):
    """Vertex-neighbourhood closure of a triangle set, applied ``order`` times.

    Parameters
    ----------
    mesh : Mesh
    mask : ndarray of bool, shape (T,)
    order : int

    Returns
    -------
    ndarray of bool
    """
    inc = mesh.vertex_triangle_incidence()
    mask = np.asarray(mask, dtype=bool).copy()
    for _ in range(order):
        touched = (inc.T @ mask.astype(np.int64)) > 0
        grown = (inc @ touched.astype(np.int64)) > 0
        if np.array_equal(grown, mask):
            break
        mask = grown
    return mask


def face_patch_mask(mesh, face, order):
    """Triangles of ``N^order(F)``; ``order == 0`` gives the two triangles sharing ``F``."""
    if mesh.boundary_mask[face]:
        raise DomainError(f"face {face} lies on the boundary")
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[mesh.edge_triangles[face]] = True
    return neighborhood(mesh, mask, order)


@dataclass(frozen=True, eq=False)
class Patch:
    """Patch ``N^ell(F)`` together with its fine submesh.

    All index arrays hold global indices in increasing order; the position
    of an entry is its local index.

    Attributes
    ----------
    face : int
        Coarse interior edge the patch is centred on.
    ell : int
        Patch order.
    coarse_triangles : ndarray
    fine_triangles : ndarray
    fine_edges : ndarray
        Fine edges whose adjacent triangles both lie in the patch.
    boundary_fine_edges : ndarray
        Fine edges with exactly one adjacent triangle in the patch.
    coarse_faces : ndarray
        Coarse interior edges with both adjacent coarse triangles in the patch.
    is_global : bool
        Whether the patch covers the whole domain.
    """

    face: int
    ell: int
    coarse_triangles: np.ndarray
    fine_triangles: np.ndarray
    fine_edges: np.ndarray
    boundary_fine_edges: np.ndarray
    coarse_faces: np.ndarray
    is_global: bool

    def key(self):
        """Hashable identifier of the patch geometry (independent of ``face``)."""
        return self.coarse_triangles.tobytes()

    @staticmethod
    def local_index(global_ids, values):
        """Positions of ``values`` within the sorted array ``global_ids``."""
        idx = np.searchsorted(global_ids, values)
        idx = np.minimum(idx, len(global_ids) - 1)
        return np.where(global_ids[idx] == values, idx, -1)


def build_patch(hier, face, ell):
    """Construct ``N^ell(F)`` on the coarse mesh of ``hier``.

    Raises
    ------
    DomainError
        If ``face`` is a boundary edge or ``ell < 1``.
    """
    if ell < 1:
        raise DomainError(f"patch order must be >= 1, got {ell}")
    coarse = hier.coarse
    fine = hier.fine
    cmask = face_patch_mask(coarse, face, ell)
    ctris = np.flatnonzero(cmask)
    fmask = cmask[hier.fine_to_coarse_triangles()]

    adj = fine.edge_triangles
    inside = fmask[adj[:, 0]] & (adj[:, 1] >= 0) & fmask[np.maximum(adj[:, 1], 0)]
    touching = fmask[adj[:, 0]] | ((adj[:, 1] >= 0) & fmask[np.maximum(adj[:, 1], 0)])

    cadj = coarse.edge_triangles
    cfaces = np.flatnonzero((cadj[:, 1] >= 0) & cmask[cadj[:, 0]] & cmask[np.maximum(cadj[:, 1], 0)])
    return Patch(
        face=int(face), ell=int(ell),
        coarse_triangles=_frozen(ctris),
        fine_triangles=_frozen(np.flatnonzero(fmask)),
        fine_edges=_frozen(np.flatnonzero(inside)),
        boundary_fine_edges=_frozen(np.flatnonzero(touching & ~inside)),
        coarse_faces=_frozen(cfaces),
        is_global=bool(cmask.all()),
    )


def save_mesh(mesh, path):
    """Write ``vertices N triangles T`` followed by coordinates and triples."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def load_mesh(path, level):
    """Read a mesh written by :func:`save_mesh`.

    ``level`` fixes the integer grid; coordinates must be multiples of
    ``2**-level``.
    """
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "vertices" or header[2] != "triangles":
            raise ValueError(f"{path}: malformed header {header!r}")
        n_v, n_t = int(header[1]), int(header[3])
        data = fh.read().split()
    coords = np.array(data[:2 * n_v], dtype=float).reshape(n_v, 2)
    tris = np.array(data[2 * n_v:2 * n_v + 3 * n_t], dtype=np.int64).reshape(n_t, 3)
    scaled = coords * 2 ** level
    ivert = np.rint(scaled).astype(np.int64)
    if not np.array_equal(ivert, scaled):
        raise ValueError(f"{path}: coordinates are not on the level-{level} grid")
    return Mesh(level, ivert, tris)

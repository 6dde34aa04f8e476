"""Piecewise constant coefficients and the random multiscale viscosity.

Random values come from NumPy's counter-based Philox4x32-10 generator keyed
by the seed.  The ``i``-th value drawn belongs to element ``i``, so a field
depends only on ``(seed, level)`` and the bit stream is stable across
platforms and NumPy releases (NumPy guarantees stream compatibility for its
bit generators).
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DomainError


@dataclass(frozen=True, eq=False)
class PiecewiseConstantField:
    """One scalar per triangle of the mesh at ``level``."""

    level: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def min(self):
        return float(self.values.min())

    @property
    def max(self):
        return float(self.values.max())


@dataclass(frozen=True)
class Parabola:
    """The curve ``y = a (x - x0)**2 + y0`` for ``x`` in ``[x_min, x_max]``."""

    a: float = 2.0
    x0: float = 0.5
    y0: float = 0.25
    x_min: float = 0.0
    x_max: float = 1.0

    def __call__(self, x):
        return self.a * (x - self.x0) ** 2 + self.y0

    def distance(self, points, n_samples=2 ** 12, n_refine=60):
        """Euclidean distance from each point to the curve.

        Coarse search over ``n_samples + 1`` curve points, followed by a
        golden-section refinement within the neighbouring sample interval.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        xs = np.linspace(self.x_min, self.x_max, n_samples + 1)
        curve = np.stack([xs, self(xs)], axis=1)
        _, nearest = cKDTree(curve).query(points)
        lo = xs[np.maximum(nearest - 1, 0)]
        hi = xs[np.minimum(nearest + 1, n_samples)]

        def d2(x):
            return (points[:, 0] - x) ** 2 + (points[:, 1] - self(x)) ** 2

        g = (np.sqrt(5.0) - 1.0) / 2.0
        c = hi - g * (hi - lo)
        d = lo + g * (hi - lo)
        fc, fd = d2(c), d2(d)
        for _ in range(n_refine):
            left = fc < fd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
            c_new = hi - g * (hi - lo)
            d_new = lo + g * (hi - lo)
            c, d = c_new, d_new
            fc, fd = d2(c), d2(d)
        best = np.minimum(np.minimum(fc, fd), d2(xs[nearest]))
        return np.sqrt(best)


@dataclass(frozen=True)
class RandomCoefficientSpec:
    """Parameters of the random viscosity with a parabolic inclusion.

    Attributes
    ----------
    eps_level : int
        Carrier mesh is ``T_eps`` with ``eps = 2**-eps_level``.
    seed : int
        Key of the Philox generator (unsigned 64-bit).
    """

    eps_level: int
    seed: int = 0
    low: float = 0.1
    high: float = 1.0
    inclusion_value: float = 10.0
    inclusion_width: float = 4.0  # in units of eps
    parabola: Parabola = Parabola()

    @property
    def eps(self):
        return 2.0 ** -self.eps_level


def uniform_values(seed, n, low, high):
    """``n`` independent uniform draws in ``[low, high)``, element ``i`` from draw ``i``."""
    gen = np.random.Generator(np.random.Philox(key=int(seed) & (2 ** 64 - 1)))
    return low + (high - low) * gen.random(n)


def generate_multiscale_coefficient(spec, hier):
    """Random viscosity on ``T_eps``, set to the inclusion value near the parabola."""
    if spec.eps_level >= len(hier.meshes):
        raise DomainError(f"eps level {spec.eps_level} not in hierarchy")
    mesh = hier.meshes[spec.eps_level]
    values = uniform_values(spec.seed, mesh.n_triangles, spec.low, spec.high)
    dist = spec.parabola.distance(mesh.barycenters)
    values[dist < spec.inclusion_width * spec.eps] = spec.inclusion_value
    return PiecewiseConstantField(spec.eps_level, values)


def inject_to_fine(field, hier, fine_level=None):
    """Copy each element value to all descendants on ``fine_level``."""
    fine_level = hier.fine_level if fine_level is None else fine_level
    if fine_level < field.level:
        raise DomainError(f"cannot inject level {field.level} field to level {fine_level}")
    parent = hier.fine_to_coarse_triangles(field.level, fine_level)
    return PiecewiseConstantField(fine_level, field.values[parent])


def constant_field(mesh, c):
    if c < 0:
        raise DomainError(f"constant must be non-negative, got {c}")
    return PiecewiseConstantField(mesh.level, np.full(mesh.n_triangles, float(c)))


def save_field(field, path):
    with open(path, "w") as fh:
        fh.write(f"field level {field.level} count {len(field)}\n")
        for v in field.values:
            fh.write(f"{v:.17g}\n")


def load_field(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != "field" or header[1] != "level" or header[3] != "count":
            raise ValueError(f"{path}: malformed header {header!r}")
        values = np.array(fh.read().split(), dtype=float)
    if values.size != int(header[4]):
        raise ValueError(f"{path}: expected {header[4]} values, found {values.size}")
    return PiecewiseConstantField(int(header[2]), values)

"""Estimator-style wrapper around basis computation and the coarse solve."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cr_fem import assemble_operators
from .exceptions import DomainError
from .lod_basis import GLOBAL, apply_Rl, compute_basis
from .mesh import MAX_LEVEL, build_hierarchy
from .solver import solve_lod


def check_levels(coarse_level, fine_level):
    """Validate a coarse/fine level pair."""
    for name, v in (("coarse_level", coarse_level), ("fine_level", fine_level)):
        if not isinstance(v, (int, np.integer)) or v < 0:
            raise DomainError(f"{name} must be a non-negative integer, got {v!r}")
    if fine_level < coarse_level:
        raise DomainError(f"fine_level ({fine_level}) must not be below coarse_level ({coarse_level})")
    if fine_level > MAX_LEVEL:
        raise DomainError(f"fine_level {fine_level} exceeds the limit {MAX_LEVEL}")


def check_ell(ell):
    if ell is GLOBAL:
        return
    if not isinstance(ell, (int, np.integer)) or ell < 1:
        raise DomainError(f"ell must be a positive integer or None (global), got {ell!r}")


def check_coefficient(values, n_triangles, name="nu", positive=True):
    """Element values of a coefficient as a float vector of the right length."""
    values = np.asarray(getattr(values, "values", values), dtype=float)
    values = check_array(values.reshape(1, -1), ensure_all_finite=True).ravel()
    if values.size != n_triangles:
        raise DomainError(f"{name} has {values.size} values, the fine mesh has {n_triangles}")
    if positive and np.any(values <= 0):
        raise DomainError(f"{name} must be positive")
    if not positive and np.any(values < 0):
        raise DomainError(f"{name} must be non-negative")
    return values


def check_vectors(X, n):
    """2D float array with ``n`` columns; a single vector becomes one row."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = check_array(np.atleast_2d(X), ensure_all_finite=True)
    if X.shape[1] != n:
        raise DomainError(f"expected vectors of length {n}, got {X.shape[1]}")
    return X, single


class StokesLOD(BaseEstimator, TransformerMixin):
    """Multiscale Stokes solver with localized basis functions.

    Parameters
    ----------
    coarse_level : int
        Coarse mesh size ``H = 2**-coarse_level``.
    fine_level : int
        Fine mesh size ``h = 2**-fine_level``.
    ell : int or None
        Patch order; ``None`` uses the whole domain.
    n_jobs : int
        Threads for the basis computation.

    Attributes
    ----------
    hierarchy_ : MeshHierarchy
    operators_ : FineOperators
    basis_ : CorrectorBasis
    n_features_in_ : int
        Number of fine CR velocity unknowns.

    Examples
    --------
    >>> import numpy as np
    >>> from stokes_lod import StokesLOD
    >>> est = StokesLOD(coarse_level=1, fine_level=3, ell=1)
    >>> est = est.fit(np.ones(128))
    >>> len(est.basis_)
    16
    """

    def __init__(self, coarse_level=2, fine_level=5, ell=2, n_jobs=1):
        self.coarse_level = coarse_level
        self.fine_level = fine_level
        self.ell = ell
        self.n_jobs = n_jobs

    def fit(self, X, y=None, sigma=None):
        """Compute the basis for the viscosity ``X`` (one value per fine triangle).

        ``y`` is ignored.  ``sigma`` is an optional non-negative reaction
        coefficient.
        """
        check_levels(self.coarse_level, self.fine_level)
        check_ell(self.ell)
        hier = build_hierarchy(self.coarse_level, self.fine_level)
        T = hier.fine.n_triangles
        nu = check_coefficient(X, T)
        if sigma is not None:
            sigma = check_coefficient(sigma, T, name="sigma", positive=False)
        self.hierarchy_ = hier
        self.operators_ = assemble_operators(hier, nu, sigma)
        self.basis_ = compute_basis(self.operators_, self.ell, n_jobs=self.n_jobs)
        self.n_features_in_ = self.operators_.space.n_dofs
        return self

    def transform(self, X):
        """Apply the localized projection to fine CR velocity vectors (rows of ``X``)."""
        check_is_fitted(self, "basis_")
        V, single = check_vectors(X, self.n_features_in_)
        out = np.stack([apply_Rl(v, self.basis_) for v in V])
        return out[0] if single else out

    def solve(self, f):
        """Full solution for a load: a callable ``f(x, y) -> (n, 2)`` or a load vector."""
        check_is_fitted(self, "basis_")
        if callable(f):
            return solve_lod(self.basis_, f=f)
        load, _ = check_vectors(f, self.n_features_in_)
        if load.shape[0] != 1:
            raise DomainError("solve takes a single load vector")
        return solve_lod(self.basis_, load=load[0])

    def predict(self, X):
        """Fine velocities for the load vectors in the rows of ``X``."""
        check_is_fitted(self, "basis_")
        loads, single = check_vectors(X, self.n_features_in_)
        out = np.stack([solve_lod(self.basis_, load=b, postprocess=False).velocity for b in loads])
        return out[0] if single else out

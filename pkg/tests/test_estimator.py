import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stokes_lod import GLOBAL, StokesLOD
from stokes_lod.cr_fem import assemble_rhs
from stokes_lod.exceptions import DomainError

from conftest import rotation_force


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(0)
    return StokesLOD(coarse_level=1, fine_level=3, ell=1).fit(rng.uniform(0.5, 2.0, 128))


def test_params_roundtrip():
    est = StokesLOD(coarse_level=2, fine_level=4, ell=GLOBAL, n_jobs=2)
    assert est.get_params() == {"coarse_level": 2, "fine_level": 4, "ell": None, "n_jobs": 2}
    other = clone(est).set_params(ell=3)
    assert other.ell == 3 and est.ell is None


def test_fit_attributes(fitted):
    assert len(fitted.basis_) == 16
    assert fitted.n_features_in_ == fitted.operators_.space.n_dofs


def test_transform_is_projection(fitted):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((3, fitted.n_features_in_))
    once = fitted.transform(X)
    assert once.shape == X.shape
    np.testing.assert_allclose(fitted.transform(once), once, atol=1e-10)
    np.testing.assert_allclose(fitted.transform(X[0]), once[0])


def test_predict_matches_solve(fitted):
    load = assemble_rhs(fitted.operators_.space, rotation_force)
    sol = fitted.solve(rotation_force)
    np.testing.assert_allclose(fitted.predict(load), sol.velocity, atol=1e-14)
    np.testing.assert_allclose(fitted.solve(load).velocity, sol.velocity, atol=1e-14)
    both = fitted.predict(np.stack([load, 2 * load]))
    np.testing.assert_allclose(both[1], 2 * both[0], rtol=1e-10, atol=1e-15)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        StokesLOD().transform(np.zeros(4))


@pytest.mark.parametrize("params", [
    {"coarse_level": 3, "fine_level": 2},
    {"ell": 0},
    {"coarse_level": -1},
    {"fine_level": 11},
])
def test_invalid_params(params):
    with pytest.raises(DomainError):
        StokesLOD(**params).fit(np.ones(128))


def test_invalid_inputs(fitted):
    with pytest.raises(DomainError):
        StokesLOD(1, 3, 1).fit(np.ones(127))
    with pytest.raises(DomainError):
        StokesLOD(1, 3, 1).fit(-np.ones(128))
    with pytest.raises(ValueError):
        StokesLOD(1, 3, 1).fit(np.full(128, np.nan))
    with pytest.raises(DomainError):
        fitted.transform(np.zeros(5))

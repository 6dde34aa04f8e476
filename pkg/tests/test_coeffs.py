import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_lod.coeffs import (Parabola, PiecewiseConstantField, RandomCoefficientSpec,
                               constant_field, generate_multiscale_coefficient, inject_to_fine,
                               load_field, save_field, uniform_values)
from stokes_lod.exceptions import DomainError
from stokes_lod.mesh import build_hierarchy


@pytest.fixture(scope="module")
def hier():
    return build_hierarchy(1, 5)


def test_uniform_values_deterministic_and_bounded():
    a = uniform_values(3, 1000, 0.1, 1.0)
    b = uniform_values(3, 1000, 0.1, 1.0)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0.1 and a.max() < 1.0
    assert not np.array_equal(a, uniform_values(4, 1000, 0.1, 1.0))


def test_uniform_values_prefix_stable():
    # element i always takes draw i, independent of the mesh size
    np.testing.assert_array_equal(uniform_values(11, 50, 0, 1), uniform_values(11, 200, 0, 1)[:50])


def test_uniform_values_frozen():
    # guards against silent changes of the bit stream
    v = uniform_values(0, 3, 0.0, 1.0)
    gen = np.random.Generator(np.random.Philox(key=0))
    np.testing.assert_array_equal(v, gen.random(3))


def test_parabola_distance_on_curve():
    p = Parabola()
    x = np.linspace(0, 1, 17)
    pts = np.stack([x, p(x)], axis=1)
    np.testing.assert_allclose(p.distance(pts), 0.0, atol=1e-9)


def test_parabola_distance_vertex():
    p = Parabola()
    # straight below the vertex the nearest curve point is the vertex itself
    np.testing.assert_allclose(p.distance([[0.5, 0.0], [0.5, 0.2]]), [0.25, 0.05], rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_parabola_distance_brute_force(x, y):
    p = Parabola()
    xs = np.linspace(0, 1, 200001)
    brute = np.sqrt((xs - x) ** 2 + (p(xs) - y) ** 2).min()
    d = p.distance([[x, y]])[0]
    assert d <= brute + 1e-12
    assert d >= brute - 1e-5


def test_multiscale_coefficient(hier):
    spec = RandomCoefficientSpec(eps_level=4, seed=5)
    field = generate_multiscale_coefficient(spec, hier)
    mesh = hier.meshes[4]
    assert field.level == 4 and len(field) == mesh.n_triangles
    near = spec.parabola.distance(mesh.barycenters) < 4 * spec.eps
    assert near.any() and (~near).any()
    np.testing.assert_array_equal(field.values[near], 10.0)
    rest = field.values[~near]
    assert rest.min() >= 0.1 and rest.max() < 1.0
    again = generate_multiscale_coefficient(spec, hier)
    np.testing.assert_array_equal(field.values, again.values)


def test_multiscale_coefficient_bad_level(hier):
    with pytest.raises(DomainError):
        generate_multiscale_coefficient(RandomCoefficientSpec(eps_level=7), hier)


def test_inject_preserves_integral(hier):
    field = generate_multiscale_coefficient(RandomCoefficientSpec(eps_level=3, seed=1), hier)
    fine = inject_to_fine(field, hier)
    assert fine.level == 5
    np.testing.assert_allclose(fine.values @ hier.fine.areas, field.values @ hier.meshes[3].areas,
                               rtol=1e-14)
    # each fine value equals the value of the coarse triangle containing its barycentre
    coarse = hier.meshes[3]
    b = hier.fine.barycenters[::37]
    for t, pt in zip(range(0, hier.fine.n_triangles, 37), b):
        for K in range(coarse.n_triangles):
            v = coarse.vertices[coarse.triangles[K]]
            lam = np.linalg.solve(np.vstack([v.T, np.ones(3)]), np.append(pt, 1.0))
            if np.all(lam > 0):
                assert fine.values[t] == field.values[K]
                break


def test_inject_downwards_rejected(hier):
    with pytest.raises(DomainError):
        inject_to_fine(constant_field(hier.fine, 1.0), hier, fine_level=3)


def test_field_readonly_and_constant(hier):
    f = constant_field(hier.coarse, 2.5)
    assert f.min == f.max == 2.5
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(DomainError):
        constant_field(hier.coarse, -1.0)


def test_field_roundtrip(tmp_path):
    f = PiecewiseConstantField(2, uniform_values(9, 32, 0.1, 1.0))
    save_field(f, tmp_path / "f.txt")
    assert (tmp_path / "f.txt").read_text().startswith("field level 2 count 32\n")
    g = load_field(tmp_path / "f.txt")
    assert g.level == 2
    np.testing.assert_array_equal(g.values, f.values)


def test_field_bad_file(tmp_path):
    (tmp_path / "f.txt").write_text("field level 2 count 3\n1\n2\n")
    with pytest.raises(ValueError):
        load_field(tmp_path / "f.txt")

import numpy as np
import pytest
import scipy.linalg as sla

from stokes_lod.cr_fem import norms
from stokes_lod.exceptions import DomainError
from stokes_lod.lod_basis import (GLOBAL, apply_Rl, assemble_basis_saddle, basis_diagnostics,
                                  compute_basis, export_basis, load_basis_vectors,
                                  localization_error, make_patch, measure_decay, solve_basis)
from stokes_lod.mesh import build_hierarchy

from conftest import make_ops


@pytest.fixture(scope="module")
def bases(medium_ops):
    return {ell: compute_basis(medium_ops, ell) for ell in (1, 2, GLOBAL)}


def test_basis_count_small(small_ops):
    basis = compute_basis(small_ops, 1)
    assert len(basis) == 16
    assert basis.phi.shape == (small_ops.space.n_dofs, 16)


@pytest.mark.parametrize("coarse", [0, 1, 2, 3])
def test_basis_count_matches_euler(coarse):
    hier = build_hierarchy(coarse, coarse + 1)
    m = hier.coarse
    n_interior = m.n_edges - 4 * 2 ** coarse
    assert m.n_edges == m.n_vertices + m.n_triangles - 1
    ops = make_ops(coarse, coarse + 1, coarse)
    assert len(compute_basis(ops, 1)) == 2 * n_interior


def test_patch_system_blocks(medium_ops):
    face = medium_ops.coarse.interior_edges[7]
    patch = make_patch(medium_ops, face, 1)
    ps = assemble_basis_saddle(patch, medium_ops)
    sizes = dict(ps.system.blocks)
    assert sizes["velocity"] == 2 * patch.fine_edges.size
    assert sizes["rho"] == patch.coarse_triangles.size
    assert sizes["xi"] == patch.fine_triangles.size
    assert sizes["lam"] == 2 * patch.coarse_faces.size
    K = ps.system.matrix
    assert abs(K - K.T).max() < 1e-14
    outside = np.setdiff1d(medium_ops.coarse.interior_edges, patch.coarse_faces)
    with pytest.raises(DomainError):
        ps.rhs(outside[0], 0)


def test_global_patch_needs_no_pinning(small_ops):
    # Mxi = 0 already excludes the constant pressure
    face = small_ops.coarse.interior_edges[3]
    ps = assemble_basis_saddle(make_patch(small_ops, face, GLOBAL), small_ops)
    K = ps.system.matrix.toarray()
    assert np.linalg.matrix_rank(K) == K.shape[0]
    s = sla.svdvals(K)
    assert s[-1] / s[0] > 1e-12


@pytest.mark.parametrize("ell", [1, 2, GLOBAL])
def test_basis_invariants(medium_ops, bases, ell):
    for bf in bases[ell]:
        d = basis_diagnostics(bf, medium_ops)
        assert d["constraint"] <= 1e-9
        assert d["divergence"] <= 1e-9
        assert d["xi_average"] <= 1e-10
        assert d["energy"] <= 1e-9
        # support stays inside the patch
        assert np.all(np.isin(bf.dofs // 2, medium_ops.space.edge_dof[bf.patch.fine_edges]))


def test_energy_identity_explicit(medium_ops, bases):
    bf = bases[2][11]
    v = bf.velocity_vector(medium_ops.space.n_dofs)
    a = v @ (medium_ops.A @ v)
    assert a > 0
    assert abs(a + bf.own_multiplier) <= 1e-9 * a


def test_rl_is_projection(medium_ops, bases):
    for ell in (1, GLOBAL):
        basis = bases[ell]
        for i in (0, 5, len(basis) - 1):
            phi = basis.phi[:, i].toarray().ravel()
            np.testing.assert_allclose(apply_Rl(phi, basis), phi, atol=1e-10 * np.abs(phi).max())
        rng = np.random.default_rng(0)
        v = rng.standard_normal(medium_ops.space.n_dofs)
        once = apply_Rl(v, basis)
        twice = apply_Rl(once, basis)
        assert np.linalg.norm(twice - once) <= 1e-10 * np.linalg.norm(once)
    np.testing.assert_array_equal(apply_Rl(np.zeros(medium_ops.space.n_dofs), bases[1]), 0.0)


def test_rl_preserves_coarse_divergence(medium_ops, bases):
    # coarse element integrals of the divergence only depend on face integrals
    rng = np.random.default_rng(1)
    v = rng.standard_normal(medium_ops.space.n_dofs)
    indicator = medium_ops.M.copy()
    indicator.data[:] = 1.0
    div_integral = lambda w: indicator @ (medium_ops.B @ w)
    for ell in (1, GLOBAL):
        Rv = apply_Rl(v, bases[ell])
        np.testing.assert_allclose(div_integral(Rv), div_integral(v), atol=1e-12)


def _random_z_member(ops, rng):
    """Random fine CR vector whose divergence is constant on every coarse element."""
    M = ops.M.toarray()
    N = sla.null_space(M)  # fine P0 functions with zero coarse averages
    G = N.T @ ops.B.toarray()
    v = rng.standard_normal(ops.space.n_dofs)
    return v - G.T @ np.linalg.lstsq(G @ G.T, G @ v, rcond=None)[0]


def test_prototypical_orthogonality(small_ops):
    ops = small_ops
    basis = compute_basis(ops, GLOBAL)
    rng = np.random.default_rng(2)
    v = _random_z_member(ops, rng)
    div = ops.space.elementwise_divergence(v)
    parent = ops.hier.fine_to_coarse_triangles()
    for K in range(ops.coarse.n_triangles):
        assert np.ptp(div[parent == K]) < 1e-10 * np.abs(div).max()
    w = v - apply_Rl(v, basis)
    np.testing.assert_allclose(ops.C @ w, 0.0, atol=1e-12)
    aw = np.sqrt(w @ (ops.A @ w))
    for i in range(len(basis)):
        phi = basis.phi[:, i].toarray().ravel()
        aphi = np.sqrt(phi @ (ops.A @ phi))
        assert abs(phi @ (ops.A @ w)) <= 1e-8 * aphi * aw


def test_saturation_matches_global(small_ops):
    face = small_ops.coarse.interior_edges[2]
    glob = solve_basis(small_ops, face, 1, GLOBAL)
    big = solve_basis(small_ops, face, 1, 10)
    assert big.patch.is_global
    np.testing.assert_allclose(big.velocity_vector(small_ops.space.n_dofs),
                               glob.velocity_vector(small_ops.space.n_dofs), atol=1e-12)


def test_serial_and_parallel_identical(medium_ops):
    a = compute_basis(medium_ops, 1, n_jobs=1)
    b = compute_basis(medium_ops, 1, n_jobs=4)
    assert (a.phi != b.phi).nnz == 0
    assert (a.xi != b.xi).nnz == 0


def test_basis_matches_dense_oracle(small_ops):
    face = small_ops.coarse.interior_edges[5]
    for ell in (1, GLOBAL):
        ps = assemble_basis_saddle(make_patch(small_ops, face, ell), small_ops)
        b = ps.rhs(face, 0)
        x = ps.factorization().solve(b)
        x_dense = sla.lu_solve(sla.lu_factor(ps.system.matrix.toarray()), b)
        assert np.linalg.norm(x - x_dense) <= 1e-9 * np.linalg.norm(x_dense)


def test_decay_monotone(medium_ops, bases):
    nrm = norms(medium_ops.space)
    bf = bases[GLOBAL][len(bases[GLOBAL]) // 2]
    total = nrm.broken_h1(bf.velocity_vector(medium_ops.space.n_dofs))
    values = [measure_decay(bf, k, medium_ops, nrm) for k in range(0, 8)]
    assert values[0] <= total
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))
    assert values[-1] == 0.0


def test_localization_error(medium_ops, bases):
    nrm = norms(medium_ops.space)
    assert localization_error(bases[GLOBAL], bases[GLOBAL], nrm) == 0.0
    e1 = localization_error(bases[GLOBAL], bases[1], nrm)
    e2 = localization_error(bases[GLOBAL], bases[2], nrm)
    assert 0 < e2 < e1


def test_export_roundtrip(tmp_path, small_ops):
    basis = compute_basis(small_ops, 1)
    export_basis(basis, tmp_path)
    manifest = (tmp_path / "manifest.txt").read_text().splitlines()
    assert len(manifest) == 1 + len(basis)
    phi = load_basis_vectors(tmp_path, small_ops.space.n_dofs)
    assert abs(phi - basis.phi).max() == 0.0

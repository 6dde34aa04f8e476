import numpy as np
import pytest
import scipy.linalg as sla

from stokes_lod.cr_fem import assemble_rhs, inject, l2_projection_coarse, norms
from stokes_lod.exceptions import DomainError
from stokes_lod.lod_basis import GLOBAL, apply_Rl, compute_basis
from stokes_lod.solver import (FineSolution, assemble_coarse_system, assemble_fine_system,
                               coarse_divergence_matrix, compute_errors, divergence_ratio,
                               postprocess_pressure, solve_fine_reference, solve_lod)

from conftest import rotation_force


def zero_force(x, y):
    return np.zeros((x.size, 2))


@pytest.fixture(scope="module")
def global_run(medium_ops):
    basis = compute_basis(medium_ops, GLOBAL)
    return basis, solve_lod(basis, rotation_force), solve_fine_reference(medium_ops, rotation_force)


@pytest.fixture(scope="module")
def local_run(medium_ops):
    basis = compute_basis(medium_ops, 1)
    return basis, solve_lod(basis, rotation_force)


def test_zero_force(medium_ops, local_run):
    basis, _ = local_run
    sol = solve_lod(basis, zero_force)
    assert not sol.coefficients.any() and not sol.velocity.any() and not sol.pressure.any()
    np.testing.assert_array_equal(sol.pressure_pp, 0.0)
    ref = solve_fine_reference(medium_ops, zero_force)
    assert not ref.velocity.any() and not ref.pressure.any()


def test_lod_divergence_free(medium_ops, local_run, global_run):
    for sol in (local_run[1], global_run[1]):
        assert divergence_ratio(sol.velocity, medium_ops) <= 1e-8
        assert abs(medium_ops.coarse.areas @ sol.pressure) <= 1e-12


def test_fine_reference_properties(medium_ops, global_run):
    ref = global_run[2]
    assert divergence_ratio(ref.velocity, medium_ops) <= 1e-8
    assert abs(medium_ops.fine.areas @ ref.pressure) <= 1e-12
    system = assemble_fine_system(medium_ops, rotation_force)
    x = np.concatenate([ref.velocity, [ref.multiplier], ref.pressure])
    r = system.matrix @ x - system.rhs
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(system.rhs)


def test_global_identities(medium_ops, global_run):
    basis, sol, ref = global_run
    nrm = norms(medium_ops.space)
    Ru = apply_Rl(ref.velocity, basis)
    assert nrm.broken_h1(sol.velocity - Ru) <= 1e-8 * nrm.broken_h1(ref.velocity)
    pih = l2_projection_coarse(ref.pressure, medium_ops.hier)
    gap = nrm.p0_l2(sol.pressure - pih, areas=medium_ops.coarse.areas)
    assert gap <= 1e-8 * nrm.p0_l2(ref.pressure)
    assert compute_errors(ref, sol, medium_ops).err_pih_p_l2 <= 1e-8


def test_postprocessed_pressure(medium_ops, local_run, global_run):
    for basis, sol in (local_run, global_run[:2]):
        pp = postprocess_pressure(sol, basis)
        np.testing.assert_array_equal(pp, sol.pressure_pp)
        np.testing.assert_allclose(l2_projection_coarse(pp, medium_ops.hier), sol.pressure,
                                   atol=1e-10)
    # post-processing improves the pressure for global patches
    err = compute_errors(global_run[2], global_run[1], medium_ops)
    nrm = norms(medium_ops.space)
    raw = nrm.p0_l2(global_run[2].pressure - inject(global_run[1].pressure, medium_ops.hier))
    assert err.err_p_l2 < raw


def test_galerkin_residual(medium_ops, local_run):
    basis, sol = local_run
    ops = medium_ops
    load = assemble_rhs(ops.space, rotation_force)
    phi = basis.phi
    B_c = coarse_divergence_matrix(basis)
    r = phi.T @ (ops.A @ sol.velocity) + B_c.T @ sol.pressure - phi.T @ load
    assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm(phi.T @ load)


def test_coarse_divergence_matches_fine_operator(medium_ops, local_run):
    basis, _ = local_run
    # sum b(phi, 1_t) over the fine triangles t of each coarse K
    indicator = medium_ops.M.copy()
    indicator.data[:] = 1.0
    direct = indicator @ (medium_ops.B @ basis.phi)
    np.testing.assert_allclose(coarse_divergence_matrix(basis).toarray(), direct.toarray(),
                               atol=1e-12)


def test_coarse_matrix_spd(local_run):
    basis, _ = local_run
    system = assemble_coarse_system(basis, rotation_force)
    n = len(basis)
    A_c = system.matrix[:n, :n].toarray()
    np.testing.assert_array_equal(A_c, A_c.T)
    assert np.linalg.eigvalsh(A_c).min() > 0


def test_compute_errors_self_zero(medium_ops, global_run):
    ref = global_run[2]
    assert compute_errors(ref, ref, medium_ops).as_tuple() == (0.0, 0.0, 0.0, 0.0)


def test_compute_errors_mismatch(medium_ops, global_run):
    ref = global_run[2]
    bad = FineSolution(ref.velocity[:-2], ref.pressure)
    with pytest.raises(DomainError):
        compute_errors(ref, bad, medium_ops)


def test_small_solves_match_dense_oracle(small_ops):
    for ell in (1, GLOBAL):
        system = assemble_coarse_system(compute_basis(small_ops, ell), rotation_force)
        x = system.solve()
        x_dense = sla.lu_solve(sla.lu_factor(system.matrix.toarray()), system.rhs)
        assert np.linalg.norm(x - x_dense) <= 1e-9 * np.linalg.norm(x_dense)
    system = assemble_fine_system(small_ops, rotation_force)
    x = system.solve()
    x_dense = sla.lu_solve(sla.lu_factor(system.matrix.toarray()), system.rhs)
    assert np.linalg.norm(x - x_dense) <= 1e-9 * np.linalg.norm(x_dense)

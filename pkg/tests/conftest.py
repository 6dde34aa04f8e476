import numpy as np
import pytest

from stokes_lod.coeffs import RandomCoefficientSpec, generate_multiscale_coefficient, inject_to_fine
from stokes_lod.cr_fem import assemble_operators
from stokes_lod.mesh import build_hierarchy


def rotation_force(x, y):
    return np.stack([-y, x], axis=1)


def make_ops(coarse, fine, eps, seed=3):
    hier = build_hierarchy(coarse, fine)
    nu = generate_multiscale_coefficient(RandomCoefficientSpec(eps, seed=seed), hier)
    return assemble_operators(hier, inject_to_fine(nu, hier))


@pytest.fixture(scope="session")
def small_ops():
    """Coarse 2^-1, fine 2^-3, coefficient on 2^-2."""
    return make_ops(1, 3, 2)


@pytest.fixture(scope="session")
def medium_ops():
    """Coarse 2^-2, fine 2^-5, coefficient on 2^-3."""
    return make_ops(2, 5, 3)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, title, passed, detail):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

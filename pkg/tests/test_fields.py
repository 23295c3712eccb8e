import numpy as np
import pytest

from nito.fields import physical_fields, strain_energy_field, von_mises, von_mises_field
from nito.problem import Load, ProblemSpec, cantilever
from nito.simp import SimpConfig, SimpSolver

from oracles import quadrature_ke, shape_gradient_matrix


def stretched_patch(force=1.0):
    # left edge on rollers, one pin against vertical drift, unit tension spread over the right edge
    return ProblemSpec(
        1, 1,
        (Load(1, 0, force / 2, 0.0), Load(1, 1, force / 2, 0.0)),
        ((0, 0), (0, 1)), ((0, 0),), 0.5,
    )


def test_formula_cases():
    assert von_mises(2.5, 0.0, 0.0) == pytest.approx(2.5)
    assert von_mises(0.0, 0.0, 1.5) == pytest.approx(np.sqrt(3) * 1.5)


def test_patch_stress_by_hand():
    # uniform uniaxial tension: sigma_x = 1, so von Mises = 1 at unit density
    vm = von_mises_field(stretched_patch(), np.ones(1), SimpConfig(solver="dense"))
    assert vm[0] == pytest.approx(1.0, rel=1e-10)


def test_patch_stress_matches_b_matrix_product():
    nu = 0.3
    problem = stretched_patch()
    solver = SimpSolver(problem, SimpConfig(solver="dense"))
    d = solver.system.solve(np.full(1, 0.5), solver.loads, method="dense")
    ue = d[problem.mesh.element_dofs[0]]
    D = np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]) / (1 - nu ** 2)
    s = 0.5 * D @ shape_gradient_matrix(0.5, 0.5) @ ue
    expected = np.sqrt(s[0] ** 2 - s[0] * s[1] + s[1] ** 2 + 3 * s[2] ** 2)
    rho = np.full(1, 0.5 ** (1 / 3))  # penalized modulus of 0.5
    got = von_mises_field(problem, rho, SimpConfig(solver="dense"))[0]
    assert got == pytest.approx(expected, rel=1e-6)


def test_energy_sums_to_half_compliance_on_one_element():
    problem = stretched_patch()
    energy = strain_energy_field(problem, np.ones(1), SimpConfig(solver="dense"))
    free = [2, 3, 4, 5, 7]  # local DOFs not fixed: right nodes and the upper-left y
    ke = quadrature_ke(0.3)
    f = np.array([0, 0, 0.5, 0, 0.5, 0, 0, 0])
    u = np.zeros(8)
    u[free] = np.linalg.solve(ke[np.ix_(free, free)], f[free])
    assert energy.sum() == pytest.approx(0.5 * f @ u, rel=1e-8)


def test_zero_load_and_scaling():
    base = cantilever(10, 5, 0.5)
    rho = np.random.default_rng(0).uniform(0.1, 1.0, 50)
    zero = ProblemSpec(10, 5, (Load(10, 2, 0.0, 0.0),), base.supports_x, base.supports_y, 0.5)
    assert not strain_energy_field(zero, rho).any()
    assert not von_mises_field(zero, rho).any()
    doubled = ProblemSpec(10, 5, (Load(10, 2, 0.0, -2.0),), base.supports_x, base.supports_y, 0.5)
    e1 = strain_energy_field(base, rho, SimpConfig(solver="direct"))
    e2 = strain_energy_field(doubled, rho, SimpConfig(solver="direct"))
    np.testing.assert_allclose(e2, 4 * e1, rtol=1e-9)


def test_fields_nonnegative_and_energy_total():
    problem = cantilever(16, 8, 0.5)
    rho = np.random.default_rng(1).uniform(0.0, 1.0, 128)
    fields = physical_fields(problem, rho)
    assert fields.strain_energy.min() >= 0 and fields.von_mises.min() >= 0
    c = SimpSolver(problem).evaluate(rho)
    assert fields.strain_energy.sum() == pytest.approx(0.5 * c, rel=1e-8)

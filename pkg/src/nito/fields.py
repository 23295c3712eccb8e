"""Per-element strain energy and von Mises stress of a solved design."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nito.problem import ProblemSpec
from nito.simp import SimpConfig, SimpSolver, interpolate_modulus

# B matrix of the unit Q4 element evaluated at its centroid
_B_CENTROID = 0.5 * np.array([
    [-1, 0, 1, 0, 1, 0, -1, 0],
    [0, -1, 0, -1, 0, 1, 0, 1],
    [-1, -1, -1, 1, 1, 1, 1, -1],
], dtype=float)


@dataclass
class PhysicalFields:
    strain_energy: np.ndarray
    von_mises: np.ndarray


def plane_stress_matrix(nu: float) -> np.ndarray:
    return np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]) / (1 - nu ** 2)


def von_mises(sx, sy, txy):
    return np.sqrt(np.maximum(sx ** 2 - sx * sy + sy ** 2 + 3 * txy ** 2, 0.0))


def _solve(problem, rho, cfg):
    solver = SimpSolver(problem, cfg)
    rho = np.asarray(rho, dtype=float).ravel()
    moduli = interpolate_modulus(rho, solver.cfg)
    d = solver.system.solve(moduli, solver.loads, method=cfg.solver, tol=cfg.solver_tol)
    return solver, moduli, d


def _energy(solver, moduli, d):
    return 0.5 * moduli * solver.system.element_energies(d)


def _stress(solver, moduli, d, nu):
    ue = d[solver.mesh.element_dofs]
    strain = ue @ _B_CENTROID.T
    stress = moduli[:, None] * (strain @ plane_stress_matrix(nu).T)
    return von_mises(stress[:, 0], stress[:, 1], stress[:, 2])


def strain_energy_field(problem: ProblemSpec, rho, cfg: SimpConfig = SimpConfig()) -> np.ndarray:
    """Element strain energy 0.5 E_e u_e^T ke u_e; sums to half the compliance."""
    return _energy(*_solve(problem, rho, cfg))


def von_mises_field(problem: ProblemSpec, rho, cfg: SimpConfig = SimpConfig()) -> np.ndarray:
    solver, moduli, d = _solve(problem, rho, cfg)
    return _stress(solver, moduli, d, cfg.poisson_ratio)


def physical_fields(problem: ProblemSpec, rho, cfg: SimpConfig = SimpConfig()) -> PhysicalFields:
    """Both fields from a single solve."""
    solver, moduli, d = _solve(problem, rho, cfg)
    return PhysicalFields(_energy(solver, moduli, d), _stress(solver, moduli, d, cfg.poisson_ratio))

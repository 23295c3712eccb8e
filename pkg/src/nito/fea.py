"""Plane-stress finite elements on a structured grid of unit square Q4 elements.

Numbering
---------
Node ``(i, j)`` with ``0 <= i <= nx`` and ``0 <= j <= ny`` (y pointing up) has id
``j * (nx + 1) + i`` and DOFs ``2 * id`` (x) and ``2 * id + 1`` (y).
Element ``(i, j)`` has id ``j * nx + i``, so a per-element array reshaped to
``(ny, nx)`` is indexed ``[j, i]``. Element nodes are taken counter-clockwise
starting from the lower-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from nito.errors import ParameterError, SolverError, StructuralError

DENSE_DOF_LIMIT = 2500


@dataclass(frozen=True)
class GridMesh:
    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ParameterError(f"mesh needs nx, ny >= 1, got ({self.nx}, {self.ny})")

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    def node_id(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def node_ij(self, node):
        node = np.asarray(node)
        return node % (self.nx + 1), node // (self.nx + 1)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """(n_elements, 8) DOF indices, rows ordered by element id."""
        j, i = np.divmod(np.arange(self.n_elements), self.nx)
        n0 = self.node_id(i, j)
        nodes = np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)
        dofs = np.empty((self.n_elements, 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        return dofs

    @cached_property
    def node_coords(self) -> np.ndarray:
        """(n_nodes, 2) node positions in element units."""
        j, i = np.divmod(np.arange(self.n_nodes), self.nx + 1)
        return np.stack([i, j], axis=1).astype(float)

    def element_centers(self) -> np.ndarray:
        """Pixel centres mapped to the unit square, shape (n_elements, 2)."""
        j, i = np.divmod(np.arange(self.n_elements), self.nx)
        return np.stack([(i + 0.5) / self.nx, (j + 0.5) / self.ny], axis=1)


@dataclass(frozen=True)
class SupportSet:
    fixed_x: tuple = ()
    fixed_y: tuple = ()

    def constrained_dofs(self, mesh: GridMesh) -> np.ndarray:
        fx = np.unique(np.asarray(self.fixed_x, dtype=np.int64))
        fy = np.unique(np.asarray(self.fixed_y, dtype=np.int64))
        for nodes in (fx, fy):
            if nodes.size and (nodes.min() < 0 or nodes.max() >= mesh.n_nodes):
                raise ParameterError("support node index outside the mesh")
        return np.union1d(2 * fx, 2 * fy + 1).astype(np.int64)


def element_stiffness(poisson_ratio: float = 0.3) -> np.ndarray:
    """Closed-form Q4 plane-stress stiffness for E = 1, unit thickness and size."""
    nu = float(poisson_ratio)
    if not 0.0 <= nu < 0.5:
        raise ParameterError(f"Poisson ratio must be in [0, 0.5), got {nu}")
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    pattern = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return k[pattern] / (1 - nu ** 2)


def check_rigid_body(mesh: GridMesh, constrained: np.ndarray):
    """Raise StructuralError unless the constraints remove both translations and the rotation."""
    if constrained.size < 3:
        raise StructuralError(f"only {constrained.size} constrained DOFs; at least 3 are needed")
    xy = mesh.node_coords[constrained // 2]
    is_y = (constrained % 2).astype(bool)
    rows = np.zeros((constrained.size, 3))
    rows[~is_y, 0] = 1.0
    rows[~is_y, 2] = -xy[~is_y, 1]
    rows[is_y, 1] = 1.0
    rows[is_y, 2] = xy[is_y, 0]
    if np.linalg.matrix_rank(rows) < 3:
        raise StructuralError("supports do not eliminate rigid-body motion")


@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual: float


def pcg(A, b, tol=1e-8, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients on a symmetric positive definite matrix.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns ``(x, iterations, residual)``;
    raises SolverError when ``maxiter`` is exhausted.
    """
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    k = 0
    while res > tol:
        if k >= maxiter:
            raise SolverError("conjugate gradients did not converge", res, k)
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        k += 1
        res = np.linalg.norm(r) / bnorm
    return x, k, res


class FESystem:
    """Reusable assembly data for one mesh and support set.

    Precomputes the sparse pattern and the free-DOF reduction once, so repeated
    solves inside an optimization loop only rescale element matrices.
    """

    def __init__(self, mesh: GridMesh, supports: SupportSet, poisson_ratio: float = 0.3):
        self.mesh = mesh
        self.ke = element_stiffness(poisson_ratio)
        self.fixed = supports.constrained_dofs(mesh)
        check_rigid_body(mesh, self.fixed)
        mask = np.ones(mesh.n_dofs, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        edofs = mesh.element_dofs
        self._rows = np.repeat(edofs, 8, axis=1).ravel()
        self._cols = np.tile(edofs, (1, 8)).ravel()
        self.last_info = None

    def stiffness(self, moduli: np.ndarray) -> sp.csr_matrix:
        """Reduced stiffness matrix K_ff for the given element moduli."""
        moduli = np.asarray(moduli, dtype=float)
        if moduli.shape != (self.mesh.n_elements,):
            raise ParameterError(f"expected {self.mesh.n_elements} moduli, got shape {moduli.shape}")
        if not np.all(moduli > 0):
            raise ParameterError("element moduli must be strictly positive")
        vals = (moduli[:, None] * self.ke.ravel()[None, :]).ravel()
        n = self.mesh.n_dofs
        K = sp.coo_matrix((vals, (self._rows, self._cols)), shape=(n, n)).tocsr()
        return K[self.free][:, self.free]

    def solve(self, moduli, loads, method="cg", tol=1e-8, x0=None) -> np.ndarray:
        loads = np.asarray(loads, dtype=float)
        if loads.shape != (self.mesh.n_dofs,):
            raise ParameterError(f"load vector must have {self.mesh.n_dofs} entries")
        Kff = self.stiffness(moduli)
        f = loads[self.free]
        d = np.zeros(self.mesh.n_dofs)
        if method == "cg":
            guess = None if x0 is None else np.asarray(x0)[self.free]
            u, iters, res = pcg(Kff, f, tol=tol, x0=guess)
        elif method == "direct":
            u = spla.spsolve(Kff.tocsc(), f)
            iters = 0
        elif method == "dense":
            if self.mesh.n_dofs > DENSE_DOF_LIMIT:
                raise ParameterError(f"dense path limited to {DENSE_DOF_LIMIT} DOFs")
            try:
                u = np.linalg.solve(Kff.toarray(), f)
            except np.linalg.LinAlgError as exc:
                raise StructuralError(str(exc)) from exc
            iters = 0
        else:
            raise ParameterError(f"unknown solver {method!r}")
        if method != "cg":
            fn = np.linalg.norm(f)
            res = np.linalg.norm(Kff @ u - f) / fn if fn > 0 else 0.0
            if not np.all(np.isfinite(u)):
                raise StructuralError("singular stiffness matrix")
        d[self.free] = u
        self.last_info = SolveInfo(method, iters, float(res))
        return d

    def element_energies(self, d: np.ndarray) -> np.ndarray:
        """u_e^T ke u_e for every element (unit modulus)."""
        ue = np.asarray(d)[self.mesh.element_dofs]
        return np.einsum("ei,ij,ej->e", ue, self.ke, ue)


def assemble_and_solve(mesh, moduli, loads, supports, method="cg", tol=1e-8, poisson_ratio=0.3):
    return FESystem(mesh, supports, poisson_ratio).solve(moduli, loads, method=method, tol=tol)


def compliance(d, loads, mesh, moduli, poisson_ratio=0.3):
    """Total compliance F^T d and its per-element split E_e u_e^T ke u_e."""
    d = np.asarray(d, dtype=float)
    loads = np.asarray(loads, dtype=float)
    moduli = np.asarray(moduli, dtype=float)
    if d.shape != (mesh.n_dofs,) or loads.shape != (mesh.n_dofs,):
        raise ParameterError("displacement and load vectors must have one entry per DOF")
    if moduli.shape != (mesh.n_elements,):
        raise ParameterError("moduli must have one entry per element")
    ke = element_stiffness(poisson_ratio)
    ue = d[mesh.element_dofs]
    per_element = moduli * np.einsum("ei,ij,ej->e", ue, ke, ue)
    return float(loads @ d), per_element

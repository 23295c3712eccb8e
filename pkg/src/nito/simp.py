"""SIMP compliance minimization with a density filter and optimality-criteria updates."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from nito.errors import OptimizerError, ParameterError
from nito.fea import FESystem, GridMesh
from nito.problem import ProblemSpec

log = logging.getLogger(__name__)

VOLUME_TOL = 1e-4
MAX_BISECTION_STEPS = 200


@dataclass(frozen=True)
class SimpConfig:
    penal: float = 3.0
    E0: float = 1.0
    Emin: float = 1e-9
    rmin: float = 2.0
    volume_fraction: float = 0.5
    move_limit: float = 0.2
    damping: float = 0.5
    max_iters: int = 300
    change_tol: float = 0.01
    rho_min: float = 1e-3
    rho_max: float = 1.0
    poisson_ratio: float = 0.3
    solver: str = "cg"
    solver_tol: float = 1e-8

    def __post_init__(self):
        if self.penal < 1:
            raise ParameterError("penalization must be >= 1")
        if not 0 < self.Emin < self.E0:
            raise ParameterError("need 0 < Emin < E0")
        if self.rmin < 1:
            raise ParameterError("filter radius must be >= 1 element")
        if not 0 < self.volume_fraction < 1:
            raise ParameterError("volume fraction must be in (0, 1)")
        if not 0 <= self.rho_min < self.rho_max <= 1:
            raise ParameterError("density bounds must satisfy 0 <= rho_min < rho_max <= 1")

    def replace(self, **changes) -> "SimpConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class FilterKernel:
    """Hat-weight density filter ``rho_f = (H @ rho) / Hs``."""
    H: sp.csr_matrix
    Hs: np.ndarray
    rmin: float

    @property
    def size(self) -> int:
        return self.Hs.shape[0]

    @property
    def volume_sensitivity(self) -> np.ndarray:
        """d(sum rho_f)/d rho, i.e. H^T (1 / Hs)."""
        return self.H.T @ (1.0 / self.Hs)

    def backprop(self, grad_filtered: np.ndarray) -> np.ndarray:
        return self.H.T @ (np.asarray(grad_filtered) / self.Hs)


@dataclass
class OptimizationResult:
    rho: np.ndarray
    rho_phys: np.ndarray
    compliance: float
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    final_fea_s: float = 0.0

    @property
    def volume_fraction(self) -> float:
        return float(self.rho_phys.mean())


def build_filter(mesh: GridMesh, rmin: float) -> FilterKernel:
    if rmin < 1:
        raise ParameterError(f"filter radius must be >= 1, got {rmin}")
    nx, ny = mesh.nx, mesh.ny
    j, i = np.divmod(np.arange(mesh.n_elements), nx)
    reach = int(np.ceil(rmin)) - 1
    rows, cols, vals = [], [], []
    for dj in range(-reach, reach + 1):
        for di in range(-reach, reach + 1):
            w = rmin - np.hypot(di, dj)
            if w <= 0:
                continue
            ii, jj = i + di, j + dj
            ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
            rows.append(np.flatnonzero(ok))
            cols.append(jj[ok] * nx + ii[ok])
            vals.append(np.full(ok.sum(), w))
    n = mesh.n_elements
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    H.sort_indices()
    Hs = np.asarray(H.sum(axis=1)).ravel()
    return FilterKernel(H, Hs, float(rmin))


def apply_filter(kernel: FilterKernel, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (kernel.size,):
        raise ParameterError(f"field of shape {values.shape} does not match filter of size {kernel.size}")
    out = (kernel.H @ values) / kernel.Hs
    # convex weights: keep rounding from leaving the input range
    return np.clip(out, values.min(), values.max()) if values.size else out


def interpolate_modulus(rho_filtered, cfg: SimpConfig) -> np.ndarray:
    """Modified SIMP law E = Emin + rho^p (E0 - Emin)."""
    rho = np.asarray(rho_filtered, dtype=float)
    if rho.size and (rho.min() < 0.0 or rho.max() > 1.0):
        raise ParameterError("densities must lie in [0, 1]")
    return cfg.Emin + rho ** cfg.penal * (cfg.E0 - cfg.Emin)


def sensitivities(energies, rho_filtered, cfg: SimpConfig, kernel: FilterKernel | None = None) -> np.ndarray:
    """Compliance gradient with respect to the design variables.

    ``energies`` holds the unit-modulus element energies u_e^T ke u_e at the
    current solution. Without a kernel the gradient is taken with respect to
    the filtered densities directly.
    """
    energies = np.asarray(energies, dtype=float)
    rho = np.asarray(rho_filtered, dtype=float)
    if energies.shape != rho.shape:
        raise ParameterError("energy and density arrays differ in shape")
    dc = -cfg.penal * rho ** (cfg.penal - 1) * (cfg.E0 - cfg.Emin) * energies
    if kernel is None:
        return dc
    if kernel.size != rho.size:
        raise ParameterError("filter size does not match the density field")
    return kernel.backprop(dc)


def binarize(rho, threshold: float, cfg: SimpConfig) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    rho = np.asarray(rho, dtype=float)
    return np.where(rho >= threshold, cfg.rho_max, cfg.rho_min)


def oc_update(rho, sens, cfg: SimpConfig, kernel: FilterKernel | None = None, dv=None) -> np.ndarray:
    """One optimality-criteria step with a bisected Lagrange multiplier.

    The multiplier is searched on a log scale until the mean *filtered*
    density matches ``cfg.volume_fraction`` within 1e-4.
    """
    rho = np.asarray(rho, dtype=float)
    sens = np.asarray(sens, dtype=float)
    if sens.shape != rho.shape:
        raise ParameterError("sensitivity and density arrays differ in shape")
    if np.any(sens > 0):
        raise ParameterError("compliance sensitivities must be non-positive")
    dv = np.ones_like(rho) if dv is None else np.asarray(dv, dtype=float)
    target = cfg.volume_fraction
    ratio = -sens / dv
    lower = np.maximum(cfg.rho_min, rho - cfg.move_limit)
    upper = np.minimum(cfg.rho_max, rho + cfg.move_limit)

    def update(lam):
        return np.clip(rho * (ratio / lam) ** cfg.damping, lower, upper)

    def volume(x):
        return float(x.mean()) if kernel is None else float(apply_filter(kernel, x).mean())

    scale = float(ratio.max()) if ratio.max() > 0 else 1.0
    lo, hi = scale * 1e-3, scale * 1e3
    if volume(lower) > target + VOLUME_TOL or volume(upper) < target - VOLUME_TOL:
        raise OptimizerError(f"volume fraction {target} is unreachable within the move limit")
    steps = 0
    while volume(update(hi)) > target:
        hi *= 1e3
        steps += 1
    while volume(update(lo)) < target:
        lo *= 1e-3
        steps += 1
    while steps < MAX_BISECTION_STEPS:
        mid = np.sqrt(lo * hi)
        x = update(mid)
        v = volume(x)
        if abs(v - target) <= VOLUME_TOL:
            return x
        if v > target:
            lo = mid
        else:
            hi = mid
        steps += 1
    raise OptimizerError(f"bisection did not bracket the volume target in {MAX_BISECTION_STEPS} steps")


def project_to_volume(values, volume_fraction: float, tol: float = 1e-10) -> np.ndarray:
    """Shift a field uniformly (with clamping to [0, 1]) so its mean equals the volume fraction."""
    if not 0.0 < volume_fraction < 1.0:
        raise ParameterError(f"volume fraction must be in (0, 1), got {volume_fraction}")
    values = np.asarray(values, dtype=float)
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ParameterError("field entries must lie in [0, 1]")
    lo, hi = -1.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = np.clip(values + mid, 0.0, 1.0).mean()
        if abs(v - volume_fraction) <= tol:
            break
        if v > volume_fraction:
            hi = mid
        else:
            lo = mid
    return np.clip(values + mid, 0.0, 1.0)


class SimpSolver:
    """Filter, FE system and load vector for one problem, reusable across runs."""

    def __init__(self, problem: ProblemSpec, cfg: SimpConfig = SimpConfig()):
        self.problem = problem
        self.cfg = cfg.replace(volume_fraction=problem.volume_fraction)
        self.mesh = problem.mesh
        self.system = FESystem(self.mesh, problem.support_set(), self.cfg.poisson_ratio)
        self.loads = problem.load_vector()
        self.kernel = build_filter(self.mesh, self.cfg.rmin)
        self._d = None

    def analyze(self, rho_phys):
        """Solve at the given physical densities; returns (compliance, unit-modulus element energies)."""
        cfg = self.cfg
        d = self.system.solve(
            interpolate_modulus(rho_phys, cfg), self.loads, method=cfg.solver, tol=cfg.solver_tol, x0=self._d
        )
        self._d = d
        return float(self.loads @ d), self.system.element_energies(d)

    def evaluate(self, rho_phys, threshold: float | None = None) -> float:
        """Compliance of a physical density; with a threshold the field is binarized to rho_min/rho_max first."""
        if threshold is not None:
            rho_phys = binarize(rho_phys, threshold, self.cfg)
        return self.analyze(rho_phys)[0]

    def run(self, init=None, max_iters=None) -> OptimizationResult:
        cfg = self.cfg
        max_iters = cfg.max_iters if max_iters is None else max_iters
        n = self.mesh.n_elements
        if init is None:
            x = np.full(n, cfg.volume_fraction)
        else:
            x = np.asarray(init, dtype=float).ravel()
            if x.shape != (n,):
                raise ParameterError(f"initial field has {x.size} entries, mesh has {n} elements")
        x = np.clip(x, cfg.rho_min, cfg.rho_max)
        dv = self.kernel.volume_sensitivity
        history = []
        converged = False
        for it in range(max_iters):
            x_phys = apply_filter(self.kernel, x)
            c, energies = self.analyze(x_phys)
            history.append(c)
            dc = sensitivities(energies, x_phys, cfg, self.kernel)
            x_new = oc_update(x, dc, cfg, self.kernel, dv)
            change = float(np.abs(x_new - x).max())
            x = x_new
            log.debug("iter %d compliance %.6g change %.4f", it, c, change)
            if change < cfg.change_tol:
                converged = True
                break
        x_phys = apply_filter(self.kernel, x)
        start = time.perf_counter()
        compliance = self.evaluate(x_phys)
        return OptimizationResult(
            rho=x,
            rho_phys=x_phys,
            compliance=compliance,
            history=history,
            iterations=len(history),
            converged=converged,
            final_fea_s=time.perf_counter() - start,
        )


def optimize(problem: ProblemSpec, cfg: SimpConfig = SimpConfig(), init=None) -> OptimizationResult:
    """Run SIMP on ``problem``; with ``init`` it continues from that design (warm start)."""
    return SimpSolver(problem, cfg).run(init)

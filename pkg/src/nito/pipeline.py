"""Field inference followed by a few warm-started SIMP iterations."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from nito.errors import ParameterError
from nito.fea import GridMesh
from nito.neural_field import NeuralField
from nito.problem import ProblemSpec
from nito.simp import SimpConfig, SimpSolver, project_to_volume


def _model(ckpt) -> NeuralField:
    return ckpt.model if hasattr(ckpt, "model") else ckpt


def pixel_centers(nx: int, ny: int) -> np.ndarray:
    return GridMesh(nx, ny).element_centers()


def infer_field(ckpt, problem: ProblemSpec, resolution=None) -> np.ndarray:
    """Field values at every pixel centre of an ``nx`` x ``ny`` grid, element order.

    ``ckpt`` may be a checkpoint or a bare model. The condition is built from
    the problem's normalized boundary conditions, so any resolution works.
    """
    nx, ny = resolution if resolution is not None else (problem.nx, problem.ny)
    if nx < 8 or ny < 8:
        raise ParameterError(f"inference resolution must be at least 8x8, got {nx}x{ny}")
    return _model(ckpt).predict(problem, pixel_centers(nx, ny))


@dataclass
class GenerationResult:
    rho: np.ndarray  # physical densities, element order
    compliance: float
    k_steps: int
    problem: ProblemSpec
    timings: dict = field(default_factory=dict)  # seconds: field, opt, fea

    @property
    def volume_fraction(self) -> float:
        return float(self.rho.mean())

    @property
    def grid(self) -> np.ndarray:
        return self.rho.reshape(self.problem.ny, self.problem.nx)


def nito_generate(ckpt, problem: ProblemSpec, resolution=None, k_steps: int = 10,
                  cfg: SimpConfig = SimpConfig(), raw_field=None) -> GenerationResult:
    """Project the field onto the volume budget and run ``k_steps`` SIMP iterations.

    With ``k_steps == 0`` the projected field itself is evaluated, without
    the density filter. ``raw_field`` skips inference when the field values
    for this resolution are already known.
    """
    if k_steps < 0:
        raise ParameterError(f"k_steps must be non-negative, got {k_steps}")
    if resolution is not None:
        problem = problem.rescaled(*resolution)
    start = time.perf_counter()
    values = infer_field(ckpt, problem) if raw_field is None else np.asarray(raw_field, dtype=float)
    t_field = time.perf_counter() - start if raw_field is None else 0.0
    rho0 = project_to_volume(values, problem.volume_fraction)
    solver = SimpSolver(problem, cfg)
    if k_steps == 0:
        start = time.perf_counter()
        compliance = solver.evaluate(rho0)
        timings = {"field": t_field, "opt": 0.0, "fea": time.perf_counter() - start}
        return GenerationResult(rho0, compliance, 0, problem, timings)
    start = time.perf_counter()
    result = solver.run(init=rho0, max_iters=k_steps)
    elapsed = time.perf_counter() - start
    timings = {"field": t_field, "opt": elapsed - result.final_fea_s, "fea": result.final_fea_s}
    return GenerationResult(result.rho_phys, result.compliance, k_steps, problem, timings)

"""Random problem sampler and SIMP dataset builder.

A dataset directory holds ``manifest.json`` and, per sample, a problem JSON
file plus ArrayBlob files for the optimized density (float32, shape
``(ny, nx)``) and optionally the strain-energy and von Mises fields.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nito import storage
from nito.errors import FormatError, NitoError, ParameterError, StructuralError, VersionError
from nito.storage import DATASET_VERSION
from nito.fea import FESystem
from nito.fields import PhysicalFields, physical_fields
from nito.problem import Load, ProblemSpec
from nito.simp import SimpConfig, SimpSolver, optimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    n_loads: tuple = (1, 2)
    segment_fraction: tuple = (0.15, 0.5)
    extra_support_prob: float = 0.3
    volume_fraction: tuple = (0.25, 0.6)
    max_tries: int = 100


def boundary_nodes(nx: int, ny: int) -> np.ndarray:
    """Perimeter nodes (i, j) walked counter-clockwise from the origin."""
    bottom = [(i, 0) for i in range(nx)]
    right = [(nx, j) for j in range(ny)]
    top = [(i, ny) for i in range(nx, 0, -1)]
    left = [(0, j) for j in range(ny, 0, -1)]
    return np.array(bottom + right + top + left, dtype=np.int64)


def sample_problem(seed: int, nx: int, ny: int, cfg: SamplerConfig = SamplerConfig()) -> ProblemSpec:
    if nx < 8 or ny < 8:
        raise ParameterError("sampled problems need nx, ny >= 8")
    rng = np.random.default_rng(seed)
    ring = boundary_nodes(nx, ny)
    P = len(ring)
    for _ in range(cfg.max_tries):
        edges = int(round(rng.uniform(*cfg.segment_fraction) * P))
        start = int(rng.integers(P))
        fixed = [tuple(ring[(start + k) % P]) for k in range(edges + 1)]
        sx, sy = list(fixed), list(fixed)
        if rng.random() < cfg.extra_support_prob:
            node = tuple(ring[int(rng.integers(P))])
            target = sx if rng.random() < 0.5 else sy
            if node not in target:
                target.append(node)
        n_loads = int(rng.integers(cfg.n_loads[0], cfg.n_loads[1] + 1))
        picks = rng.choice(P, size=n_loads, replace=False)
        angles = rng.uniform(0.0, 2 * np.pi, size=n_loads)
        loads = tuple(
            Load(int(ring[p][0]), int(ring[p][1]), float(np.cos(a)), float(np.sin(a)))
            for p, a in zip(picks, angles)
        )
        vf = float(rng.uniform(*cfg.volume_fraction))
        if any((l.i, l.j) in sx and (l.i, l.j) in sy for l in loads):
            continue
        problem = ProblemSpec(nx, ny, loads, tuple(sx), tuple(sy), vf, name=f"seed{seed}")
        try:
            probe = FESystem(problem.mesh, problem.support_set())
            probe.solve(np.ones(problem.mesh.n_elements), problem.load_vector(), method="direct")
        except StructuralError:
            continue
        return problem
    raise ParameterError(f"no admissible problem after {cfg.max_tries} tries (seed {seed})")


def derive_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


@dataclass
class DatasetSample:
    id: str
    problem: ProblemSpec
    rho: np.ndarray  # physical densities, flat, element order
    compliance: float
    iterations: int
    converged: bool = True
    seed: int = 0
    fields: PhysicalFields | None = None

    @property
    def grid(self) -> np.ndarray:
        return self.rho.reshape(self.problem.ny, self.problem.nx)


def solve_sample(sample_id: str, seed: int, nx: int, ny: int, cfg: SimpConfig,
                 gen_cfg: SamplerConfig = SamplerConfig(), with_fields=False) -> DatasetSample:
    problem = sample_problem(seed, nx, ny, gen_cfg)
    result = optimize(problem, cfg)
    # store what is written to disk, so a reload reproduces the compliance exactly
    rho = result.rho_phys.astype(np.float32).astype(np.float64)
    solver = SimpSolver(problem, cfg)
    compliance = solver.evaluate(rho)
    fields = physical_fields(problem, rho, cfg) if with_fields else None
    return DatasetSample(sample_id, problem, rho, compliance, result.iterations, result.converged, seed, fields)


def _solve_job(args):
    sample_id, seed, nx, ny, cfg, gen_cfg, with_fields = args
    try:
        return solve_sample(sample_id, seed, nx, ny, cfg, gen_cfg, with_fields)
    except NitoError as exc:
        return exc


def sample_files(sample_id: str) -> dict:
    return {
        "problem": f"samples/{sample_id}.json",
        "rho": f"samples/{sample_id}_rho.nta",
        "strain_energy": f"samples/{sample_id}_energy.nta",
        "von_mises": f"samples/{sample_id}_vm.nta",
    }


def save_sample(root, sample: DatasetSample) -> dict:
    """Write one sample below ``root``; returns its manifest entry."""
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    names = sample_files(sample.id)
    record = {
        "id": sample.id,
        "seed": sample.seed,
        "compliance": sample.compliance,
        "iterations": sample.iterations,
        "converged": sample.converged,
        "problem": sample.problem.to_dict(),
    }
    (root / names["problem"]).write_text(storage.dump_json(record))
    storage.save_array(root / names["rho"], sample.grid, "f32")
    files = {"problem": names["problem"], "rho": names["rho"]}
    if sample.fields is not None:
        shape = (sample.problem.ny, sample.problem.nx)
        storage.save_array(root / names["strain_energy"], sample.fields.strain_energy.reshape(shape), "f32")
        storage.save_array(root / names["von_mises"], sample.fields.von_mises.reshape(shape), "f32")
        files["strain_energy"] = names["strain_energy"]
        files["von_mises"] = names["von_mises"]
    return {
        "id": sample.id,
        "nx": sample.problem.nx,
        "ny": sample.problem.ny,
        "compliance": sample.compliance,
        "iterations": sample.iterations,
        "converged": sample.converged,
        "files": files,
        "sha256": {k: storage.sha256_file(root / v) for k, v in files.items()},
    }


def load_sample(root, entry: dict, verify=True) -> DatasetSample:
    root = Path(root)
    if verify:
        for key, rel in entry["files"].items():
            path = root / rel
            if not path.exists():
                raise FormatError(f"missing sample file {rel}")
            if storage.sha256_file(path) != entry["sha256"][key]:
                raise storage.ChecksumError(f"checksum mismatch for {rel}")
    record = json.loads((root / entry["files"]["problem"]).read_text())
    problem = ProblemSpec.from_dict(record["problem"])
    rho = storage.load_array(root / entry["files"]["rho"]).astype(np.float64).ravel()
    fields = None
    if "strain_energy" in entry["files"]:
        fields = PhysicalFields(
            storage.load_array(root / entry["files"]["strain_energy"]).astype(np.float64).ravel(),
            storage.load_array(root / entry["files"]["von_mises"]).astype(np.float64).ravel(),
        )
    return DatasetSample(
        record["id"], problem, rho, float(record["compliance"]), int(record["iterations"]),
        bool(record["converged"]), int(record["seed"]), fields,
    )


def build_dataset(count: int, resolution, seed: int, cfg: SimpConfig, out, with_fields=False,
                  gen_cfg: SamplerConfig = SamplerConfig(), workers: int = 1,
                  require_convergence=True, max_attempts=None) -> dict:
    """Generate, optimize and store ``count`` samples; returns the manifest.

    Problems whose optimization raises (or, with ``require_convergence``, that
    hit ``max_iters``) are logged, listed under ``skipped`` and replaced by the
    next seed, up to ``max_attempts`` draws.
    """
    nx, ny = resolution
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    max_attempts = 2 * count + 10 if max_attempts is None else max_attempts
    entries, skipped = [], []
    index = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        while len(entries) < count and index < max_attempts:
            batch = range(index, min(index + max(workers, 1) * 4, max_attempts))
            jobs = [(f"{k:06d}", derive_seed(seed, k), nx, ny, cfg, gen_cfg, with_fields) for k in batch]
            results = pool.map(_solve_job, jobs) if pool else map(_solve_job, jobs)
            for job, res in zip(jobs, results):
                if len(entries) >= count:
                    break
                if isinstance(res, Exception) or (require_convergence and not res.converged):
                    reason = str(res) if isinstance(res, Exception) else "not converged"
                    log.warning("skipping sample %s (seed %d): %s", job[0], job[1], reason)
                    skipped.append({"id": job[0], "seed": job[1], "reason": reason})
                    continue
                entries.append(save_sample(out, res))
                log.info("sample %s compliance %.5g after %d iterations", res.id, res.compliance, res.iterations)
            index = batch.stop
    finally:
        if pool:
            pool.shutdown()
    manifest = {
        "format": "nito-dataset",
        "version": DATASET_VERSION,
        "resolutions": [[nx, ny]],
        "seed": seed,
        "sampler": dataclasses.asdict(gen_cfg),
        "simp": dataclasses.asdict(cfg),
        "samples": entries,
        "skipped": skipped,
    }
    text = storage.dump_json(manifest)
    (out / "manifest.json").write_text(text)
    return json.loads(text)


def read_manifest(root) -> dict:
    manifest = json.loads((Path(root) / "manifest.json").read_text())
    if manifest.get("format") != "nito-dataset" or manifest.get("version") != DATASET_VERSION:
        raise VersionError(f"unsupported dataset manifest in {root}")
    return manifest


def load_dataset(root, verify=True) -> list:
    manifest = read_manifest(root)
    return [load_sample(root, entry, verify) for entry in manifest["samples"]]


def simp_config_from_manifest(manifest: dict) -> SimpConfig:
    fields = {f.name for f in dataclasses.fields(SimpConfig)}
    return SimpConfig(**{k: v for k, v in manifest["simp"].items() if k in fields})

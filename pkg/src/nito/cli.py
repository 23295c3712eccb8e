"""Command-line interface.

Every subcommand accepts ``--seed``, ``--config`` (a JSON file with optional
``arch``, ``train``, ``simp`` and ``sampler`` sections) and ``--threads``.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from nito import storage
from nito.dataset import SamplerConfig, build_dataset, load_dataset, read_manifest, simp_config_from_manifest
from nito.errors import (
    CheckpointError, ConfigurationError, FormatError, OptimizerError, ParameterError, SolverError,
    StructuralError, TrainingError,
)
from nito.metrics import EvalRecord, aggregate, write_csv
from nito.neural_field import ArchConfig
from nito.pipeline import infer_field, nito_generate
from nito.problem import ProblemSpec
from nito.simp import SimpConfig, SimpSolver, binarize, optimize
from nito.training import ModelCheckpoint, TrainConfig, parse_stages, train

log = logging.getLogger("nito")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _section(config: dict, name: str, cls, **overrides):
    data = dict(config.get(name, {}))
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise UsageError(f"unknown keys in '{name}' config: {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return cls(**data)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        config = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise UsageError("config file must hold a JSON object")
    return config


def _log_resolved(command: str, **sections):
    snapshot = {k: (dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v) for k, v in sections.items()}
    log.info("%s resolved config: %s", command, json.dumps(snapshot, sort_keys=True, default=str))


def _read_problem(path) -> ProblemSpec:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read problem file {path}: {exc}") from exc
    # dataset sample files wrap the problem in a record
    data = data.get("problem", data)
    try:
        return ProblemSpec.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"problem file {path} is missing fields: {exc}") from exc


def _simp_config(args, config) -> SimpConfig:
    return _section(config, "simp", SimpConfig, max_iters=getattr(args, "max_iters", None))


def cmd_dataset_generate(args, config):
    simp = _simp_config(args, config)
    sampler = _section(config, "sampler", SamplerConfig)
    _log_resolved("dataset generate", simp=simp, sampler=sampler, seed=args.seed, count=args.count,
                  resolution=[args.nx, args.ny])
    manifest = build_dataset(args.count, (args.nx, args.ny), args.seed, simp, args.out, with_fields=args.fields,
                             gen_cfg=sampler, workers=args.threads or 1)
    log.info("wrote %d samples (%d skipped) to %s", len(manifest["samples"]), len(manifest["skipped"]), args.out)


def cmd_simp_solve(args, config):
    problem = _read_problem(args.problem)
    simp = _simp_config(args, config)
    _log_resolved("simp solve", simp=simp, problem=str(args.problem))
    init = None
    if args.init:
        init = storage.load_array(args.init).astype(np.float64).ravel()
    result = optimize(problem, simp, init)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.save_array(out / "rho.nta", result.rho_phys.reshape(problem.ny, problem.nx), "f32")
    summary = {"compliance": result.compliance, "iterations": result.iterations, "converged": result.converged,
               "volume_fraction": result.volume_fraction}
    (out / "result.json").write_text(storage.dump_json(summary))
    log.info("compliance %.6g after %d iterations", result.compliance, result.iterations)


def _load_samples(spec: str):
    samples = []
    for root in spec.split(","):
        samples.extend(load_dataset(root.strip()))
    return samples


def cmd_train(args, config):
    arch = _section(config, "arch", ArchConfig, seed=args.seed)
    stages = parse_stages(args.stages) if args.stages else None
    tcfg = _section(config, "train", TrainConfig, seed=args.seed, stages=stages, batch_size=args.batch_size)
    _log_resolved("train", arch=arch, train=tcfg.to_dict(), dataset=args.dataset)
    samples = _load_samples(args.dataset)
    ckpt = train(samples, arch, tcfg, checkpoint_path=args.out)
    log.info("final loss %.6f", ckpt.metadata["loss_history"][-1])


def cmd_infer(args, config):
    ckpt = ModelCheckpoint.load(args.ckpt)
    problem = _read_problem(args.problem)
    simp = _simp_config(args, config)
    _log_resolved("infer", simp=simp, arch=ckpt.arch, resolution=[args.nx, args.ny], k_steps=args.k_steps)
    target = problem.rescaled(args.nx, args.ny)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    field = infer_field(ckpt, target)
    storage.save_array(out / "field.nta", field.reshape(args.ny, args.nx), "f32")
    g = nito_generate(ckpt, target, None, args.k_steps, simp, raw_field=field)
    storage.save_array(out / "rho.nta", g.grid, "f32")
    summary = {"compliance": g.compliance, "volume_fraction": g.volume_fraction, "k_steps": args.k_steps,
               "resolution": [args.nx, args.ny], "timings": g.timings}
    (out / "result.json").write_text(storage.dump_json(summary))
    (out / "problem.json").write_text(storage.dump_json(target.to_dict()))
    log.info("compliance %.6g, volume fraction %.4f", g.compliance, g.volume_fraction)


def _parse_ints(text: str):
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got '{text}'") from exc
    if any(v < 0 for v in values):
        raise UsageError("step counts must be non-negative")
    return values


def evaluate_dataset(ckpt, samples, simp_cfg, k_steps, threshold=None):
    """EvalRecords for every sample and step count; without a checkpoint the stored references are scored.

    With a threshold both the generated and the reference densities are binarized before evaluation.
    """
    records = []
    for s in samples:
        vf = s.problem.volume_fraction
        c_ref = s.compliance
        if threshold is not None:
            c_ref = SimpSolver(s.problem, simp_cfg).evaluate(s.rho, threshold)
        if ckpt is None:
            start = time.perf_counter()
            c = SimpSolver(s.problem, simp_cfg).evaluate(s.rho, threshold)
            volume = float(_volume(s.rho, threshold, simp_cfg))
            records.append(EvalRecord.from_volumes(s.id, c, c_ref, volume, vf, t_fea_s=time.perf_counter() - start))
            continue
        start = time.perf_counter()
        field = infer_field(ckpt, s.problem)
        t_field = time.perf_counter() - start
        for k in k_steps:
            g = nito_generate(ckpt, s.problem, None, k, simp_cfg, raw_field=field)
            c_gen, volume = g.compliance, g.volume_fraction
            if threshold is not None:
                c_gen = SimpSolver(s.problem, simp_cfg).evaluate(g.rho, threshold)
                volume = _volume(g.rho, threshold, simp_cfg)
            records.append(EvalRecord.from_volumes(
                s.id, c_gen, c_ref, volume, vf,
                t_field_s=t_field, t_opt_s=g.timings["opt"], t_fea_s=g.timings["fea"], k_steps=k,
            ))
    return records


def _volume(rho, threshold, cfg):
    return float(np.mean(rho if threshold is None else binarize(rho, threshold, cfg)))


def cmd_evaluate(args, config):
    manifest = read_manifest(args.dataset)
    simp = _section(config, "simp", SimpConfig) if "simp" in config else simp_config_from_manifest(manifest)
    k_steps = _parse_ints(args.k_steps)
    ckpt = ModelCheckpoint.load(args.ckpt) if args.ckpt else None
    _log_resolved("evaluate", simp=simp, k_steps=k_steps, ckpt=args.ckpt, dataset=args.dataset,
                  threshold=args.threshold)
    records = evaluate_dataset(ckpt, load_dataset(args.dataset), simp, [0] if ckpt is None else k_steps,
                               args.threshold)
    write_csv(args.out, records)
    summaries = {}
    for k in sorted({r.k_steps for r in records}):
        s = aggregate([r for r in records if r.k_steps == k])
        summaries[str(k)] = dataclasses.asdict(s)
        log.info("k=%d: CE mean %s median %s, VFE median %s, outliers %d/%d",
                 k, s.ce_mean, s.ce_median, s.vfe_median, s.outliers, s.count)
    Path(str(args.out) + ".summary.json").write_text(storage.dump_json(summaries))


def cmd_benchmark(args, config):
    manifest = read_manifest(args.dataset)
    simp = _section(config, "simp", SimpConfig) if "simp" in config else simp_config_from_manifest(manifest)
    ckpt = ModelCheckpoint.load(args.ckpt)
    _log_resolved("benchmark", simp=simp, k_steps=args.k_steps, ckpt=args.ckpt, dataset=args.dataset)
    samples = load_dataset(args.dataset)
    if args.limit:
        samples = samples[:args.limit]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "nx", "ny", "k_steps", "t_field_s", "t_opt_s", "t_fea_s", "t_nito_s", "t_simp_s",
                         "simp_iterations"])
        for s in samples:
            g = nito_generate(ckpt, s.problem, None, args.k_steps, simp)
            start = time.perf_counter()
            ref = optimize(s.problem, simp)
            t_simp = time.perf_counter() - start
            t_nito = sum(g.timings.values())
            writer.writerow([s.id, s.problem.nx, s.problem.ny, args.k_steps, g.timings["field"], g.timings["opt"],
                             g.timings["fea"], t_nito, t_simp, ref.iterations])
            log.info("%s: nito %.3fs, full simp %.3fs (%d iterations)", s.id, t_nito, t_simp, ref.iterations)


def cmd_export_png(args, config):
    from PIL import Image

    arr = np.asarray(storage.load_array(args.array), dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"expected a 2-D array, got shape {arr.shape}")
    if args.threshold is not None:
        arr = (arr >= args.threshold).astype(np.float64)
    # row 0 is the bottom of the domain; images are stored top row first
    pixels = np.round(np.clip(np.flipud(arr), 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(args.out)
    log.info("wrote %s (%dx%d)", args.out, arr.shape[1], arr.shape[0])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="JSON config with arch/train/simp/sampler sections")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS threads and worker processes")
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(prog="nito", description="Neural implicit topology optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset tools").add_subparsers(dest="action", required=True)
    p = ds.add_parser("generate", parents=[common], help="sample problems and solve them with SIMP")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fields", action="store_true", help="also store strain energy and von Mises fields")
    p.add_argument("--max-iters", type=int)
    p.set_defaults(func=cmd_dataset_generate)

    sp = sub.add_parser("simp", help="classical optimizer").add_subparsers(dest="action", required=True)
    p = sp.add_parser("solve", parents=[common], help="optimize one problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--init", help="ArrayBlob with an initial density field")
    p.set_defaults(func=cmd_simp_solve)

    p = sub.add_parser("train", parents=[common], help="train the conditional field")
    p.add_argument("--dataset", required=True, help="dataset directory, or several separated by commas")
    p.add_argument("--out", required=True)
    p.add_argument("--stages", help='e.g. "16:20:pref,32:20:pref,32:10:rand"')
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="generate a design with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-steps", type=int, default=10)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], help="compliance and volume errors against references")
    p.add_argument("--ckpt", help="omit to score the stored references against themselves")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k-steps", default="0,5,10")
    p.add_argument("--threshold", type=float, default=None, help="binarize densities before evaluating")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", parents=[common], help="wall-clock comparison with full SIMP")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-steps", type=int, default=10)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("export-png", parents=[common], help="grayscale image of a density array")
    p.add_argument("--array", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None, help="binarize at this density first")
    p.set_defaults(func=cmd_export_png)
    return parser


def _limit_threads(n):
    if n is None:
        return None
    if n < 1:
        raise UsageError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        limiter = _limit_threads(args.threads)
        config = _load_config(args.config)
        try:
            args.func(args, config)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (UsageError, ConfigurationError) as exc:
        log.error("usage error: %s", exc)
        return EXIT_USAGE
    except (FormatError, CheckpointError, ParameterError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (SolverError, StructuralError, OptimizerError, TrainingError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

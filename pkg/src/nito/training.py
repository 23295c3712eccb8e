"""Staged training of the conditional field and its checkpoint format."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nito import autodiff as ad
from nito import storage
from nito.errors import ArchitectureMismatch, CheckpointError, ConfigurationError, ParameterError, TrainingError
from nito.neural_field import ArchConfig, FourierBasis, NeuralField, bce_objective

log = logging.getLogger(__name__)

DEFAULT_STAGES = ((16, 20, True), (32, 20, True), (32, 10, False))
MATERIAL_THRESHOLD = 0.5


@dataclass(frozen=True)
class TrainConfig:
    stages: tuple = DEFAULT_STAGES  # (grid_size, epochs, material_preferred)
    lr_start: float = 1e-4
    lr_end: float = 5e-6
    batch_size: int = 4
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        stages = tuple((int(g), int(e), bool(p)) for g, e, p in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages or any(g < 1 or e < 0 for g, e, _ in stages):
            raise ConfigurationError(f"invalid stage list {stages}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.lr_start < 0 or self.lr_end < 0:
            raise ConfigurationError("learning rates must be non-negative")

    @property
    def total_epochs(self) -> int:
        return sum(e for _, e, _ in self.stages)

    def learning_rate(self, epoch: int) -> float:
        return ad.cosine_lr(epoch, self.total_epochs, self.lr_start, self.lr_end)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d


def parse_stages(text: str) -> tuple:
    """Parse ``"16:20:pref,32:20:pref,32:10:rand"`` into stage tuples."""
    stages = []
    for part in text.split(","):
        try:
            grid, epochs, mode = part.strip().split(":")
            if mode not in ("pref", "rand"):
                raise ValueError(mode)
            stages.append((int(grid), int(epochs), mode == "pref"))
        except ValueError as exc:
            raise ConfigurationError(f"bad stage '{part}': expected grid:epochs:pref|rand") from exc
    return tuple(stages)


def stage_sampler(grid, grid_size: int, material_preferred: bool, rng: np.random.Generator):
    """Pick one pixel per cell of a ``grid_size`` x ``grid_size`` partition.

    ``grid`` is the ``(ny, nx)`` density image. Returns pixel-centre
    coordinates ``(G*G, 2)`` and their stored densities, cells in row-major
    order. With ``material_preferred`` a cell holding any pixel with density
    at least 0.5 picks uniformly among those pixels.
    """
    grid = np.asarray(grid, dtype=np.float64)
    ny, nx = grid.shape
    if grid_size > min(nx, ny):
        raise ConfigurationError(f"sampling grid {grid_size} exceeds sample resolution {nx}x{ny}")
    jj, ii = np.divmod(np.arange(nx * ny), nx)
    cell = (jj * grid_size // ny) * grid_size + ii * grid_size // nx
    rho = grid.ravel()
    keys = rng.random(nx * ny)
    if material_preferred:
        keys = keys + (rho >= MATERIAL_THRESHOLD)
    order = np.lexsort((keys, cell))
    last = np.flatnonzero(np.r_[cell[order][1:] != cell[order][:-1], True])
    pick = order[last]
    coords = np.column_stack([(ii[pick] + 0.5) / nx, (jj[pick] + 0.5) / ny])
    return coords, rho[pick]


@dataclass
class ModelCheckpoint:
    model: NeuralField
    metadata: dict = field(default_factory=dict)

    @property
    def arch(self) -> ArchConfig:
        return self.model.arch

    def save(self, path):
        tensors = {name: p.value for name, p in self.model.params.items()}
        tensors["fourier.B"] = self.model.basis.B
        storage.write_checkpoint(path, self.arch.to_dict(), tensors, self.metadata)

    @classmethod
    def load(cls, path, expected: ArchConfig | None = None) -> "ModelCheckpoint":
        arch_dict, tensors, metadata = storage.read_checkpoint(path)
        try:
            arch = ArchConfig.from_dict(arch_dict)
        except (TypeError, ConfigurationError) as exc:
            raise CheckpointError(f"checkpoint architecture is unreadable: {exc}") from exc
        if expected is not None:
            for f in dataclasses.fields(ArchConfig):
                stored, requested = getattr(arch, f.name), getattr(expected, f.name)
                if stored != requested:
                    raise ArchitectureMismatch(f.name, stored, requested)
        if "fourier.B" not in tensors:
            raise CheckpointError("checkpoint has no Fourier basis")
        B = tensors.pop("fourier.B")
        B.setflags(write=False)
        params = {name: ad.parameter(value, name) for name, value in tensors.items()}
        try:
            model = NeuralField(arch, params, FourierBasis(B))
        except ConfigurationError as exc:
            raise CheckpointError(f"checkpoint tensors do not fit its architecture: {exc}") from exc
        return cls(model, metadata)


def _batch_points(samples, stage, rng):
    grid_size, _, preferred = stage
    coords, targets, owner = [], [], []
    for k, s in enumerate(samples):
        c, t = stage_sampler(s.grid, grid_size, preferred, rng)
        coords.append(c)
        targets.append(t)
        owner.append(np.full(len(t), k, dtype=np.int64))
    return np.concatenate(coords), np.concatenate(targets), np.concatenate(owner)


def train(samples, arch: ArchConfig = ArchConfig(), cfg: TrainConfig = TrainConfig(),
          checkpoint_path=None, model: NeuralField | None = None, on_epoch=None) -> ModelCheckpoint:
    """Run the staged curriculum over ``samples`` (a list of dataset samples).

    The learning rate follows the cosine schedule over the total epoch
    count and is stepped once per epoch. With ``checkpoint_path`` the
    current model is written after every epoch.
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("training needs at least one sample")
    for grid_size, _, _ in cfg.stages:
        small = min(min(s.problem.nx, s.problem.ny) for s in samples)
        if grid_size > small:
            raise ConfigurationError(f"stage grid {grid_size} exceeds the smallest sample resolution {small}")
    model = model if model is not None else NeuralField(arch)
    params = model.params
    state = ad.AdamWState(cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    history = []
    epoch = 0
    ckpt = ModelCheckpoint(model, {})
    for stage_index, stage in enumerate(cfg.stages):
        for _ in range(stage[1]):
            lr = cfg.learning_rate(epoch)
            start = time.perf_counter()
            order = rng.permutation(len(samples))
            total, count = 0.0, 0
            for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [samples[k] for k in order[lo:lo + cfg.batch_size]]
                coords, targets, owner = _batch_points(batch, stage, rng)
                conditions = ad.concat([model.condition(s.problem) for s in batch], axis=0)
                loss = bce_objective(model.forward(coords, conditions, owner), targets)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                grads = ad.backward(loss, params)
                try:
                    ad.adamw_step(params, grads, state, lr)
                except TrainingError as exc:
                    raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
                total += value * len(targets)
                count += len(targets)
            history.append(total / count)
            log.info("epoch %d stage %d lr %.3e loss %.6f (%.1fs)", epoch, stage_index, lr, history[-1],
                     time.perf_counter() - start)
            epoch += 1
            ckpt.metadata = {
                "epoch": epoch,
                "loss_history": list(history),
                "seed": cfg.seed,
                "train": cfg.to_dict(),
            }
            if checkpoint_path is not None:
                ckpt.save(checkpoint_path)
            if on_epoch is not None:
                on_epoch(epoch, history[-1])
    return ckpt

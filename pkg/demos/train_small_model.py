"""
Training a conditional field on a small dataset
===============================================

Generates a handful of random problems, solves each with SIMP, and fits a
reduced-size model to the optimized densities. Runs in a few minutes on a
laptop CPU; the full-size defaults need a few hundred samples to be useful.
"""

import sys
import tempfile
from pathlib import Path

from nito.dataset import build_dataset, load_dataset
from nito.neural_field import ArchConfig
from nito.simp import SimpConfig
from nito.training import ModelCheckpoint, TrainConfig, train

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="nito-demo-"))

# 24 problems on a 24 x 24 grid, each with random supports, loads and target volume
manifest = build_dataset(24, (24, 24), seed=1, cfg=SimpConfig(), out=work / "data")
samples = load_dataset(work / "data")
print(f"{len(samples)} samples, volume fractions "
      f"{min(s.problem.volume_fraction for s in samples):.2f} to {max(s.problem.volume_fraction for s in samples):.2f}")

# a narrow model keeps each step cheap
arch = ArchConfig(fourier_features=32, field_width=48, field_layers=3, pc_width=24, pc_blocks=1, vf_width=8)
cfg = TrainConfig(stages=((12, 10, True), (24, 10, True), (24, 5, False)), lr_start=1e-3, lr_end=1e-4)

ckpt = train(samples, arch, cfg, checkpoint_path=work / "model.nckp",
              on_epoch=lambda e, loss: print(f"epoch {e:2d} loss {loss:.4f}"))
print(f"{ckpt.model.n_parameters} parameters, checkpoint at {work / 'model.nckp'}")

# the checkpoint carries its architecture, so loading needs no config
restored = ModelCheckpoint.load(work / "model.nckp")
print("restored epoch", restored.metadata["epoch"])

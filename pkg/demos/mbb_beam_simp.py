"""
Classical SIMP on the MBB beam
==============================

Half of a simply supported beam, loaded at the top-left corner, with a
symmetry line on the left edge. The design is written as a PNG.
"""

import sys

import numpy as np
from PIL import Image

from nito import SimpConfig, mbb_beam, optimize

# a 60 x 20 element half-beam at 50% material
problem = mbb_beam(60, 20, volume_fraction=0.5)
cfg = SimpConfig(volume_fraction=problem.volume_fraction)

result = optimize(problem, cfg)
print(f"compliance {result.compliance:.4f} after {result.iterations} iterations "
      f"(converged: {result.converged})")
print(f"volume fraction {result.rho_phys.mean():.4f}")

# rows are stored bottom-up, images are drawn top-down
grid = result.rho_phys.reshape(problem.ny, problem.nx)
img = np.flipud(np.clip(grid, 0.0, 1.0) * 255).astype(np.uint8)
out = sys.argv[1] if len(sys.argv) > 1 else "mbb.png"
Image.fromarray(img).resize((problem.nx * 8, problem.ny * 8), Image.NEAREST).save(out)
print(f"wrote {out}")

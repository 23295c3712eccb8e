"""Neural implicit topology optimization on structured 2-D grids.

The package is layered: ``fea`` and ``simp`` implement the classical density
method, ``dataset`` samples problems and stores optimized designs,
``autodiff``, ``bpom`` and ``neural_field`` define the conditional network,
``training`` fits it, and ``pipeline`` plus ``metrics`` turn a trained model
into warm-started designs and error statistics.
"""
from nito.errors import NitoError
from nito.problem import Load, ProblemSpec, cantilever, mbb_beam
from nito.simp import SimpConfig, optimize

__version__ = "0.1.0"

__all__ = ["Load", "NitoError", "ProblemSpec", "SimpConfig", "cantilever", "mbb_beam", "optimize", "__version__"]

"""coverlab: random-walk coverage statistics on the torus Z_n^d (d >= 3).

Simulation engines (walk, excursion, latepoints), exact small-torus oracles
(oracle), lattice potential theory (potential), and a config-driven
experiment harness (harness, cli).
"""

__version__ = "0.1.0"

from .lattice import (AnnulusSpec, Decomposition, ShapeSpec, TorusGeometry,
                      decompose, shape_boundary, torus_distance)
from .walk import (VisitTracker, WalkConfig, WalkState, cover_time,
                   estimate_t_hit, run, run_until_uncovered_count,
                   sample_stationary_start, step, uncovered_set)

__all__ = [
    "AnnulusSpec", "Decomposition", "ShapeSpec", "TorusGeometry",
    "decompose", "shape_boundary", "torus_distance",
    "VisitTracker", "WalkConfig", "WalkState", "cover_time",
    "estimate_t_hit", "run", "run_until_uncovered_count",
    "sample_stationary_start", "step", "uncovered_set",
    "__version__",
]

"""Equilibrium proportional insurance in a surplus-sharing pool.

Three routes to the same equilibrium object:

- :mod:`micmfg.riccati` solves the unconstrained quadratic case exactly
  through backward matrix equations (the reference curves),
- :mod:`micmfg.deepbsde` trains a small-network solver that also handles
  interval constraints and non-quadratic rewards,
- :mod:`micmfg.nplayer` simulates the finite pool to measure how fast the
  infinite-population approximation becomes exact.

:mod:`micmfg.model` owns parameters, reward families, and solvability
checks; :mod:`micmfg.paths` owns reproducible randomness.
"""

from . import cases, deepbsde, model, nets, nplayer, paths, riccati
from .model import (
    HaraMixture,
    Interval,
    MarketParams,
    Quadratic,
    SurvivalSpec,
    build_market,
    check_wellposedness,
    load_config,
    sharing_matrices,
    survival_transform,
)
from .paths import PathBatch, brownian_increments, euler_step

__version__ = "0.1.0"

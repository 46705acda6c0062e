"""Directional Bayesian quantile regression for 2D and 3D responses.

Each direction ``u`` on the unit sphere gets its own quantile regression of
``u'Y`` on the orthogonal projection and covariates, fitted by a Gibbs
sampler under an asymmetric Laplace working likelihood. A Gaussian-process
adjustment across levels removes quantile crossing, and intersecting the
per-direction upper halfspaces gives the quantile regions.
"""

from .errors import (AdjustmentFailure, DirquantError, DivergedChain, IngestionError,
                     InvalidArgument, InvalidState, NumericalFailure)
from .geometry import Direction, complement_basis, direction_grid, project
from .gp_adjust import GpConfig, bandwidth_search, gp_predict, induced_quantile
from .orchestrator import ModelData, ModelSpec, SplineConfig, plan, prepare, run_all, summarize
from .regions import Halfspace, intersect, nesting_check, subgradient_check
from .sampler import McmcSettings, PriorSpec, gibbs_run
from .synthetic import GeneratorSpec, generate

__version__ = "0.1.0"

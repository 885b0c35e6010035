"""Projected annealed Langevin sampling for constrained score-based generation."""

from .core import (ConfigurationError, DimensionError, NoiseSchedule, NumericError, RngStream,
                   StateVector, make_geometric_schedule)
from .metrics import (SatisfactionCurve, path_length, porosity_measure, satisfaction_curve,
                      sliced_wasserstein, success_rate)
from .projections import (AffineConstraint, BallConstraint, BoxConstraint, ConstraintSet,
                          ConvergenceError, HalfspaceConstraint, IdentityConstraint,
                          IntersectionConstraint, ObjectPlacementConstraint, PorosityConstraint,
                          ProjectionError, RowwiseConstraint, TrajectoryConstraint)
from .sampler import (VARIANTS, ChainTrace, DivergenceError, ProjectedLangevinSampler,
                      SamplerConfig, sample, sample_sde_corrector)
from .score import (DsmConfig, DsmScoreModel, GaussianMixture, MlpScoreNet, TrainingError,
                    gmm_score)
from .theory import (TheoremProbe, compute_rho, verify_corollary1, verify_theorem1)

__all__ = [
    "AffineConstraint", "BallConstraint", "BoxConstraint", "ChainTrace", "ConfigurationError",
    "ConstraintSet", "ConvergenceError", "DimensionError", "DivergenceError", "DsmConfig",
    "DsmScoreModel", "GaussianMixture", "HalfspaceConstraint", "IdentityConstraint",
    "IntersectionConstraint", "MlpScoreNet", "NoiseSchedule", "NumericError",
    "ObjectPlacementConstraint", "PorosityConstraint", "ProjectedLangevinSampler",
    "ProjectionError", "RngStream", "RowwiseConstraint", "SamplerConfig", "SatisfactionCurve",
    "StateVector", "TheoremProbe", "TrainingError", "TrajectoryConstraint", "VARIANTS",
    "compute_rho", "gmm_score", "make_geometric_schedule", "path_length", "porosity_measure",
    "sample", "sample_sde_corrector", "satisfaction_curve", "sliced_wasserstein",
    "success_rate", "verify_corollary1", "verify_theorem1",
]

__version__ = "0.1.0"

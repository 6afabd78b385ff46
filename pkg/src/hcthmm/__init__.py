"""Hierarchical continuous-time hidden Markov models for zero-inflated counts.

The latent activity state evolves as a continuous-time Markov chain observed
at irregular times; counts are zero-inflated Poisson in state 1 and Poisson
in states 2..M, with GLM links on covariates.  Parameter blocks can be
subject-, subgroup-, or population-level; fitting maximizes the joint
likelihood under the induced equality constraints via consensus ADMM.
"""

from .admm import FitConfig, FitResult, bic, fit, initialize, warm_fit
from .bootstrap import BootstrapResult, bootstrap
from .ctmc import (
    PiecewiseConstantPath,
    sample_path,
    stationary_distribution,
    transition_matrix,
)
from .emissions import EmissionCoeffs, log_emission, sample_emission
from .errors import HcthmmError
from .hierarchy import ConstraintSystem, HierarchySpec, Level, build_constraints
from .inference import (
    ForwardBackwardResult,
    PosteriorSummary,
    forward_backward,
    grad_neg_loglik,
    joint_neg_loglik,
    neg_loglik,
    time_in_state,
)
from .params import (
    NaturalParams,
    SubjectSeries,
    ThetaSubject,
    from_natural,
    to_natural,
)
from .preprocess import PreprocessConfig, PreprocessReport, RawActivityRecord, preprocess
from .simulate import CohortTruth, SimDesign, generate_cohort

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "CohortTruth",
    "ConstraintSystem",
    "EmissionCoeffs",
    "FitConfig",
    "FitResult",
    "ForwardBackwardResult",
    "HcthmmError",
    "HierarchySpec",
    "Level",
    "NaturalParams",
    "PiecewiseConstantPath",
    "PosteriorSummary",
    "PreprocessConfig",
    "PreprocessReport",
    "RawActivityRecord",
    "SimDesign",
    "SubjectSeries",
    "ThetaSubject",
    "bic",
    "bootstrap",
    "build_constraints",
    "fit",
    "forward_backward",
    "from_natural",
    "generate_cohort",
    "grad_neg_loglik",
    "initialize",
    "joint_neg_loglik",
    "log_emission",
    "neg_loglik",
    "preprocess",
    "sample_emission",
    "sample_path",
    "stationary_distribution",
    "time_in_state",
    "to_natural",
    "transition_matrix",
    "warm_fit",
]

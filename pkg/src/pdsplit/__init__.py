"""Primal-dual operator splitting with machine-checked rate bounds."""

from .diagnostics import (ErgodicAccumulator, Monitor, RateReport, TraceRecord, ergodic_bound_rhs, fit_rate_slope,
                          kappa_u, nonergodic_bound_rhs, pre_gap, prs_ergodic_gap_distance, s_lower_bound)
from .engine import (AlgorithmConfig, InclusionProblem, SchemeState, fbf_step, fbs_step, ppa_step, prepare,
                     prs_step, run, unified_update)
from .errors import (BuildError, CapabilityError, ConfigError, LayoutError, MetricIntegrityError,
                     MetricSequenceError, PdsplitError)
from .metric import (Layout, MetricOperator, MetricSequence, inner_u, loewner_dominates, norm_u,
                     validate_sequence)
from .model import MetricClassConfig, ModelProblem, SplitProblem, build_metric, build_split, fb_class1, fb_class2
from .operators import BlockFunction, BlockLinearMap, Resolvent, SkewOperator, operator_norm, reflect, skew_resolvent

__version__ = "0.1.0"

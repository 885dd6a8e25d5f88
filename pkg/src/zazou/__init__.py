"""Tree-aware correction of p-values with a shifted Ornstein-Uhlenbeck model.

The z-scores of the leaves of a phylogeny are modelled as an OU process with
sparse negative shifts on the branches.  Shifts are estimated with a
sign-constrained scaled lasso, debiased, and turned into leaf-level q-values
with an FDR threshold suited to debiased estimators.
"""

from __future__ import annotations

__version__ = "0.1.0"

from ._backend import BACKEND
from .debias import ScoreSystem, confidence_intervals, debias, score_system_ci, score_system_ss
from .design import OUDesign, build_design, ou_covariance, whitening_factor
from .errors import (DegenerateFitError, InputError, LabelMismatchError, NewickSyntaxError,
                     NumericalError, SingularCovarianceError, TreeValidationError, ZazouError)
from .inference import (BICTrace, CorrectionConfig, CorrectionResult, bh_adjust, bic_select,
                        by_adjust, correct, fdr_threshold, p_to_z, q_values)
from .solvers import (ConstrainedLassoProblem, ShiftFit, SolverOptions, constrained_lasso,
                      scaled_lasso)
from .tree import UltrametricTree, geometry, incidence, parse_newick, serialize_newick

__all__ = [
    "__version__",
    "BACKEND",
    "UltrametricTree",
    "parse_newick",
    "serialize_newick",
    "geometry",
    "incidence",
    "OUDesign",
    "build_design",
    "ou_covariance",
    "whitening_factor",
    "ConstrainedLassoProblem",
    "ShiftFit",
    "SolverOptions",
    "constrained_lasso",
    "scaled_lasso",
    "ScoreSystem",
    "score_system_ss",
    "score_system_ci",
    "debias",
    "confidence_intervals",
    "BICTrace",
    "CorrectionConfig",
    "CorrectionResult",
    "bic_select",
    "correct",
    "fdr_threshold",
    "q_values",
    "p_to_z",
    "bh_adjust",
    "by_adjust",
    "ZazouError",
    "InputError",
    "NewickSyntaxError",
    "TreeValidationError",
    "LabelMismatchError",
    "NumericalError",
    "SingularCovarianceError",
    "DegenerateFitError",
]

"""Line search for averaged iterations of nonexpansive operators.

Forward-backward splitting, Douglas-Rachford, ADMM, consensus and
alternating projections, with a fixed-point-residual line search that
reuses cached affine evaluations so candidate steps are cheap.
"""

from .engine import (CONVERGED, INFEASIBLE, MAX_ITERATIONS, GeometricBacktrack,
                     IterationTrace, LinearForward, LineSearchConfig, SolveResult,
                     SplitOperator, run, step)
from .estimator import NonNegativeLeastSquares
from .exceptions import (ConfigError, ConvergenceError, FactorizationError, NumericalFailure,
                         ProblemFormatError)
from .operators import (AffineMap, AffineSet, Ball, ConsensusSet, Halfspace, Hyperplane,
                        Indicator, L1Norm, NonnegativeOrthant, Quadratic, Zero,
                        prox_quadratic_affine, reflect)
from .splitting import (ProblemADMM, ProblemDR, ProblemFBS, build_admm, build_ap,
                        build_consensus, build_dr, build_fbs)

__version__ = "0.1.0"

__all__ = [
    "AffineMap", "AffineSet", "Ball", "ConsensusSet", "Halfspace", "Hyperplane", "Indicator",
    "L1Norm", "NonnegativeOrthant", "Quadratic", "Zero", "prox_quadratic_affine", "reflect",
    "CONVERGED", "INFEASIBLE", "MAX_ITERATIONS", "GeometricBacktrack", "LinearForward",
    "LineSearchConfig", "IterationTrace", "SolveResult", "SplitOperator", "run", "step",
    "ProblemADMM", "ProblemDR", "ProblemFBS", "build_admm", "build_ap", "build_consensus",
    "build_dr", "build_fbs", "NonNegativeLeastSquares", "ConfigError", "ConvergenceError",
    "FactorizationError", "NumericalFailure", "ProblemFormatError",
]

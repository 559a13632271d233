"""scikit-learn compatible wrapper for nonnegative least squares."""

import numpy as np
from scipy.linalg import eigvalsh
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .engine import CONVERGED, GeometricBacktrack, LineSearchConfig, run
from .operators import Indicator, NonnegativeOrthant, Quadratic
from .splitting import ProblemDR, build_dr


def _auto_gamma(P):
    lam = eigvalsh(P)
    lmax = float(lam[-1])
    if lmax <= 0.0:
        return 1.0
    return 1.0 / np.sqrt(lmax * max(float(lam[0]), 0.01 * lmax))


class NonNegativeLeastSquares(RegressorMixin, BaseEstimator):
    """Least squares with ``coef_ >= 0`` solved by Douglas-Rachford splitting.

    Parameters
    ----------
    gamma : float or "auto"
        Douglas-Rachford step size. ``"auto"`` uses
        ``1 / sqrt(lmax * max(lmin, 0.01 * lmax))`` with ``lmin, lmax`` the
        extreme eigenvalues of ``2 X'X``.
    alpha : float
        Relaxation (nominal step length), in (0, 1).
    line_search : bool
        Search along the fixed-point residual for longer steps.
    epsilon, alpha_max, backtrack : float
        Acceptance margin, largest step tried and geometric backtracking factor.
    tol : float
        Relative fixed-point residual tolerance.
    max_iter : int
    """

    def __init__(self, gamma="auto", alpha=0.5, line_search=True, epsilon=0.03, alpha_max=50.0,
                 backtrack=1 / 1.4, tol=1e-8, max_iter=100_000):
        self.gamma = gamma
        self.alpha = alpha
        self.line_search = line_search
        self.epsilon = epsilon
        self.alpha_max = alpha_max
        self.backtrack = backtrack
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        n = X.shape[1]
        P = 2.0 * X.T @ X
        f = Quadratic(P, -2.0 * X.T @ y)
        self.gamma_ = _auto_gamma(P) if self.gamma == "auto" else float(self.gamma)
        op = build_dr(ProblemDR(f, Indicator(NonnegativeOrthant(n)), self.gamma_, self.alpha))
        cfg = LineSearchConfig(
            epsilon=self.epsilon, alpha_max=self.alpha_max,
            schedule=GeometricBacktrack(self.backtrack),
            activation="always" if self.line_search else "never",
            tol=self.tol, max_iter=self.max_iter)
        result = run(op, np.zeros(n), cfg)
        # x = prox_f(z) is only feasible in the limit; clip the remaining violation
        self.coef_ = np.maximum(op.solution(result.x), 0.0)
        self.n_iter_ = result.iterations
        self.converged_ = result.status == CONVERGED
        self.trace_ = result.trace
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return X @ self.coef_

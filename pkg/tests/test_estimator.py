import numpy as np
import pytest
from scipy.optimize import nnls
from sklearn.exceptions import NotFittedError
from sklearn.utils.estimator_checks import parametrize_with_checks

from avgls import NonNegativeLeastSquares


@parametrize_with_checks([NonNegativeLeastSquares(tol=1e-6)])
def test_sklearn_compatible(estimator, check):
    check(estimator)


def test_matches_scipy_nnls(rng):
    X = rng.standard_normal((40, 15))
    y = rng.standard_normal(40)
    est = NonNegativeLeastSquares().fit(X, y)
    ref, _ = nnls(X, y)
    assert est.converged_
    assert np.all(est.coef_ >= 0)
    np.testing.assert_allclose(est.coef_, ref, atol=1e-6)
    np.testing.assert_allclose(est.predict(X), X @ ref, atol=1e-5)


def test_line_search_reduces_iterations(rng):
    X = rng.standard_normal((80, 60)) * rng.uniform(0.1, 1.1, size=(80, 1))
    y = rng.standard_normal(80)
    fast = NonNegativeLeastSquares(tol=1e-6).fit(X, y)
    slow = NonNegativeLeastSquares(tol=1e-6, line_search=False).fit(X, y)
    assert fast.n_iter_ < slow.n_iter_
    np.testing.assert_allclose(fast.coef_, slow.coef_, atol=1e-4)


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        NonNegativeLeastSquares().predict(np.zeros((2, 2)))

import numpy as np
import pytest

from avgls.operators import AffineMap, ProxOperator
from avgls.engine import SForm, SplitOperator

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pd(rng, n, shift=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T / n + shift * np.eye(n)


def random_rotation(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def clip_s2(n, lo=-1.0, hi=1.0):
    """A cheap nonexpansive s2 (box projection)."""
    return ProxOperator(lambda y: np.clip(y, lo, hi), n, name="box")


def affine_split(F, h, s2=None, alpha=0.5, form=SForm):
    n = F.shape[0]
    return SplitOperator(s1=AffineMap.from_matrix(F, h), s2=s2 or clip_s2(n), form=form,
                         alpha_nominal=alpha, n=n)


def identity_split(n, alpha=0.5):
    return SplitOperator(s1=AffineMap.identity(n), s2=ProxOperator(lambda y: y, n), form=SForm,
                         alpha_nominal=alpha, n=n)

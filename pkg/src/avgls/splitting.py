"""Builders turning optimization problems into :class:`SplitOperator` instances.

=====================  ======  ===========================  =================
algorithm              form    s1 (affine part)             s2
=====================  ======  ===========================  =================
forward-backward       T       I - gamma P, shift -gamma q  prox of gamma g
Douglas-Rachford       S       reflected prox of f          reflected prox g
ADMM (DR form)         S       R2 (g quadratic, KKT)        R1 (f)
consensus              S       consensus reflection         blockwise R_f_i
alternating proj.      T       projection onto D            projection on C
=====================  ======  ===========================  =================
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .engine import SForm, SplitOperator, TForm
from .exceptions import ConfigError, ConvergenceError
from .operators import AffineMap, ProxOperator, Quadratic, reflect

__all__ = [
    "ProblemFBS",
    "ProblemDR",
    "ProblemADMM",
    "ADMMState",
    "ADMMSolution",
    "estimate_lipschitz",
    "build_fbs",
    "build_dr",
    "build_admm",
    "build_consensus",
    "build_ap",
    "admm_standard_iterate",
    "admm_initial_standard_state",
]


def estimate_lipschitz(P, tol=1e-12, max_iter=100_000, seed=0):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    The start vector is drawn from ``numpy.random.default_rng(seed)``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    if P.shape != (n, n):
        raise ConfigError("P must be square")
    if not np.any(P):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = P @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


@dataclass
class ProblemFBS:
    """``minimize 1/2 x'Px + q'x + g(x)``."""

    P: np.ndarray
    q: np.ndarray
    g: object
    gamma: float
    L: Optional[float] = None


@dataclass
class ProblemDR:
    """``minimize f(x) + g(x)``; ``f`` should have an affine prox for the fast path."""

    f: object
    g: object
    gamma: float = 1.0
    alpha: float = 0.5


@dataclass
class ProblemADMM:
    """``minimize f(x) + g(z)  s.t.  A x + B z = c``.

    ``g`` must be a :class:`~avgls.operators.Quadratic` so that the reflected
    operator built from it is affine.
    """

    f: object
    g: Quadratic
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    rho: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.c = np.asarray(self.c, dtype=float).ravel()
        p = self.c.shape[0]
        if self.A.shape[0] != p or self.B.shape[0] != p:
            raise ConfigError(
                f"A is {self.A.shape}, B is {self.B.shape}, c has length {p}: row counts differ")
        if self.f.n != self.A.shape[1]:
            raise ConfigError(f"f has dimension {self.f.n}, A has {self.A.shape[1]} columns")
        if self.g.n != self.B.shape[1]:
            raise ConfigError(f"g has dimension {self.g.n}, B has {self.B.shape[1]} columns")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"relaxation alpha must lie in (0, 1), got {alpha}")


def build_fbs(prob):
    """Forward-backward splitting in T-form with ``T1 = I - gamma grad f``."""
    P = np.atleast_2d(np.asarray(prob.P, dtype=float))
    n = P.shape[0]
    q = np.asarray(prob.q, dtype=float)
    L = estimate_lipschitz(P) if prob.L is None else float(prob.L)
    gamma = float(prob.gamma)
    if L <= 0:
        raise ConfigError("the gradient Lipschitz constant must be positive")
    if not 0.0 < gamma < 2.0 / L:
        raise ConfigError(f"gamma={gamma} outside (0, 2/L) with L={L}")
    T1 = AffineMap.from_matrix(np.eye(n) - gamma * P, -gamma * q)
    T2 = prob.g.prox(gamma)
    return SplitOperator(s1=T1, s2=T2, form=TForm, alpha_nominal=2.0 / (4.0 - gamma * L),
                         n=n, name="fbs")


def build_dr(prob):
    """Douglas-Rachford ``z -> R_g R_f z`` with relaxation ``alpha``.

    The recovered solution is ``prox_{gamma f}(z)``.
    """
    _check_alpha(prob.alpha)
    if prob.gamma <= 0:
        raise ConfigError("gamma must be positive")
    if prob.f.n != prob.g.n:
        raise ConfigError(f"f has dimension {prob.f.n}, g has {prob.g.n}")
    prox_f = prob.f.prox(prob.gamma)
    s1 = reflect(prox_f)
    s2 = reflect(prob.g.prox(prob.gamma))
    return SplitOperator(s1=s1, s2=s2, form=SForm, alpha_nominal=prob.alpha,
                         n=prob.f.n, recover=prox_f, name="dr")


class ADMMSolution(NamedTuple):
    x: np.ndarray
    z: np.ndarray


def _admm_maps(prob):
    """``z(v)`` as an AffineMap of ``w = -v`` and the ``x`` solve of ``f``."""
    zmap = prob.g.argmin_map(prob.B, prob.rho)
    xsolve = prob.f.argmin_map(prob.A, prob.rho)
    return zmap, xsolve


def build_admm(prob):
    """ADMM as Douglas-Rachford on ``v`` (``rho = 1/gamma``).

    ``s1 = R2``: ``v -> -2 B z(v) - v`` with ``z(v) = argmin g(z) + rho/2 ||Bz + v||^2``
    (affine through one KKT factorization); ``s2 = R1``:
    ``w -> 2 A x(w + c) - 2c - w``. The residual equals ``2(Ax + Bz - c)``.
    """
    zmap, xsolve = _admm_maps(prob)
    A, B, c = prob.A, prob.B, prob.c
    p = c.shape[0]
    zlin = zmap.linear

    # z(v) = zlin(-v) + z0, so the linear part of R2 is d -> 2 B zlin(d) - d
    R2 = AffineMap(lambda d: 2.0 * (B @ zlin(d)) - d, -2.0 * (B @ zmap.offset),
                   backing="kkt")

    def R1(w):
        return 2.0 * (A @ xsolve(w + c)) - 2.0 * c - w

    def recover(v):
        z = zmap(-v)
        x = xsolve(c - 2.0 * (B @ z) - v)
        return ADMMSolution(x, z)

    return SplitOperator(s1=R2, s2=ProxOperator(R1, p, name="R1"), form=SForm,
                         alpha_nominal=prob.alpha, n=p, recover=recover, name="admm")


class ADMMState(NamedTuple):
    x: np.ndarray
    x_A: np.ndarray
    z: np.ndarray
    u: np.ndarray


def _solve_quadratic_coupled(f, M, rho, w):
    """Direct dense solve of ``argmin f(x) + rho/2 ||Mx - w||^2`` (no caching)."""
    n = f.n
    H = f.P + rho * M.T @ M
    rhs = rho * M.T @ w - f.q
    if f.Aeq is None:
        return np.linalg.solve(H, rhs)
    m = f.Aeq.shape[0]
    K = np.block([[H, f.Aeq.T], [f.Aeq, np.zeros((m, m))]])
    return np.linalg.solve(K, np.concatenate([rhs, f.beq]))[:n]


def _argmin_standard(f, M, rho, w):
    if isinstance(f, Quadratic):
        return _solve_quadratic_coupled(f, M, rho, w)
    return f.argmin_map(M, rho)(w)


def admm_standard_iterate(prob, state):
    """One iteration of standard-form relaxed ADMM with scaled dual ``u``.

    Independent of :func:`build_admm`; subproblems are solved from scratch.
    """
    A, B, c, rho, a = prob.A, prob.B, prob.c, prob.rho, prob.alpha
    x = _argmin_standard(prob.f, A, rho, c - B @ state.z - state.u)
    x_A = 2 * a * (A @ x) - (1 - 2 * a) * (B @ state.z - c)
    z = _argmin_standard(prob.g, B, rho, c - x_A - state.u)
    u = state.u + x_A + B @ z - c
    return ADMMState(x, x_A, z, u)


def admm_initial_standard_state(prob, v0):
    """Standard-form state matching DR-form start ``v0`` (``u = v + B z``)."""
    z0 = _argmin_standard(prob.g, prob.B, prob.rho, -np.asarray(v0, dtype=float))
    n = prob.A.shape[1]
    return ADMMState(np.zeros(n), np.zeros(prob.c.shape[0]), z0, v0 + prob.B @ z0)


def build_consensus(fs, gamma):
    """Consensus over ``N`` local functions on the stacked space ``R^{N n}``.

    ``s1`` is the consensus reflection ``z_i -> 2 z_av - z_i`` and ``s2``
    applies ``R_{gamma f_i}`` blockwise; the averaging parameter is 1/2.
    """
    fs = list(fs)
    if not fs:
        raise ConfigError("need at least one local function")
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    n = fs[0].n
    if any(f.n != n for f in fs):
        raise ConfigError(f"local functions have dimensions {[f.n for f in fs]}")
    N = len(fs)
    proxes = [f.prox(gamma) for f in fs]
    refls = [reflect(p) for p in proxes]

    def avg(d):
        return np.tile(d.reshape(N, n).mean(axis=0), N)

    s1 = AffineMap(lambda d: 2.0 * avg(d) - d, np.zeros(N * n), backing="matrix")

    def blockwise(y):
        blocks = y.reshape(N, n)
        return np.concatenate([R(b) for R, b in zip(refls, blocks)])

    def recover(z):
        y = s1(z).reshape(N, n)
        return np.mean([p(b) for p, b in zip(proxes, y)], axis=0)

    return SplitOperator(s1=s1, s2=ProxOperator(blockwise, N * n, gamma, name="blockwise R_f"),
                         form=SForm, alpha_nominal=0.5, n=N * n, recover=recover,
                         name="consensus")


def build_ap(C, D):
    """Alternating projections ``x -> P_C P_D x`` in T-form (implied averaging 2/3)."""
    if C.dim != D.dim:
        raise ConfigError(f"sets have dimensions {C.dim} and {D.dim}")
    return SplitOperator(s1=D.projector(), s2=C.projector(), form=TForm,
                         alpha_nominal=2.0 / 3.0, n=C.dim, name="ap")

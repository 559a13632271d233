"""Proximal operators, projections, reflections and affine maps.

Every operator here is a callable ``R^n -> R^n`` that is immutable after
construction. Operators that are affine are returned as :class:`AffineMap`
instances so that callers can evaluate the linear part separately, which is
what the cached line search relies on.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .exceptions import ConfigError, FactorizationError

__all__ = [
    "AffineMap",
    "KKTSolver",
    "ProxOperator",
    "Reflection",
    "quadratic_argmin_map",
    "prox_quadratic_affine",
    "reflect",
    "project",
    "consensus_reflect",
    "NonnegativeOrthant",
    "Ball",
    "AffineSet",
    "Hyperplane",
    "Halfspace",
    "ConsensusSet",
    "Zero",
    "Quadratic",
    "L1Norm",
    "Indicator",
]


def _as_vector(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional, got shape {x.shape}")
    return x


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class AffineMap:
    """Affine operator ``x -> F x + h``.

    Parameters
    ----------
    linear : callable
        Applies the linear part ``d -> F d``.
    offset : array_like
        The constant ``h``; equals ``apply(0)``.
    in_dim : int, optional
        Input dimension. Defaults to ``len(offset)`` (square map).
    backing : str
        Tag describing how ``F`` is realised: ``"matrix"``, ``"kkt"`` or
        ``"composite"``.
    """

    def __init__(self, linear, offset, in_dim=None, backing="matrix", matrix=None):
        self._linear = linear
        self.offset = _frozen(offset)
        self.out_dim = self.offset.shape[0]
        self.in_dim = self.out_dim if in_dim is None else int(in_dim)
        self.backing = backing
        self._matrix = None if matrix is None else _frozen(matrix)

    @classmethod
    def from_matrix(cls, F, h=None):
        F = np.array(F, dtype=float)
        if F.ndim != 2:
            raise ConfigError("F must be a 2-d array")
        h = np.zeros(F.shape[0]) if h is None else _as_vector(h, "h")
        if h.shape[0] != F.shape[0]:
            raise ConfigError(f"h has length {h.shape[0]}, expected {F.shape[0]}")
        F = _frozen(F)
        return cls(lambda d: F @ d, h, in_dim=F.shape[1], backing="matrix", matrix=F)

    @classmethod
    def identity(cls, n):
        return cls(lambda d: np.array(d, dtype=float), np.zeros(n), backing="matrix",
                   matrix=np.eye(n))

    @property
    def n(self):
        return self.out_dim

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.in_dim,):
            raise ConfigError(f"expected input of shape ({self.in_dim},), got {x.shape}")
        return x

    def linear(self, d):
        """Apply only the linear part ``F d``."""
        return self._linear(self._check(d))

    def __call__(self, x):
        return self._linear(self._check(x)) + self.offset

    apply = __call__

    def compose(self, inner):
        """Return the affine map ``x -> self(inner(x))``."""
        if inner.out_dim != self.in_dim:
            raise ConfigError("dimension mismatch in composition")
        outer_lin = self._linear
        inner_lin = inner._linear
        return AffineMap(lambda d: outer_lin(inner_lin(d)), self(inner.offset),
                         in_dim=inner.in_dim, backing="composite")

    def combine(self, a, b):
        """Return ``x -> a * self(x) + b * x`` (square maps only)."""
        if self.in_dim != self.out_dim:
            raise ConfigError("combine requires a square map")
        lin = self._linear
        backing = self.backing if self.backing == "kkt" else "composite"
        return AffineMap(lambda d: a * lin(d) + b * d, a * self.offset,
                         backing=backing)

    def to_matrix(self):
        """Materialise ``F`` densely (one linear application per column)."""
        if self._matrix is not None:
            return np.array(self._matrix)
        eye = np.eye(self.in_dim)
        return np.column_stack([self._linear(eye[:, j]) for j in range(self.in_dim)])

    def __repr__(self):
        return f"AffineMap(shape={self.shape}, backing={self.backing!r})"


class KKTSolver:
    """Factorize ``[[H, C^T], [C, 0]]`` once; solves afterwards are cheap.

    Without equality constraints ``H`` is Cholesky-factorized, otherwise the
    whole saddle-point matrix is LU-factorized.
    """

    def __init__(self, H, C=None):
        H = np.array(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ConfigError(f"H must be square, got shape {H.shape}")
        n = H.shape[0]
        self.n = n
        if C is not None:
            C = np.atleast_2d(np.array(C, dtype=float))
            if C.shape[0] == 0:
                C = None
        if C is not None and C.shape[1] != n:
            raise ConfigError(f"constraint matrix has {C.shape[1]} columns, expected {n}")
        self.m = 0 if C is None else C.shape[0]

        if C is None:
            try:
                self._chol = sla.cho_factor(H, lower=True, check_finite=True)
                self._lu = None
                return
            except np.linalg.LinAlgError:
                rank = np.linalg.matrix_rank(H)
                if rank == n:
                    # indefinite but nonsingular: fall through to LU
                    self._chol = None
                else:
                    raise FactorizationError(
                        f"KKT matrix is singular: rank {rank} < {n} "
                        f"(rank defect {n - rank})", rank=rank, size=n) from None
            K = H
        else:
            rank_c = np.linalg.matrix_rank(C)
            if rank_c < C.shape[0]:
                raise FactorizationError(
                    f"equality constraint matrix is rank deficient: rank {rank_c} < "
                    f"{C.shape[0]} rows (rank defect {C.shape[0] - rank_c})",
                    rank=rank_c, size=C.shape[0])
            K = np.block([[H, C.T], [C, np.zeros((self.m, self.m))]])
            rank = np.linalg.matrix_rank(K)
            if rank < n + self.m:
                raise FactorizationError(
                    f"KKT matrix is singular: rank {rank} < {n + self.m} "
                    f"(rank defect {n + self.m - rank})", rank=rank, size=n + self.m)
        self._chol = None
        self._lu = sla.lu_factor(K, check_finite=True)

    def solve(self, top, bottom=None):
        """Return the primal block of the solution for right-hand side (top, bottom)."""
        if self._chol is not None:
            return sla.cho_solve(self._chol, top, check_finite=False)
        if self.m:
            rhs = np.concatenate([top, np.zeros(self.m) if bottom is None else bottom])
        else:
            rhs = top
        return sla.lu_solve(self._lu, rhs, check_finite=False)[: self.n]


def quadratic_argmin_map(P, q=None, Aeq=None, beq=None, M=None, rho=1.0):
    """Affine map ``w -> argmin_x 1/2 x'Px + q'x + rho/2 ||Mx - w||^2  s.t. Aeq x = beq``.

    The KKT matrix ``[[P + rho M'M, Aeq'], [Aeq, 0]]`` is factorized here and
    only solves happen on application.
    """
    P = np.atleast_2d(np.array(P, dtype=float))
    n = P.shape[0]
    if P.shape != (n, n):
        raise ConfigError(f"P must be square, got shape {P.shape}")
    if not np.allclose(P, P.T, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ConfigError("P must be symmetric")
    q = np.zeros(n) if q is None else _as_vector(q, "q")
    if q.shape[0] != n:
        raise ConfigError(f"q has length {q.shape[0]}, expected {n}")
    M = np.eye(n) if M is None else np.atleast_2d(np.array(M, dtype=float))
    if M.shape[1] != n:
        raise ConfigError(f"M has {M.shape[1]} columns, expected {n}")
    if rho <= 0:
        raise ConfigError("rho must be positive")
    if Aeq is not None:
        Aeq = np.atleast_2d(np.array(Aeq, dtype=float))
        if Aeq.shape[1] != n:
            raise ConfigError(f"Aeq has {Aeq.shape[1]} columns, expected {n}")
        beq = _as_vector(beq, "beq")
        if beq.shape[0] != Aeq.shape[0]:
            raise ConfigError(f"beq has length {beq.shape[0]}, expected {Aeq.shape[0]}")
    elif beq is not None:
        raise ConfigError("beq given without Aeq")

    kkt = KKTSolver(P + rho * M.T @ M, Aeq)
    rhoMt = rho * M.T
    h = kkt.solve(-q, beq)
    amap = AffineMap(lambda d: kkt.solve(rhoMt @ d), h, in_dim=M.shape[0],
                     backing="kkt")
    amap.kkt = kkt
    return amap


def prox_quadratic_affine(P, q=None, Aeq=None, beq=None, gamma=1.0):
    """Prox of ``f(x) = 1/2 x'Px + q'x`` restricted to ``Aeq x = beq``.

    Returns an :class:`AffineMap` realising ``z -> prox_{gamma f}(z)`` through
    one cached factorization of ``[[P + I/gamma, Aeq'], [Aeq, 0]]``.
    """
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    amap = quadratic_argmin_map(P, q, Aeq, beq, M=None, rho=1.0 / gamma)
    amap.gamma = gamma
    return amap


class ProxOperator:
    """A (generally nonlinear) proximal operator ``z -> prox_{gamma f}(z)``."""

    is_affine = False

    def __init__(self, func, n, gamma=None, name=None):
        self._func = func
        self.n = n
        self.gamma = gamma
        self.name = name or getattr(func, "__name__", "prox")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.n is not None and z.shape != (self.n,):
            raise ConfigError(f"expected input of shape ({self.n},), got {z.shape}")
        return self._func(z)

    def __repr__(self):
        return f"ProxOperator({self.name}, n={self.n}, gamma={self.gamma})"


class Reflection(ProxOperator):
    """``z -> 2 prox(z) - z`` for a nonlinear prox."""

    def __init__(self, prox):
        self.prox = prox
        super().__init__(lambda z: 2.0 * prox(z) - z, prox.n, prox.gamma,
                         name=f"reflect({prox.name})")


def reflect(prox):
    """Reflected operator ``2 prox - id``; affine input gives an AffineMap."""
    if isinstance(prox, AffineMap):
        return prox.combine(2.0, -1.0)
    if isinstance(prox, ProxOperator):
        return Reflection(prox)
    if callable(prox):
        return Reflection(ProxOperator(prox, None))
    raise ConfigError("reflect expects an AffineMap or a ProxOperator")


# -- sets ------------------------------------------------------------------

class _Set:
    dim = None

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ConfigError(f"expected input of shape ({self.dim},), got {z.shape}")
        return z

    def project(self, z):
        return self._project(self._check(z))

    def projector(self):
        """Projection as an operator (an AffineMap for affine sets)."""
        return ProxOperator(self._project, self.dim, name=f"proj[{type(self).__name__}]")

    def contains(self, x, tol=1e-10):
        x = self._check(x)
        return float(np.linalg.norm(self._project(x) - x)) <= tol


class NonnegativeOrthant(_Set):
    def __init__(self, n):
        self.dim = int(n)

    def _project(self, z):
        return np.maximum(z, 0.0)


class Ball(_Set):
    """Euclidean ball; the projection of the center is the center itself."""

    def __init__(self, center, radius):
        self.center = _frozen(_as_vector(center, "center"))
        if radius < 0:
            raise ConfigError("radius must be nonnegative")
        self.radius = float(radius)
        self.dim = self.center.shape[0]

    def _project(self, z):
        d = z - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return np.array(z)
        return self.center + (self.radius / nrm) * d


class AffineSet(_Set):
    """``{x : A x = b}``; projection uses a cached KKT factorization."""

    def __init__(self, A, b):
        A = np.atleast_2d(np.array(A, dtype=float))
        b = _as_vector(b, "b")
        if b.shape[0] != A.shape[0]:
            raise ConfigError(f"b has length {b.shape[0]}, expected {A.shape[0]}")
        self.A = _frozen(A)
        self.b = _frozen(b)
        self.dim = A.shape[1]
        n = self.dim
        self._map = quadratic_argmin_map(np.zeros((n, n)), None, A, b, M=None, rho=1.0)

    def _project(self, z):
        return self._map(z)

    def projector(self):
        return self._map


class Hyperplane(_Set):
    """``{x : a'x = beta}``."""

    def __init__(self, a, beta):
        a = _as_vector(a, "a")
        nrm2 = float(a @ a)
        if nrm2 == 0:
            raise ConfigError("normal vector must be nonzero")
        self.a = _frozen(a)
        self.beta = float(beta)
        self.dim = a.shape[0]
        self._nrm2 = nrm2

    def _project(self, z):
        return z - ((self.a @ z - self.beta) / self._nrm2) * self.a

    def projector(self):
        a, s = self.a, self._nrm2
        return AffineMap(lambda d: d - ((a @ d) / s) * a, (self.beta / s) * a,
                         backing="matrix")


class Halfspace(_Set):
    """``{x : a'x <= beta}``."""

    def __init__(self, a, beta):
        a = _as_vector(a, "a")
        nrm2 = float(a @ a)
        if nrm2 == 0:
            raise ConfigError("normal vector must be nonzero")
        self.a = _frozen(a)
        self.beta = float(beta)
        self.dim = a.shape[0]
        self._nrm2 = nrm2

    def _project(self, z):
        viol = self.a @ z - self.beta
        if viol <= 0:
            return np.array(z)
        return z - (viol / self._nrm2) * self.a


class ConsensusSet(_Set):
    """``{(x_1, ..., x_N) : x_1 = ... = x_N}`` in stacked coordinates."""

    def __init__(self, N, n):
        if N < 1 or n < 1:
            raise ConfigError("N and n must be positive")
        self.N = int(N)
        self.n = int(n)
        self.dim = self.N * self.n

    def _average(self, z):
        return np.tile(z.reshape(self.N, self.n).mean(axis=0), self.N)

    def _project(self, z):
        return self._average(z)

    def projector(self):
        return AffineMap(self._average, np.zeros(self.dim), backing="matrix")

    def reflector(self):
        avg = self._average
        return AffineMap(lambda d: 2.0 * avg(d) - d, np.zeros(self.dim),
                         backing="matrix")


def project(set_, z):
    """Euclidean projection of ``z`` onto ``set_``."""
    return set_.project(z)


def consensus_reflect(zs, N):
    """Blocks ``2 z_av - z_i`` of a stacked vector with ``N`` blocks."""
    zs = _as_vector(zs, "zs")
    if N < 1 or zs.shape[0] % N:
        raise ConfigError(f"stacked length {zs.shape[0]} is not a multiple of N={N}")
    blocks = zs.reshape(N, -1)
    return (2.0 * blocks.mean(axis=0) - blocks).ravel()


# -- functions -------------------------------------------------------------

def _scalar_identity(M, n):
    """Return sigma if ``M == sigma * I`` (n x n), else None."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (n, n):
        return None
    sigma = M[0, 0]
    if sigma != 0 and np.allclose(M, sigma * np.eye(n), rtol=0, atol=1e-14 * abs(sigma)):
        return float(sigma)
    return None


class _Function:
    """Closed convex function with a computable prox."""

    n = None

    def prox(self, gamma):
        raise NotImplementedError

    def argmin_map(self, M, rho):
        """Operator ``w -> argmin_x f(x) + rho/2 ||M x - w||^2``.

        Nonquadratic functions support only ``M = sigma I``.
        """
        sigma = _scalar_identity(M, self.n)
        if sigma is None:
            raise ConfigError(
                f"{type(self).__name__} supports only scalar-identity coupling matrices")
        p = self.prox(1.0 / (rho * sigma * sigma))
        if isinstance(p, AffineMap):
            return p.compose(AffineMap.from_matrix(np.eye(self.n) / sigma))
        return ProxOperator(lambda w: p(w / sigma), self.n, name=f"argmin[{p.name}]")


class Zero(_Function):
    def __init__(self, n):
        self.n = int(n)

    def __call__(self, x):
        return 0.0

    def prox(self, gamma):
        return AffineMap.identity(self.n)


class Quadratic(_Function):
    """``f(x) = 1/2 x'Px + q'x`` on ``{Aeq x = beq}`` (or everywhere)."""

    def __init__(self, P, q=None, Aeq=None, beq=None):
        self.P = _frozen(np.atleast_2d(np.array(P, dtype=float)))
        self.n = self.P.shape[0]
        self.q = _frozen(np.zeros(self.n) if q is None else q)
        self.Aeq = None if Aeq is None else _frozen(np.atleast_2d(Aeq))
        self.beq = None if beq is None else _frozen(beq)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.Aeq is not None and not np.allclose(self.Aeq @ x, self.beq, atol=1e-8):
            return np.inf
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def gradient(self, x):
        return self.P @ x + self.q

    def prox(self, gamma):
        return prox_quadratic_affine(self.P, self.q, self.Aeq, self.beq, gamma)

    def argmin_map(self, M, rho):
        return quadratic_argmin_map(self.P, self.q, self.Aeq, self.beq, M=M, rho=rho)


class L1Norm(_Function):
    def __init__(self, n, weight=1.0):
        self.n = int(n)
        self.weight = float(weight)

    def __call__(self, x):
        return self.weight * float(np.abs(x).sum())

    def prox(self, gamma):
        t = gamma * self.weight

        def soft_threshold(z):
            return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)

        return ProxOperator(soft_threshold, self.n, gamma)


class Indicator(_Function):
    """Indicator of a closed convex set; its prox is the projection."""

    def __init__(self, set_):
        self.set = set_
        self.n = set_.dim

    def __call__(self, x):
        return 0.0 if self.set.contains(x, tol=1e-8) else np.inf

    def prox(self, gamma=None):
        return self.set.projector()

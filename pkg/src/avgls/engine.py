"""Averaged iteration with a fixed-point-residual line search.

One iteration, for a nonexpansive ``S`` and nominal step ``a``::

    r      = S x - x
    x_nom  = x + a r
    r_nom  = S x_nom - x_nom
    x_next = x + alpha r

where ``alpha`` is either ``a`` or a larger candidate whose residual norm is
at most ``(1 - epsilon) * ||r_nom||``. When ``S = S2 o S1`` with ``S1`` affine
(``S1 x = F x + h``), the engine caches ``F x + h`` and ``F r`` so that every
candidate costs one ``S2`` evaluation and vector operations only.

Operators in "T-form" (``T2 o T1`` with the averaging already folded in)
use nominal step 1 and candidates in ``(1, alpha_max]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigError, NumericalFailure
from .operators import AffineMap

logger = logging.getLogger(__name__)

__all__ = [
    "SForm",
    "TForm",
    "SplitOperator",
    "GeometricBacktrack",
    "LinearForward",
    "LineSearchConfig",
    "AffineCache",
    "IterationState",
    "TraceRecord",
    "IterationTrace",
    "SolveResult",
    "CONVERGED",
    "MAX_ITERATIONS",
    "INFEASIBLE",
    "initial_state",
    "step",
    "run",
    "evaluate_candidate_residual",
    "refresh_cache",
    "activation_check",
    "generalized_accept",
    "detect_infeasibility",
    "telescoped_sum",
]

SForm = "S"
TForm = "T"

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasibility_suspected"

SELECTIONS = ("first", "best", "farthest")
ACTIVATIONS = ("always", "cosine", "never")


@dataclass(frozen=True)
class SplitOperator:
    """A solver instance ``S = s2 o s1``.

    Parameters
    ----------
    s1 : callable
        The expensive (ideally affine) operator. When it is an
        :class:`~avgls.operators.AffineMap` the cached fast path is used.
    s2 : callable
        The cheap operator.
    form : {"S", "T"}
        ``"S"``: ``s2 o s1`` is the nonexpansive operator and the nominal step
        is ``alpha_nominal``. ``"T"``: ``s2 o s1`` is the averaged operator and
        the nominal step is 1.
    alpha_nominal : float
        Averaging parameter in (0, 1). For T-form it is the implied value,
        kept for the convergence bounds.
    recover : callable, optional
        Maps an iterate to the primal solution of the underlying problem.
    """

    s1: Callable
    s2: Callable
    form: str
    alpha_nominal: float
    n: int
    recover: Optional[Callable] = None
    name: str = "split"

    def __post_init__(self):
        if self.form not in (SForm, TForm):
            raise ConfigError(f"form must be 'S' or 'T', got {self.form!r}")
        if not 0.0 < self.alpha_nominal < 1.0:
            raise ConfigError(f"alpha_nominal must lie in (0, 1), got {self.alpha_nominal}")

    @property
    def nominal_step(self):
        return self.alpha_nominal if self.form == SForm else 1.0

    @property
    def affine(self):
        return isinstance(self.s1, AffineMap)

    def __call__(self, x):
        return self.s2(self.s1(x))

    def residual(self, x):
        return self(x) - x

    def nonexpansive_part(self, x):
        """Evaluate the underlying nonexpansive operator at ``x``.

        For T-form this is ``x + (T x - x) / alpha_nominal``.
        """
        if self.form == SForm:
            return self(x)
        return x + (self(x) - x) / self.alpha_nominal

    def solution(self, x):
        return x if self.recover is None else self.recover(x)


@dataclass(frozen=True)
class GeometricBacktrack:
    """Candidates ``alpha_max, alpha_max*factor, ...`` while above nominal."""

    factor: float = 1.0 / 1.4

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ConfigError("backtracking factor must lie in (0, 1)")

    def alphas(self, nominal, alpha_max):
        out = []
        a = alpha_max
        while a > nominal:
            out.append(a)
            a *= self.factor
        return out


@dataclass(frozen=True)
class LinearForward:
    """Candidates ``start + i*spacing`` for ``i < count``, kept if in (nominal, alpha_max]."""

    start: float
    spacing: float
    count: int

    def __post_init__(self):
        if self.spacing <= 0 or self.count < 1:
            raise ConfigError("LinearForward needs spacing > 0 and count >= 1")

    def grid(self):
        return [self.start + i * self.spacing for i in range(self.count)]

    def alphas(self, nominal, alpha_max):
        return [a for a in self.grid() if nominal < a <= alpha_max]


@dataclass(frozen=True)
class LineSearchConfig:
    epsilon: float = 0.03
    alpha_max: float = 50.0
    schedule: object = field(default_factory=GeometricBacktrack)
    selection: str = "first"
    activation: str = "always"
    eps_hat: float = 0.01
    tol: float = 1e-6
    max_iter: int = 100_000
    refresh_period: int = 50
    detect_infeasibility: bool = True
    infeasibility_window: int = 50
    infeasibility_tol: float = 1e-7

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.alpha_max <= 0:
            raise ConfigError("alpha_max must be positive")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 < self.eps_hat < 1.0:
            raise ConfigError("eps_hat must lie in (0, 1)")
        if self.tol < 0:
            raise ConfigError("tol must be nonnegative")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be nonnegative")
        if self.refresh_period < 1:
            raise ConfigError("refresh_period must be >= 1")
        if self.infeasibility_window < 2 or self.infeasibility_tol <= 0:
            raise ConfigError("infeasibility_window >= 2 and infeasibility_tol > 0 required")

    def candidates(self, op):
        nominal = op.nominal_step
        if self.alpha_max < nominal:
            raise ConfigError(f"alpha_max={self.alpha_max} is below the nominal step {nominal}")
        return self.schedule.alphas(nominal, self.alpha_max)


@dataclass
class AffineCache:
    """``s1x = F x + h`` and ``s1r = F r`` for the current iterate."""

    s1x: np.ndarray
    s1r: Optional[np.ndarray] = None


@dataclass
class IterationState:
    k: int
    x: np.ndarray
    r: np.ndarray
    cache: Optional[AffineCache] = None
    prev_step: Optional[np.ndarray] = None
    since_anchor: int = 0


@dataclass
class TraceRecord:
    """One line search iteration.

    ``res_norm`` and ``nominal_res_norm`` are the norms of ``r^k`` and of the
    nominal residual; ``nominal_gap`` is ``||r_nom - r^k||`` and
    ``res_change`` is ``||r^{k+1} - r^k||``.
    """

    k: int
    res_norm: float
    nominal_res_norm: float
    alpha: float
    candidates: int
    activated: bool
    s1_evals: int = 0
    s2_evals: int = 0
    slow_path: bool = False
    nominal_gap: float = 0.0
    res_change: float = 0.0


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    r0_norm: float = 0.0
    final_res_norm: float = 0.0
    status: Optional[str] = None
    alpha_nominal: float = 0.5
    nominal_step: float = 0.5
    init_s1_evals: int = 0
    init_s2_evals: int = 0

    def __len__(self):
        return len(self.records)

    def res_norms(self):
        """``||r^0||, ..., ||r^n||`` including the final residual."""
        return np.array([rec.res_norm for rec in self.records] + [self.final_res_norm])

    def alphas(self):
        return np.array([rec.alpha for rec in self.records])


@dataclass
class SolveResult:
    status: str
    x: np.ndarray
    residual: np.ndarray
    trace: IterationTrace
    displacement_estimate: Optional[np.ndarray] = None

    @property
    def iterations(self):
        return len(self.trace.records)

    @property
    def converged(self):
        return self.status == CONVERGED


def _norm(v):
    return float(np.linalg.norm(v))


def _finite(v, what, k):
    if not np.all(np.isfinite(v)):
        raise NumericalFailure(f"non-finite {what}", k)


def evaluate_candidate_residual(op, cache, x, r, alpha):
    """Candidate point ``x + alpha r`` and its residual from cached affine values.

    Uses ``S2(Fx + h + alpha F r)`` so no application of ``F`` happens here.
    Operators without an affine ``s1`` fall back to a direct evaluation.

    Returns
    -------
    x_c, r_c, slow : ndarray, ndarray, bool
    """
    x_c = x + alpha * r
    if cache is None or cache.s1r is None or not op.affine:
        return x_c, op(x_c) - x_c, True
    return x_c, op.s2(cache.s1x + alpha * cache.s1r) - x_c, False


def refresh_cache(op, x_next, cache, alpha, reanchor=False):
    """Cache for ``x_next = x + alpha r``.

    ``F x_next + h`` is updated by ``s1x + alpha * F r``; with ``reanchor``
    it is recomputed exactly instead.
    """
    if cache is None:
        return None
    if reanchor:
        return AffineCache(op.s1(x_next))
    if alpha == 0:
        return AffineCache(cache.s1x)
    return AffineCache(cache.s1x + alpha * cache.s1r)


def activation_check(v_new, v_old, eps_hat):
    """True iff the cosine between ``v_new`` and ``v_old`` exceeds ``1 - eps_hat``."""
    if v_new is None or v_old is None:
        return False
    n_new, n_old = _norm(v_new), _norm(v_old)
    if n_new == 0.0 or n_old == 0.0:
        return False
    return float(v_new @ v_old) / (n_new * n_old) > 1.0 - eps_hat


def generalized_accept(op, x_hat, nominal_res_norm, epsilon):
    """Acceptance test for an arbitrary candidate point ``x_hat``."""
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != (op.n,):
        raise ConfigError(f"candidate has shape {x_hat.shape}, expected ({op.n},)")
    return _norm(op(x_hat) - x_hat) <= (1.0 - epsilon) * nominal_res_norm


def initial_state(op, x0):
    x0 = np.array(x0, dtype=float)
    if x0.shape != (op.n,):
        raise ConfigError(f"x0 has shape {x0.shape}, expected ({op.n},)")
    _finite(x0, "initial point", 0)
    if op.affine:
        cache = AffineCache(op.s1(x0))
        r = op.s2(cache.s1x) - x0
    else:
        cache = None
        r = op(x0) - x0
    _finite(r, "residual", 0)
    return IterationState(k=0, x=x0, r=r, cache=cache)


def step(op, state, cfg):
    """One line search iteration; returns ``(next_state, record)``."""
    k, x, r = state.k, state.x, state.r
    nominal = op.nominal_step
    res_norm = _norm(r)
    s1_evals = s2_evals = 0

    cache = state.cache
    if cache is not None:
        cache = AffineCache(cache.s1x, op.s1.linear(r))
        s1_evals += 1
    x_nom, r_nom, slow = evaluate_candidate_residual(op, cache, x, r, nominal)
    s2_evals += 1
    if slow:
        s1_evals += 1
    _finite(r_nom, "nominal residual", k)
    nom_norm = _norm(r_nom)

    if nom_norm == 0.0:
        activated = False
    elif cfg.activation == "never":
        activated = False
    elif cfg.activation == "cosine":
        activated = activation_check(x_nom - x, state.prev_step, cfg.eps_hat)
    else:
        activated = True

    alpha, x_next, r_next = nominal, x_nom, r_nom
    n_cand = 0
    if activated:
        alphas = cfg.candidates(op)
        if not alphas:
            raise ConfigError(
                f"empty candidate schedule: no alpha in ({nominal}, {cfg.alpha_max}]")
        bound = (1.0 - cfg.epsilon) * nom_norm
        best = None  # (alpha, x, r, norm)
        for a in alphas:
            x_c, r_c, slow_c = evaluate_candidate_residual(op, cache, x, r, a)
            n_cand += 1
            s2_evals += 1
            if slow_c:
                s1_evals += 1
            _finite(r_c, "candidate residual", k)
            c_norm = _norm(r_c)
            if c_norm > bound:
                continue
            if cfg.selection == "first":
                best = (a, x_c, r_c, c_norm)
                break
            if best is None:
                best = (a, x_c, r_c, c_norm)
            elif cfg.selection == "best" and c_norm < best[3]:
                best = (a, x_c, r_c, c_norm)
            elif cfg.selection == "farthest" and a > best[0]:
                best = (a, x_c, r_c, c_norm)
        if best is not None:
            alpha, x_next, r_next = best[0], best[1], best[2]

    since_anchor = state.since_anchor + 1
    next_cache = None
    if cache is not None:
        reanchor = since_anchor >= cfg.refresh_period
        next_cache = refresh_cache(op, x_next, cache, alpha, reanchor=reanchor)
        if reanchor:
            s1_evals += 1
            s2_evals += 1
            r_next = op.s2(next_cache.s1x) - x_next
            since_anchor = 0
    _finite(r_next, "residual", k + 1)

    record = TraceRecord(
        k=k,
        res_norm=res_norm,
        nominal_res_norm=nom_norm,
        alpha=float(alpha),
        candidates=n_cand,
        activated=activated,
        s1_evals=s1_evals,
        s2_evals=s2_evals,
        slow_path=slow,
        nominal_gap=_norm(r_nom - r),
        res_change=_norm(r_next - r),
    )
    new_state = IterationState(k=k + 1, x=x_next, r=r_next, cache=next_cache,
                               prev_step=x_next - x, since_anchor=since_anchor)
    return new_state, record


def detect_infeasibility(trace, window, delta_tol, tol=0.0):
    """Residual stagnation test over the last ``window`` records.

    Fires when every one of the last ``window`` iterations kept ``||r^k||``
    above ``tol``, changed the residual norm by a relative amount below
    ``delta_tol`` and moved the residual vector by less than
    ``delta_tol * ||r^k||``.
    """
    recs = trace.records
    if len(recs) < window:
        return False
    tail = recs[-window:]
    norms = [rec.res_norm for rec in tail] + [trace.final_res_norm]
    for i, rec in enumerate(tail):
        nk, nk1 = norms[i], norms[i + 1]
        if nk <= tol or nk == 0.0:
            return False
        if abs(nk - nk1) >= delta_tol * nk:
            return False
        if rec.res_change >= delta_tol * nk:
            return False
    return True


def run(op, x0, cfg=None, callback=None):
    """Iterate :func:`step` until convergence, the iteration cap or suspected infeasibility.

    Parameters
    ----------
    op : SplitOperator
    x0 : array_like
    cfg : LineSearchConfig, optional
    callback : callable, optional
        Called as ``callback(state)`` with the initial state and after every
        iteration.

    Returns
    -------
    SolveResult
    """
    cfg = LineSearchConfig() if cfg is None else cfg
    if cfg.activation != "never":
        cfg.candidates(op)
    state = initial_state(op, x0)
    r0 = _norm(state.r)
    trace = IterationTrace(r0_norm=r0, alpha_nominal=op.alpha_nominal,
                           nominal_step=op.nominal_step,
                           init_s1_evals=1, init_s2_evals=1)
    threshold = cfg.tol * max(1.0, r0)
    if callback is not None:
        callback(state)

    status = None
    displacement = None
    while True:
        trace.final_res_norm = _norm(state.r)
        if trace.final_res_norm <= threshold:
            status = CONVERGED
            break
        if state.k >= cfg.max_iter:
            status = MAX_ITERATIONS
            break
        state, record = step(op, state, cfg)
        trace.records.append(record)
        trace.final_res_norm = _norm(state.r)
        if callback is not None:
            callback(state)
        if (cfg.detect_infeasibility and trace.final_res_norm > threshold
                and detect_infeasibility(trace, cfg.infeasibility_window,
                                         cfg.infeasibility_tol, threshold)):
            status = INFEASIBLE
            displacement = np.array(state.r)
            break

    trace.status = status
    logger.info("%s after %d iterations, ||r|| = %.3e", status, len(trace), trace.final_res_norm)
    return SolveResult(status=status, x=state.x, residual=state.r, trace=trace,
                       displacement_estimate=displacement)


def telescoped_sum(trace):
    """Return ``(sum ||r_nom^k - r^k||^2, bound)`` for the telescoped residual inequality."""
    a = trace.alpha_nominal
    total = math.fsum(rec.nominal_gap ** 2 for rec in trace.records)
    return total, a / (1.0 - a) * trace.r0_norm ** 2

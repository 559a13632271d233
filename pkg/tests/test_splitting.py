import numpy as np
import pytest

from avgls.engine import LineSearchConfig, SForm, TForm, run
from avgls.exceptions import ConfigError, ConvergenceError, FactorizationError
from avgls.operators import (AffineMap, AffineSet, Ball, Hyperplane, Indicator, L1Norm,
                             NonnegativeOrthant, Quadratic, Zero)
from avgls.splitting import (ADMMState, ProblemADMM, ProblemDR, ProblemFBS,
                             admm_initial_standard_state, admm_standard_iterate, build_admm,
                             build_ap, build_consensus, build_dr, build_fbs, estimate_lipschitz)

from conftest import random_pd

PLAIN = dict(activation="never", tol=0, detect_infeasibility=False)


def iterates(op, x0, k, **kw):
    xs = []
    cfg = LineSearchConfig(max_iter=k, **{**PLAIN, **kw})
    run(op, x0, cfg, lambda s: xs.append(s.x.copy()))
    return xs


# -- forward-backward -------------------------------------------------------------

def test_fbs_identity_hessian():
    q = np.array([1.0, -2.0])
    op = build_fbs(ProblemFBS(np.eye(2), q, Zero(2), gamma=1.0))
    assert op.form == TForm and op.nominal_step == 1.0
    assert op.alpha_nominal == pytest.approx(2 / 3)
    np.testing.assert_allclose(op.s1.to_matrix(), np.zeros((2, 2)), atol=1e-15)
    np.testing.assert_allclose(op.s1.offset, -q)


def test_fbs_gradient_descent_fixed_point(rng):
    n = 6
    P = random_pd(rng, n)
    q = rng.standard_normal(n)
    L = np.linalg.eigvalsh(P).max()
    op = build_fbs(ProblemFBS(P, q, Zero(n), gamma=1.0 / L))
    x = rng.standard_normal(n)
    np.testing.assert_allclose(op(x), x - (P @ x + q) / L, atol=1e-12)
    res = run(op, np.zeros(n), LineSearchConfig(tol=1e-12))
    np.testing.assert_allclose(res.x, np.linalg.solve(P, -q), atol=1e-8)


def test_fbs_rejects_gamma_at_limit():
    P = np.diag([1.0, 4.0])
    with pytest.raises(ConfigError):
        build_fbs(ProblemFBS(P, np.zeros(2), Zero(2), gamma=0.5, L=4.0))
    with pytest.raises(ConfigError):
        build_fbs(ProblemFBS(P, np.zeros(2), Zero(2), gamma=0.0, L=4.0))


def test_fbs_composition_identity_and_nonexpansive_part(rng):
    n = 5
    P = random_pd(rng, n)
    op = build_fbs(ProblemFBS(P, rng.standard_normal(n), L1Norm(n, 0.3), gamma=1.5 /
                              np.linalg.eigvalsh(P).max()))
    a = op.alpha_nominal
    for _ in range(100):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        np.testing.assert_allclose((1 - a) * x + a * op.nonexpansive_part(x), op(x), atol=1e-10)
        d = np.linalg.norm(op.nonexpansive_part(x) - op.nonexpansive_part(y))
        assert d <= np.linalg.norm(x - y) * (1 + 1e-10)


# -- Lipschitz estimate -------------------------------------------------------------

def test_lipschitz_examples(rng):
    assert estimate_lipschitz(np.eye(4)) == pytest.approx(1.0, rel=1e-12)
    assert estimate_lipschitz(np.diag([1.0, 3.0, 5.0])) == pytest.approx(5.0, rel=1e-9)
    M = rng.standard_normal((20, 20))
    P = M.T @ M
    assert estimate_lipschitz(P) == pytest.approx(np.linalg.eigvalsh(P).max(), rel=1e-6)
    assert estimate_lipschitz(np.zeros((3, 3))) == 0.0


def test_lipschitz_iteration_cap():
    with pytest.raises(ConvergenceError):
        estimate_lipschitz(np.diag([1.0, 0.999999]), tol=1e-16, max_iter=3)


# -- Douglas-Rachford --------------------------------------------------------------------

def test_dr_zero_functions_identity(rng):
    op = build_dr(ProblemDR(Zero(3), Zero(3)))
    z = rng.standard_normal(3)
    np.testing.assert_array_equal(op.residual(z), np.zeros(3))


def test_dr_recovers_center():
    a = np.array([1.5, -0.5, 2.0])
    op = build_dr(ProblemDR(Quadratic(np.eye(3), -a), Zero(3), gamma=1.0))
    res = run(op, np.zeros(3), LineSearchConfig(tol=1e-12))
    np.testing.assert_allclose(op.solution(res.x), a, atol=1e-10)


def nnls_optimality(A, b, x):
    grad = 2 * A.T @ (A @ x - b)
    return np.linalg.norm(x - np.maximum(x - grad, 0.0))


def test_dr_nnls_projected_gradient(rng):
    m, n = 30, 20
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    f = Quadratic(2 * A.T @ A, -2 * A.T @ b)
    op = build_dr(ProblemDR(f, Indicator(NonnegativeOrthant(n)), gamma=3.0))
    res = run(op, np.zeros(n), LineSearchConfig(tol=1e-11))
    assert res.converged
    x = np.maximum(op.solution(res.x), 0.0)
    assert nnls_optimality(A, b, x) <= 1e-6


def test_dr_variable_identities(rng):
    n = 4
    f = Quadratic(random_pd(rng, n), rng.standard_normal(n))
    g = Indicator(Ball(np.zeros(n), 0.5))
    op = build_dr(ProblemDR(f, g, gamma=0.8))
    prox_f, prox_g = f.prox(0.8), g.prox(0.8)
    for _ in range(20):
        z = 2 * rng.standard_normal(n)
        x = prox_f(z)
        y = prox_g(2 * x - z)
        np.testing.assert_allclose(op.s1(z), 2 * x - z, atol=1e-12)
        np.testing.assert_allclose(op.residual(z), 2 * (y - x), atol=1e-12)


def test_dr_validation():
    with pytest.raises(ConfigError):
        build_dr(ProblemDR(Zero(2), Zero(3)))
    with pytest.raises(ConfigError):
        build_dr(ProblemDR(Zero(2), Zero(2), alpha=1.0))
    with pytest.raises(ConfigError):
        build_dr(ProblemDR(Zero(2), Zero(2), gamma=-1.0))


# -- ADMM ------------------------------------------------------------------------

def random_admm(rng, n=4, m=5, p=6, alpha=0.5, rho=1.3, constrained=True):
    f = Quadratic(random_pd(rng, n), rng.standard_normal(n))
    Aeq = rng.standard_normal((2, m)) if constrained else None
    beq = rng.standard_normal(2) if constrained else None
    g = Quadratic(random_pd(rng, m), rng.standard_normal(m), Aeq, beq)
    return ProblemADMM(f, g, rng.standard_normal((p, n)), rng.standard_normal((p, m)),
                       rng.standard_normal(p), rho=rho, alpha=alpha)


def standard_trajectory(prob, v0, k):
    st = admm_initial_standard_state(prob, v0)
    out = [st]
    for _ in range(k):
        st = admm_standard_iterate(prob, st)
        out.append(st)
    return out


def max_mapping_error(prob, v0, k):
    op = build_admm(prob)
    vs = iterates(op, v0, k)
    std = standard_trajectory(prob, v0, k)
    err = 0.0
    for i in range(k):
        x_dr, z_dr = op.recover(vs[i])
        err = max(err, np.abs(z_dr - std[i].z).max(), np.abs(x_dr - std[i + 1].x).max(),
                  np.abs(vs[i] - (std[i].u - prob.B @ std[i].z)).max())
    return err


@pytest.mark.parametrize("alpha,k", [(0.5, 50), (0.7, 100)])
def test_admm_matches_standard_form(rng, alpha, k):
    prob = random_admm(rng, alpha=alpha)
    assert max_mapping_error(prob, rng.standard_normal(6), k) <= 1e-10


def test_admm_residual_identity(rng):
    prob = random_admm(rng)
    op = build_admm(prob)
    for _ in range(10):
        v = rng.standard_normal(6)
        x, z = op.recover(v)
        np.testing.assert_allclose(op.residual(v), 2 * (prob.A @ x + prob.B @ z - prob.c),
                                   atol=1e-10)


def test_admm_half_relaxation_no_extrapolation(rng):
    prob = random_admm(rng, alpha=0.5)
    for st in standard_trajectory(prob, rng.standard_normal(6), 20)[1:]:
        np.testing.assert_allclose(st.x_A, prob.A @ st.x, atol=1e-12)


def test_admm_cross_builder_with_dr(rng):
    n, rho = 6, 0.8
    G = Quadratic(random_pd(rng, n), rng.standard_normal(n))
    F = Indicator(NonnegativeOrthant(n))
    admm = build_admm(ProblemADMM(F, G, np.eye(n), -np.eye(n), np.zeros(n), rho=rho, alpha=0.6))
    dr = build_dr(ProblemDR(G, F, gamma=1 / rho, alpha=0.6))
    z0 = rng.standard_normal(n)
    for a, b in zip(iterates(admm, z0, 60), iterates(dr, z0, 60)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_admm_standard_zero_functions_hand_recursion(rng):
    n, a = 3, 0.7
    Z = Quadratic(np.zeros((n, n)))
    prob = ProblemADMM(Z, Z, np.eye(n), np.eye(n), np.zeros(n), rho=1.0, alpha=a)
    st = ADMMState(np.zeros(n), np.zeros(n), rng.standard_normal(n), rng.standard_normal(n))
    for _ in range(5):
        x = -(st.z + st.u)
        xA = 2 * a * x - (1 - 2 * a) * st.z
        z = -xA - st.u
        u = st.u + xA + z
        nxt = admm_standard_iterate(prob, st)
        for got, want in zip(nxt, (x, xA, z, u)):
            np.testing.assert_allclose(got, want, atol=1e-12)
        st = nxt


def test_admm_validation(rng):
    f = Quadratic(np.eye(2))
    with pytest.raises(ConfigError):
        ProblemADMM(f, f, np.eye(2), np.eye(3), np.zeros(2))
    with pytest.raises(ConfigError):
        ProblemADMM(f, f, np.eye(2), np.eye(2), np.zeros(2), rho=0.0)
    # g = 0 with B having a null space: the z-subproblem is unbounded
    with pytest.raises(FactorizationError):
        build_admm(ProblemADMM(f, Quadratic(np.zeros((2, 2))), np.eye(2),
                               np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros(2)))


# -- consensus ---------------------------------------------------------------------

def test_consensus_single_block_is_dr(rng):
    f = Quadratic(random_pd(rng, 3), rng.standard_normal(3))
    cons = build_consensus([f], 0.7)
    dr = build_dr(ProblemDR(f, Zero(3), gamma=0.7))
    for _ in range(10):
        z = rng.standard_normal(3)
        np.testing.assert_allclose(cons(z), dr(z), atol=1e-12)


def test_consensus_average_of_centers(rng):
    centers = rng.standard_normal((4, 3))
    op = build_consensus([Quadratic(np.eye(3), -a) for a in centers], 1.0)
    res = run(op, np.zeros(12), LineSearchConfig(tol=1e-12))
    np.testing.assert_allclose(op.solution(res.x), centers.mean(axis=0), atol=1e-8)
    # every local prox output agrees at the fixed point
    y = op.s1(res.x).reshape(4, 3)
    local = np.array([yi / 2 + a / 2 for yi, a in zip(y, centers)])
    np.testing.assert_allclose(local, np.tile(centers.mean(axis=0), (4, 1)), atol=1e-8)


def test_consensus_random_quadratics(rng):
    fs = [Quadratic(random_pd(rng, 5), rng.standard_normal(5)) for _ in range(3)]
    op = build_consensus(fs, 1.0)
    assert op.alpha_nominal == 0.5 and op.form == SForm
    res = run(op, np.zeros(15), LineSearchConfig(tol=1e-12))
    oracle = np.linalg.solve(sum(f.P for f in fs), -sum(f.q for f in fs))
    np.testing.assert_allclose(op.solution(res.x), oracle, atol=1e-6)


def test_consensus_validation():
    with pytest.raises(ConfigError):
        build_consensus([Zero(2), Zero(3)], 1.0)
    with pytest.raises(ConfigError):
        build_consensus([], 1.0)


# -- alternating projections ---------------------------------------------------------------

def test_ap_feasible_start_zero_residual():
    op = build_ap(Ball(np.zeros(2), 1.0), AffineSet([[1.0, 0.0]], [0.5]))
    x0 = np.array([0.5, 0.1])
    assert np.linalg.norm(op.residual(x0)) == 0.0
    assert op.alpha_nominal == pytest.approx(2 / 3) and op.nominal_step == 1.0


def test_ap_circle_line_moves_toward_solution():
    op = build_ap(Ball(np.zeros(2), 1.0), AffineSet([[1.0, 0.0]], [1.0]))
    assert isinstance(op.s1, AffineMap)
    x = np.array([np.cos(np.radians(350)), np.sin(np.radians(350))])
    dists = []
    for _ in range(200):
        x = op(x)
        dists.append(np.linalg.norm(x - [1.0, 0.0]))
    assert np.all(np.diff(dists) < 0)
    assert dists[-1] < 0.4 * dists[0]


def test_ap_same_hyperplane_one_step(rng):
    H = Hyperplane([1.0, 2.0, -1.0], 0.5)
    op = build_ap(H, H)
    x1 = op(rng.standard_normal(3))
    assert np.linalg.norm(op.residual(x1)) <= 1e-14


def test_ap_composition_identity(rng):
    op = build_ap(Ball(np.zeros(3), 1.0), AffineSet(rng.standard_normal((1, 3)), [0.3]))
    for _ in range(100):
        x, y = 3 * rng.standard_normal(3), 3 * rng.standard_normal(3)
        np.testing.assert_allclose((1 / 3) * x + (2 / 3) * op.nonexpansive_part(x), op(x),
                                   atol=1e-10)
        d = np.linalg.norm(op.nonexpansive_part(x) - op.nonexpansive_part(y))
        assert d <= np.linalg.norm(x - y) * (1 + 1e-10)


# -- fixed-point consistency -------------------------------------------------------------------

def test_known_optima_are_fixed_points(rng):
    n = 4
    P = random_pd(rng, n)
    q = rng.standard_normal(n)
    xstar = np.linalg.solve(P, -q)
    f = Quadratic(P, q)
    # DR with g = 0: z* = x*
    assert np.linalg.norm(build_dr(ProblemDR(f, Zero(n))).residual(xstar)) <= 1e-8
    # FBS with g = 0
    fbs = build_fbs(ProblemFBS(P, q, Zero(n), gamma=1.0 / np.linalg.eigvalsh(P).max()))
    assert np.linalg.norm(fbs.residual(xstar)) <= 1e-8
    # ADMM with f = 0 (x-side), g quadratic, A = I, B = -I: v* = x*
    admm = build_admm(ProblemADMM(Zero(n), f, np.eye(n), -np.eye(n), np.zeros(n)))
    assert np.linalg.norm(admm.residual(xstar)) <= 1e-8
    # consensus: z_i = x* - gamma grad f_i(x*)
    fs = [Quadratic(random_pd(rng, n), rng.standard_normal(n)) for _ in range(2)]
    xs = np.linalg.solve(fs[0].P + fs[1].P, -(fs[0].q + fs[1].q))
    z = np.concatenate([xs - 0.9 * fi.gradient(xs) for fi in fs])
    assert np.linalg.norm(build_consensus(fs, 0.9).residual(z)) <= 1e-8
    # AP: a point of the intersection
    ap = build_ap(Ball(np.zeros(2), 1.0), AffineSet([[1.0, 0.0]], [1.0]))
    assert np.linalg.norm(ap.residual(np.array([1.0, 0.0]))) <= 1e-8

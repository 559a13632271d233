import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from avgls.engine import INFEASIBLE, LineSearchConfig, run
from avgls.exceptions import ConfigError, ProblemFormatError
from avgls.problems import (ProblemFile, build_solver, config_from_params, dumps_problem,
                            gen_circle_line, gen_consensus, gen_disjoint, gen_nnls, gen_qp,
                            load_problem, load_trace, loads_problem, save_problem, save_trace)

from test_engine import infimal_displacement_oracle


def test_nnls_shape_and_determinism():
    p = gen_nnls(1000, 1000, 0)
    assert p.arrays["A"].shape == (1000, 1000)
    assert dumps_problem(gen_nnls(20, 30, 7)) == dumps_problem(gen_nnls(20, 30, 7))
    assert dumps_problem(gen_nnls(20, 30, 7)) != dumps_problem(gen_nnls(20, 30, 8))
    with pytest.raises(ConfigError):
        gen_nnls(0, 3, 1)


def _row_norm_cdf(n):
    """CDF of ||s g|| with g ~ N(0, I_n) and s ~ U(0.1, 1.1)."""
    def cdf(t):
        return integrate.quad(lambda s: stats.chi.cdf(t / s, n), 0.1, 1.1)[0]
    return np.vectorize(cdf)


def test_nnls_row_scaling_distribution():
    n, m = 50, 1000
    A = gen_nnls(n, m, 3).arrays["A"]
    norms = np.linalg.norm(A, axis=1)
    assert 1.0 <= norms.max() / norms.min()
    assert stats.kstest(norms, _row_norm_cdf(n)).pvalue > 0.01


def test_circle_line_examples():
    op, x0 = build_solver(gen_circle_line(0.0))
    np.testing.assert_allclose(x0, [1.0, 0.0])
    assert np.linalg.norm(op.residual(x0)) == 0.0
    _, x0 = build_solver(gen_circle_line(350.0))
    th = math.radians(350.0)
    np.testing.assert_allclose(x0, [math.cos(th), math.sin(th)])
    op, x0 = build_solver(gen_circle_line(180.0))
    np.testing.assert_allclose(x0, [-1.0, 0.0], atol=1e-15)
    res = run(op, x0, LineSearchConfig(tol=1e-8))
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-8)


def test_disjoint_geometry_and_validation():
    p = gen_disjoint(1.0)
    a = p.arrays
    dist = (a["D_b"][0] - a["D_A"][0] @ a["center"]) - float(a["radius"])
    assert dist == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        gen_disjoint(0.0)


def test_disjoint_half_gap_detector():
    op, x0 = build_solver(gen_disjoint(0.5))
    res = run(op, x0, LineSearchConfig())
    assert res.status == INFEASIBLE
    oracle = infimal_displacement_oracle(op)
    assert abs(np.linalg.norm(res.displacement_estimate) - oracle) <= 1e-3


def test_round_trip(tmp_path):
    for prob in (gen_nnls(10, 10, 7), gen_qp(5, 1, k=2), gen_consensus(3, 4, 2),
                 gen_circle_line(350.0)):
        path = tmp_path / f"{prob.kind}.json"
        save_problem(prob, path)
        assert load_problem(path) == prob


def test_missing_field_named():
    doc = json.loads(dumps_problem(gen_nnls(4, 4, 1)))
    del doc["arrays"]["b"]
    with pytest.raises(ProblemFormatError, match="arrays.b") as info:
        loads_problem(json.dumps(doc))
    assert info.value.field == "arrays.b"
    doc = json.loads(dumps_problem(gen_nnls(4, 4, 1)))
    del doc["kind"]
    with pytest.raises(ProblemFormatError, match="kind"):
        loads_problem(json.dumps(doc))


def test_truncated_file(tmp_path):
    text = dumps_problem(gen_nnls(4, 4, 1))
    path = tmp_path / "cut.json"
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ProblemFormatError):
        load_problem(path)


def test_dimension_mismatch_rejected():
    with pytest.raises(ProblemFormatError, match="arrays.b"):
        ProblemFile("nnls", {"m": 3, "n": 2}, {"A": np.zeros((3, 2)), "b": np.zeros(4)})
    with pytest.raises(ProblemFormatError, match="kind"):
        ProblemFile("lp", {}, {})
    doc = json.loads(dumps_problem(gen_nnls(3, 3, 1)))
    doc["arrays"]["A"]["data"] = doc["arrays"]["A"]["data"][:-1]
    with pytest.raises(ProblemFormatError, match="arrays.A"):
        loads_problem(json.dumps(doc))


def test_trace_record_count_and_round_trip(tmp_path):
    op, x0 = build_solver(gen_nnls(30, 30, 4))
    res = run(op, x0, LineSearchConfig(tol=0, max_iter=100))
    path = tmp_path / "trace.csv"
    save_trace(res.trace, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 101
    assert lines[0].split(",")[:6] == ["k", "res_norm", "nominal_res_norm", "alpha_k",
                                       "candidates", "activated"]
    assert load_trace(path).records == res.trace.records


def test_config_from_params():
    cfg = config_from_params(gen_nnls(3, 3, 0).params, tol=1e-3)
    assert cfg.epsilon == 0.03 and cfg.alpha_max == 50.0 and cfg.tol == 1e-3
    assert cfg.schedule.factor == pytest.approx(1 / 1.4)
    cfg = config_from_params({"schedule": {"type": "linear", "start": 1, "spacing": 2,
                                           "count": 3}})
    assert cfg.schedule.grid() == [1.0, 3.0, 5.0]
    with pytest.raises(ProblemFormatError, match="params.schedule.count"):
        config_from_params({"schedule": {"type": "linear", "start": 1, "spacing": 2}})


@pytest.mark.parametrize("algorithm", ["dr", "admm", "fbs"])
def test_qp_algorithms_agree(algorithm):
    base = gen_qp(8, 5)
    params = dict(base.params, algorithm=algorithm)
    if algorithm == "fbs":
        params["gamma"] = 1.0 / np.linalg.eigvalsh(base.arrays["P"]).max()
    prob = ProblemFile(base.kind, base.dims, base.arrays, params, base.seed)
    op, x0 = build_solver(prob)
    res = run(op, x0, LineSearchConfig(tol=1e-11))
    sol = op.solution(res.x)
    x = sol.z if algorithm == "admm" else sol
    x = np.maximum(x, 0.0)
    P, q = base.arrays["P"], base.arrays["q"]
    assert np.linalg.norm(x - np.maximum(x - (P @ x + q), 0.0)) <= 1e-6

"""Problem generators, the JSON problem file format and trace CSV persistence.

Problem file layout::

    {
      "format": "avgls-problem", "version": 1,
      "kind": "nnls" | "feasibility" | "qp" | "consensus",
      "dims": {"m": 200, "n": 200},
      "arrays": {"A": {"shape": [200, 200], "data": [... row-major ...]}, ...},
      "params": {"algorithm": "dr", "gamma": 3.0, "alpha": 0.5, "epsilon": 0.03, ...},
      "seed": 0
    }

Random generators draw from ``numpy.random.default_rng(seed)`` (PCG64). For
NNLS the draw order is: entries of ``A`` (row-major), row scales, then ``b``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import GeometricBacktrack, IterationTrace, LinearForward, LineSearchConfig, TraceRecord
from .exceptions import ConfigError, ProblemFormatError
from .operators import (AffineSet, Ball, Indicator, L1Norm, NonnegativeOrthant, Quadratic,
                        Zero)
from .splitting import (ProblemADMM, ProblemDR, ProblemFBS, build_admm, build_ap,
                        build_consensus, build_dr, build_fbs)

__all__ = [
    "ProblemFile",
    "KINDS",
    "gen_nnls",
    "gen_circle_line",
    "gen_disjoint",
    "gen_qp",
    "gen_consensus",
    "dumps_problem",
    "loads_problem",
    "save_problem",
    "load_problem",
    "build_solver",
    "config_from_params",
    "TRACE_COLUMNS",
    "save_trace",
    "load_trace",
]

FORMAT_TAG = "avgls-problem"
FORMAT_VERSION = 1

# kind -> {array name: shape spec}; names in dims, "?" marks optional arrays
_SCHEMA = {
    "nnls": {"A": ("m", "n"), "b": ("m",)},
    "feasibility": {"center": ("n",), "radius": (), "D_A": ("k", "n"), "D_b": ("k",),
                    "x0": ("n",)},
    "qp": {"P": ("n", "n"), "q": ("n",), "Aeq?": ("k", "n"), "beq?": ("k",)},
    "consensus": {"P": ("N", "n", "n"), "q": ("N", "n")},
}
KINDS = tuple(_SCHEMA)


@dataclass
class ProblemFile:
    kind: str
    dims: dict
    arrays: dict
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self):
        validate(self)

    def __eq__(self, other):
        if not isinstance(other, ProblemFile):
            return NotImplemented
        return (self.kind == other.kind and self.dims == other.dims
                and self.params == other.params and self.seed == other.seed
                and self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays))


def validate(problem):
    if problem.kind not in _SCHEMA:
        raise ProblemFormatError(f"unknown kind {problem.kind!r}, expected one of {KINDS}",
                                 "kind")
    for name, spec in _SCHEMA[problem.kind].items():
        optional = name.endswith("?")
        name = name.rstrip("?")
        if name not in problem.arrays:
            if optional:
                continue
            raise ProblemFormatError("missing array", f"arrays.{name}")
        arr = problem.arrays[name]
        expected = []
        for d in spec:
            if d not in problem.dims:
                raise ProblemFormatError("missing dimension", f"dims.{d}")
            expected.append(problem.dims[d])
        if tuple(arr.shape) != tuple(expected):
            raise ProblemFormatError(
                f"shape {tuple(arr.shape)} does not match dims {tuple(expected)}",
                f"arrays.{name}")
        if not np.all(np.isfinite(arr)):
            raise ProblemFormatError("non-finite entries", f"arrays.{name}")


def _rng(seed):
    if seed is None:
        raise ConfigError("a seed is required for randomized problems")
    return np.random.default_rng(seed)


def _ls_params(**extra):
    p = {"epsilon": 0.03, "alpha_max": 50.0,
         "schedule": {"type": "geometric", "factor": 1 / 1.4},
         "selection": "first", "tol": 1e-6, "max_iter": 100000}
    p.update(extra)
    return p


def gen_nnls(n, m, seed):
    """``minimize ||Ax - b||^2 s.t. x >= 0`` with ``A`` m-by-n, rows scaled by U(0.1, 1.1)."""
    if n < 1 or m < 1:
        raise ConfigError("n and m must be positive")
    rng = _rng(seed)
    A = rng.standard_normal((m, n))
    A *= rng.uniform(0.1, 1.1, size=m)[:, None]
    b = rng.standard_normal(m)
    return ProblemFile("nnls", {"m": m, "n": n}, {"A": A, "b": b},
                       _ls_params(algorithm="dr", gamma=3.0, alpha=0.5), seed)


def _feasibility(x0, gap, algorithm):
    return ProblemFile(
        "feasibility", {"n": 2, "k": 1},
        {"center": np.zeros(2), "radius": np.array(1.0),
         "D_A": np.array([[1.0, 0.0]]), "D_b": np.array([1.0 + gap]), "x0": x0},
        _ls_params(algorithm=algorithm, alpha=0.5))


def gen_circle_line(angle_deg):
    """Unit disk and the tangent line ``x1 = 1``; start on the circle at ``angle_deg``."""
    th = math.radians(angle_deg)
    return _feasibility(np.array([math.cos(th), math.sin(th)]), 0.0, "ap")


def gen_disjoint(gap):
    """Unit disk and the line ``x1 = 1 + gap`` (no intersection), solved by DR."""
    if not gap > 0:
        raise ConfigError("gap must be positive")
    return _feasibility(np.zeros(2), float(gap), "dr")


def gen_qp(n, seed, k=0, g="nonneg"):
    """Random strongly convex QP with ``k`` equality constraints and simple ``g``."""
    rng = _rng(seed)
    M = rng.standard_normal((n, n))
    P = M @ M.T / n + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    arrays = {"P": P, "q": q}
    dims = {"n": n}
    if k:
        arrays["Aeq"] = rng.standard_normal((k, n))
        arrays["beq"] = rng.standard_normal(k)
        dims["k"] = k
    return ProblemFile("qp", dims, arrays, _ls_params(algorithm="dr", g=g, gamma=1.0, alpha=0.5),
                       seed)


def gen_consensus(N, n, seed):
    """``N`` random strongly convex quadratics ``f_i`` on ``R^n``."""
    rng = _rng(seed)
    Ps = []
    for _ in range(N):
        M = rng.standard_normal((n, n))
        Ps.append(M @ M.T / n + 0.1 * np.eye(n))
    q = rng.standard_normal((N, n))
    return ProblemFile("consensus", {"N": N, "n": n}, {"P": np.array(Ps), "q": q},
                       _ls_params(gamma=1.0), seed)


# -- serialization -------------------------------------------------------

def _array_to_json(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _array_from_json(obj, path):
    if not isinstance(obj, dict):
        raise ProblemFormatError("expected an object with shape and data", path)
    for key in ("shape", "data"):
        if key not in obj:
            raise ProblemFormatError("missing field", f"{path}.{key}")
    shape = obj["shape"]
    data = obj["data"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise ProblemFormatError("shape must be a list of nonnegative integers", f"{path}.shape")
    if not isinstance(data, list):
        raise ProblemFormatError("data must be a list of numbers", f"{path}.data")
    if len(data) != math.prod(shape):
        raise ProblemFormatError(f"{len(data)} entries for shape {shape}", f"{path}.data")
    try:
        return np.array(data, dtype=float).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise ProblemFormatError(f"non-numeric entries ({exc})", f"{path}.data") from None


def dumps_problem(problem):
    doc = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": problem.kind,
        "dims": dict(problem.dims),
        "arrays": {k: _array_to_json(v) for k, v in problem.arrays.items()},
        "params": problem.params,
        "seed": problem.seed,
    }
    return json.dumps(doc, indent=1)


def loads_problem(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ProblemFormatError("top level must be an object")
    if doc.get("format", FORMAT_TAG) != FORMAT_TAG:
        raise ProblemFormatError(f"unexpected format tag {doc.get('format')!r}", "format")
    for key in ("kind", "dims", "arrays"):
        if key not in doc:
            raise ProblemFormatError("missing field", key)
    dims = doc["dims"]
    if not isinstance(dims, dict) or not all(isinstance(v, int) for v in dims.values()):
        raise ProblemFormatError("dims must map names to integers", "dims")
    if not isinstance(doc["arrays"], dict):
        raise ProblemFormatError("arrays must be an object", "arrays")
    arrays = {k: _array_from_json(v, f"arrays.{k}") for k, v in doc["arrays"].items()}
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ProblemFormatError("params must be an object", "params")
    return ProblemFile(doc["kind"], dims, arrays, params, doc.get("seed"))


def save_problem(problem, path):
    Path(path).write_text(dumps_problem(problem))


def load_problem(path):
    return loads_problem(Path(path).read_text())


# -- problem -> solver ---------------------------------------------------

def _schedule_from_params(spec):
    if spec is None:
        return GeometricBacktrack()
    kind = spec.get("type", "geometric")
    if kind == "geometric":
        return GeometricBacktrack(float(spec.get("factor", 1 / 1.4)))
    if kind == "linear":
        try:
            return LinearForward(float(spec["start"]), float(spec["spacing"]), int(spec["count"]))
        except KeyError as exc:
            raise ProblemFormatError("missing field", f"params.schedule.{exc.args[0]}") from None
    raise ProblemFormatError(f"unknown schedule type {kind!r}", "params.schedule.type")


_CFG_KEYS = ("epsilon", "alpha_max", "selection", "activation", "eps_hat", "tol", "max_iter",
             "refresh_period", "infeasibility_window", "infeasibility_tol")


def config_from_params(params, **overrides):
    """LineSearchConfig from problem params; non-None ``overrides`` win."""
    kw = {k: params[k] for k in _CFG_KEYS if k in params}
    kw["schedule"] = _schedule_from_params(params.get("schedule"))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if "max_iter" in kw:
        kw["max_iter"] = int(kw["max_iter"])
    return LineSearchConfig(**kw)


def _g_function(name, n):
    if name == "nonneg":
        return Indicator(NonnegativeOrthant(n))
    if name == "zero":
        return Zero(n)
    if name == "l1":
        return L1Norm(n)
    raise ProblemFormatError(f"unknown g {name!r}", "params.g")


def build_solver(problem):
    """Return ``(split_operator, x0)`` for a problem file."""
    a = problem.arrays
    p = problem.params
    algorithm = p.get("algorithm")
    alpha = float(p.get("alpha", 0.5))
    if problem.kind == "nnls":
        A, b = a["A"], a["b"]
        n = A.shape[1]
        P, q = 2.0 * A.T @ A, -2.0 * A.T @ b
        g = Indicator(NonnegativeOrthant(n))
        if algorithm in (None, "dr"):
            op = build_dr(ProblemDR(Quadratic(P, q), g, float(p.get("gamma", 3.0)), alpha))
        elif algorithm == "fbs":
            op = build_fbs(ProblemFBS(P, q, g, float(p["gamma"])))
        else:
            raise ProblemFormatError(f"unknown algorithm {algorithm!r} for nnls",
                                     "params.algorithm")
        x0 = a.get("x0", np.zeros(n))
    elif problem.kind == "feasibility":
        C = Ball(a["center"], float(a["radius"]))
        D = AffineSet(a["D_A"], a["D_b"])
        if algorithm in (None, "ap"):
            op = build_ap(C, D)
        elif algorithm == "dr":
            op = build_dr(ProblemDR(Indicator(D), Indicator(C), 1.0, alpha))
        else:
            raise ProblemFormatError(f"unknown algorithm {algorithm!r} for feasibility",
                                     "params.algorithm")
        x0 = a["x0"]
    elif problem.kind == "qp":
        n = a["P"].shape[0]
        f = Quadratic(a["P"], a["q"], a.get("Aeq"), a.get("beq"))
        g = _g_function(p.get("g", "nonneg"), n)
        if algorithm in (None, "dr"):
            op = build_dr(ProblemDR(f, g, float(p.get("gamma", 1.0)), alpha))
            x0 = np.zeros(n)
        elif algorithm == "admm":
            rho = float(p.get("rho", 1.0 / float(p.get("gamma", 1.0))))
            op = build_admm(ProblemADMM(g, f, np.eye(n), -np.eye(n), np.zeros(n), rho, alpha))
            x0 = np.zeros(n)
        elif algorithm == "fbs":
            if a.get("Aeq") is not None:
                raise ProblemFormatError("fbs needs an unconstrained quadratic", "arrays.Aeq")
            op = build_fbs(ProblemFBS(a["P"], a["q"], g, float(p["gamma"])))
            x0 = np.zeros(n)
        else:
            raise ProblemFormatError(f"unknown algorithm {algorithm!r} for qp",
                                     "params.algorithm")
    elif problem.kind == "consensus":
        fs = [Quadratic(P, q) for P, q in zip(a["P"], a["q"])]
        op = build_consensus(fs, float(p.get("gamma", 1.0)))
        x0 = np.zeros(op.n)
    else:  # pragma: no cover - validate() rejects unknown kinds
        raise ProblemFormatError(f"unknown kind {problem.kind!r}", "kind")
    return op, np.array(x0, dtype=float)


# -- traces --------------------------------------------------------------

TRACE_COLUMNS = ("k", "res_norm", "nominal_res_norm", "alpha_k", "candidates", "activated",
                 "s1_evals", "s2_evals", "slow_path", "nominal_gap", "res_change")
_FIELD_OF = {"alpha_k": "alpha"}


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return f"{v:.17g}"


def save_trace(trace, path):
    """Write one CSV row per record; the header row holds the column names."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in trace.records:
            w.writerow([_fmt(getattr(rec, _FIELD_OF.get(c, c))) for c in TRACE_COLUMNS])


def load_trace(path):
    types = {f.name: f.type for f in fields(TraceRecord)}
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ProblemFormatError("missing column", f"trace.{missing[0]}")
        for line, row in enumerate(reader, start=2):
            kw = {}
            for c in TRACE_COLUMNS:
                name = _FIELD_OF.get(c, c)
                raw = row[c]
                try:
                    if types[name] == "bool":
                        kw[name] = bool(int(raw))
                    elif types[name] == "int":
                        kw[name] = int(raw)
                    else:
                        kw[name] = float(raw)
                except (TypeError, ValueError):
                    raise ProblemFormatError(f"bad value {raw!r} on line {line}",
                                             f"trace.{c}") from None
            records.append(TraceRecord(**kw))
    trace = IterationTrace(records=records)
    return trace

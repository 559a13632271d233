"""Command-line front end: ``avgls gen|solve|bench|demo-ap``.

Exit codes of ``solve`` and ``bench``: 0 converged, 2 usage error,
3 iteration cap reached, 4 infeasibility suspected, 5 unreadable problem
file, 6 numerical failure. Log verbosity comes from ``AVGLS_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import engine, problems
from .engine import CONVERGED, INFEASIBLE, MAX_ITERATIONS, LinearForward, LineSearchConfig
from .exceptions import ConfigError, NumericalFailure, ProblemFormatError

logger = logging.getLogger("avgls")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MAX_ITER = 3
EXIT_INFEASIBLE = 4
EXIT_BAD_INPUT = 5
EXIT_NUMERIC = 6

STATUS_EXIT = {CONVERGED: EXIT_OK, MAX_ITERATIONS: EXIT_MAX_ITER, INFEASIBLE: EXIT_INFEASIBLE}

G17 = "{:.17g}"


@dataclass
class RunSummary:
    status: str
    iterations: int
    wall_time_seconds: float
    r0_norm: float
    final_res_norm: float
    ls_accept_count: int
    ls_accept_alpha_gt5_count: int
    max_candidates: int
    total_s2_evals: int
    total_s1_evals: int
    displacement_norm: float | None = None

    @classmethod
    def from_result(cls, result, wall_time):
        tr = result.trace
        nominal = tr.nominal_step
        recs = tr.records
        disp = result.displacement_estimate
        return cls(
            status=result.status,
            iterations=len(recs),
            wall_time_seconds=wall_time,
            r0_norm=tr.r0_norm,
            final_res_norm=tr.final_res_norm,
            ls_accept_count=sum(rec.alpha > nominal for rec in recs),
            ls_accept_alpha_gt5_count=sum(rec.alpha > 5 for rec in recs),
            max_candidates=max((rec.candidates for rec in recs), default=0),
            total_s2_evals=tr.init_s2_evals + sum(rec.s2_evals for rec in recs),
            total_s1_evals=tr.init_s1_evals + sum(rec.s1_evals for rec in recs),
            displacement_norm=None if disp is None else float(np.linalg.norm(disp)),
        )

    def lines(self):
        out = []
        for k, v in asdict(self).items():
            if isinstance(v, float):
                v = G17.format(v)
            out.append(f"{k}: {v}")
        return out


def _atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_save_trace(trace, path):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    problems.save_trace(trace, tmp)
    os.replace(tmp, path)


def _columns(rows):
    return "".join(" ".join(G17.format(v) if isinstance(v, float) else str(v) for v in row)
                   + "\n" for row in rows)


def _add_ls_flags(p):
    g = p.add_argument_group("line search")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--alpha-max", type=float)
    g.add_argument("--schedule", choices=("geometric", "linear"))
    g.add_argument("--beta", type=float, help="backtracking factor for the geometric schedule")
    g.add_argument("--lin-start", type=float)
    g.add_argument("--lin-spacing", type=float)
    g.add_argument("--lin-count", type=int)
    g.add_argument("--selection", choices=engine.SELECTIONS)
    g.add_argument("--activation", choices=engine.ACTIVATIONS)
    g.add_argument("--eps-hat", type=float)
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--refresh-period", type=int)
    g.add_argument("--no-linesearch", action="store_true",
                   help="always take the nominal step")
    p.add_argument("--seed", type=int, help="recorded in the summary; problems carry their own")
    p.add_argument("--out-dir", default=".")


def _config(problem, args):
    params = dict(problem.params)
    sched = dict(params.get("schedule") or {"type": "geometric"})
    if args.schedule:
        sched = {"type": args.schedule}
    if args.beta is not None:
        sched = {"type": "geometric", "factor": args.beta}
    for flag, key in (("lin_start", "start"), ("lin_spacing", "spacing"), ("lin_count", "count")):
        if getattr(args, flag) is not None:
            sched["type"] = "linear"
            sched[key] = getattr(args, flag)
    params["schedule"] = sched
    return problems.config_from_params(
        params, epsilon=args.epsilon, alpha_max=args.alpha_max, selection=args.selection,
        activation="never" if args.no_linesearch else args.activation, eps_hat=args.eps_hat,
        tol=args.tol, max_iter=args.max_iter, refresh_period=args.refresh_period)


def _timed_run(op, x0, cfg):
    t0 = time.monotonic()
    result = engine.run(op, x0, cfg)
    return result, time.monotonic() - t0


def cmd_gen(args):
    if args.kind == "nnls":
        prob = problems.gen_nnls(args.n, args.m or args.n, args.seed)
    elif args.kind == "circle-line":
        prob = problems.gen_circle_line(args.angle)
    elif args.kind == "disjoint":
        prob = problems.gen_disjoint(args.gap)
    elif args.kind == "qp":
        prob = problems.gen_qp(args.n, args.seed, k=args.k)
    else:
        prob = problems.gen_consensus(args.N, args.n, args.seed)
    text = problems.dumps_problem(prob)
    if args.output == "-":
        sys.stdout.write(text + "\n")
    else:
        _atomic_write(args.output, text)
        print(f"wrote {args.output}")
    return EXIT_OK


def cmd_solve(args):
    problem = problems.load_problem(args.problem)
    cfg = _config(problem, args)
    op, x0 = problems.build_solver(problem)
    result, wall = _timed_run(op, x0, cfg)
    summary = RunSummary.from_result(result, wall)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_save_trace(result.trace, out / "trace.csv")
    doc = asdict(summary)
    doc["seed"] = problem.seed if args.seed is None else args.seed
    sol = op.solution(result.x)
    if isinstance(sol, tuple):
        doc["solution"] = {k: v.tolist() for k, v in sol._asdict().items()}
    else:
        doc["solution"] = sol.tolist()
    _atomic_write(out / "summary.json", json.dumps(doc, indent=1))
    for line in summary.lines():
        print(line)
    return STATUS_EXIT[result.status]


def cmd_bench(args):
    problem = problems.load_problem(args.problem)
    cfg = _config(problem, args)
    op, x0 = problems.build_solver(problem)
    runs = {}
    for tag, c in (("ls", cfg), ("nols", replace(cfg, activation="never"))):
        runs[tag] = _timed_run(op, x0, c)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for tag, (result, wall) in runs.items():
        norms = result.trace.res_norms()
        _atomic_write(out / f"residual_{tag}.dat",
                      _columns((k, float(v)) for k, v in enumerate(norms)))
        _atomic_save_trace(result.trace, out / f"trace_{tag}.csv")
        report[tag] = asdict(RunSummary.from_result(result, wall))
    ls_trace = runs["ls"][0].trace
    _atomic_write(out / "steps_ls.dat", _columns(
        (rec.k, rec.alpha, rec.candidates) for rec in ls_trace.records))
    it_ls = max(report["ls"]["iterations"], 1)
    t_ls = report["ls"]["wall_time_seconds"] or float("nan")
    report["iteration_ratio"] = report["nols"]["iterations"] / it_ls
    report["time_ratio"] = report["nols"]["wall_time_seconds"] / t_ls
    _atomic_write(out / "bench.json", json.dumps(report, indent=1))
    print(f"iterations  ls: {report['ls']['iterations']}  no-ls: {report['nols']['iterations']}")
    print(f"iteration_ratio: {G17.format(report['iteration_ratio'])}")
    print(f"time_ratio: {G17.format(report['time_ratio'])}")
    return max(STATUS_EXIT[r.status] for r, _ in runs.values())


def ap_demo(angle_deg, start=1.0, spacing=6.25, count=6, epsilon=0.03, plain_steps=50):
    """One AP iteration with a forward candidate grid from a point on the unit circle.

    Returns a dict with the candidate table, the BestOfSchedule and
    FarthestPassing choices and the distance comparison with plain AP.
    """
    prob = problems.gen_circle_line(angle_deg)
    op, x0 = problems.build_solver(prob)
    sched = LinearForward(start, spacing, count)
    grid = sched.grid()
    alpha_max = max(grid)
    state = engine.initial_state(op, x0)
    xstar = np.array([1.0, 0.0])
    out = {"x0": x0, "r_norm": float(np.linalg.norm(state.r)), "candidates": [],
           "best": None, "farthest": None}
    if out["r_norm"] == 0.0:
        return out
    nominal_norm = float(np.linalg.norm(op.residual(x0 + op.nominal_step * state.r)))
    for i, a in enumerate(grid, start=1):
        xc = x0 + a * state.r
        rn = float(np.linalg.norm(op.residual(xc)))
        out["candidates"].append({"index": i, "alpha": a, "x": xc, "res_norm": rn,
                                  "nominal": a == op.nominal_step,
                                  "passes": rn <= (1 - epsilon) * nominal_norm})
    for sel in ("best", "farthest"):
        cfg = LineSearchConfig(epsilon=epsilon, alpha_max=alpha_max, schedule=sched,
                               selection=sel)
        nxt, rec = engine.step(op, state, cfg)
        out[sel] = {"alpha": rec.alpha, "x": nxt.x,
                    "dist": float(np.linalg.norm(nxt.x - xstar))}
    y = np.array(x0)
    for _ in range(plain_steps):
        y = op(y)
    out["plain"] = {"steps": plain_steps, "x": y, "dist": float(np.linalg.norm(y - xstar))}
    return out


def cmd_demo_ap(args):
    rep = ap_demo(args.angle, args.start, args.spacing, args.count, args.epsilon,
                  args.plain_steps)
    print(f"start x0 = ({G17.format(rep['x0'][0])}, {G17.format(rep['x0'][1])})")
    print(f"||r|| = {G17.format(rep['r_norm'])}")
    if not rep["candidates"]:
        print("x0 is a fixed point; no candidates evaluated")
        return EXIT_OK
    print("i alpha x1 x2 res_norm passes")
    for c in rep["candidates"]:
        tag = "nominal" if c["nominal"] else ("yes" if c["passes"] else "no")
        print(c["index"], G17.format(c["alpha"]), G17.format(c["x"][0]), G17.format(c["x"][1]),
              G17.format(c["res_norm"]), tag)
    for sel, label in (("best", "BestOfSchedule"), ("farthest", "FarthestPassing")):
        print(f"{label}: alpha = {G17.format(rep[sel]['alpha'])}, "
              f"distance to x* = {G17.format(rep[sel]['dist'])}")
    print(f"{rep['plain']['steps']} plain AP steps: distance to x* = "
          f"{G17.format(rep['plain']['dist'])}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="avgls", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a problem file")
    p.add_argument("kind", choices=("nnls", "circle-line", "disjoint", "qp", "consensus"))
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--m", type=int)
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--k", type=int, default=0, help="equality constraints (qp)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--angle", type=float, default=350.0)
    p.add_argument("--gap", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve a problem file and write trace.csv + summary.json")
    p.add_argument("problem")
    _add_ls_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="compare runs with and without line search")
    p.add_argument("problem")
    _add_ls_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("demo-ap", help="alternating projections line search walk-through")
    p.add_argument("--angle", type=float, default=350.0)
    p.add_argument("--start", type=float, default=1.0)
    p.add_argument("--spacing", type=float, default=6.25)
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--epsilon", type=float, default=0.03)
    p.add_argument("--plain-steps", type=int, default=50)
    p.set_defaults(func=cmd_demo_ap)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("AVGLS_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProblemFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

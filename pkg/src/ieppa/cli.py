"""Command-line interface: ``ieppa generate | solve | tomo | bench``.

Exit codes: 0 success, 2 usage, 3 I/O error, 4 malformed input, 5 solver
error, 6 solver stopped without converging (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import Instance
from .dykl import solve_dykl
from .eppa import STATUS_CONVERGED, EppaParams, SolveReport, kkt_residuals, solve_ieppa
from .errors import InstanceFormatError, InvalidDirectionError, IeppaError
from .gen import GenSpec, gen_cmot
from .oracle import OPTIMAL, solve_instance
from .tomo import canonical_directions, parse_directions, project_image, psnr, read_pgm, reconstruct, write_pgm

log = logging.getLogger("ieppa")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_SOLVER = 5
EXIT_NOT_CONVERGED = 6

DEFAULT_EPS = 0.05
DEFAULT_DYKL_EPS = 1e-2
DEFAULT_TOL = 1e-5
DEFAULT_MAX_OUTER = 500
DEFAULT_DYKL_MAX_ITER = 20000

BENCH_COLUMNS = ("marginals", "n", "seed", "method", "epsilon", "objective", "normalized_obj",
                 "feasibility", "iter", "inner_iter", "time_s", "status")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(path).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _report_json(report: SolveReport) -> str:
    return json.dumps(report.to_dict(), indent=2)


def _oracle_report(inst: Instance) -> SolveReport:
    t0 = time.perf_counter()
    res = solve_instance(inst)
    ms = (time.perf_counter() - t0) * 1e3
    deltas = dict.fromkeys(("d1", "d2", "d3", "d4", "d5", "d6", "d7", "kkt"))
    if res.x is not None:
        full = kkt_residuals(inst, res.x, [np.zeros(b.m) for b in inst.blocks])
        deltas.update(d1=full["d1"], d3=full["d3"], d4=full["d4"])
    return SolveReport(res.objective, deltas, res.iterations, res.iterations, ms,
                       res.status, []), res.x


def _finished_ok(report: SolveReport) -> bool:
    return report.status in (STATUS_CONVERGED, OPTIMAL)


def _dump_primal(path, X) -> None:
    payload = {"dims": list(X.shape), "values": [float(v) for v in X.ravel()]}
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def _eppa_params(args) -> EppaParams:
    return EppaParams(epsilon=args.epsilon if args.epsilon is not None else DEFAULT_EPS,
                      tol_kkt=args.tol, max_outer=args.max_outer, scheme=args.scheme)


def _parse_sizes(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad size list {text!r}") from None
    if not out or min(out) < 1:
        raise UsageError("sizes must be positive integers")
    return out


def _parse_seeds(text: str) -> list[int]:
    """``"5"`` means seeds 0..4; ``"3-7"`` an inclusive range; ``"1,4,9"`` a list."""
    try:
        if "," in text:
            return [int(v) for v in text.split(",") if v.strip()]
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            return list(range(lo, hi + 1))
        return list(range(int(text)))
    except ValueError:
        raise UsageError(f"bad seed spec {text!r}") from None


# -------------------------------------------------------------- subcommands

def cmd_generate(args) -> int:
    sizes = _parse_sizes(args.size)
    spec = GenSpec(args.marginals, tuple(sizes), seed=args.seed, capacity_factor=args.capacity_factor)
    inst, _ = gen_cmot(spec)
    _write_text(args.output, json.dumps(inst.to_dict()))
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = Instance.load(args.instance)
    X = None
    if args.method == "ieppa":
        X, _, _, report = solve_ieppa(inst, _eppa_params(args))
    elif args.method == "dykl":
        eps = args.epsilon if args.epsilon is not None else DEFAULT_DYKL_EPS
        X, report = solve_dykl(inst, eps, args.tol, args.max_iter)
    else:
        report, X = _oracle_report(inst)
    _write_text(args.output, _report_json(report))
    if args.primal_out and X is not None:
        _dump_primal(args.primal_out, X)
    return EXIT_OK if _finished_ok(report) else EXIT_NOT_CONVERGED


def cmd_tomo_project(args) -> int:
    img = read_pgm(args.image)
    if args.dirs and args.num_dirs:
        raise UsageError("give either --dirs or --num-dirs")
    dirs = parse_directions(args.dirs) if args.dirs else canonical_directions(args.num_dirs or 4)
    inst = project_image(img, dirs)
    _write_text(args.output, json.dumps(inst.to_dict()))
    return EXIT_OK


def cmd_tomo_reconstruct(args) -> int:
    inst = Instance.load(args.instance)
    img, report = reconstruct(inst, _eppa_params(args), return_report=True)
    write_pgm(args.output, img)
    if args.report:
        _write_text(args.report, _report_json(report))
    if args.truth:
        value = psnr(img, read_pgm(args.truth))
        print(f"psnr_db {value:.6f}" if math.isfinite(value) else "psnr_db inf")
    return EXIT_OK if _finished_ok(report) else EXIT_NOT_CONVERGED


def _bench_rows(args):
    dykl_eps = [float(v) for v in args.dykl_eps.split(",") if v.strip()] if args.dykl_eps else []
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for n in _parse_sizes(args.sizes):
        for seed in _parse_seeds(args.seeds):
            inst, _ = gen_cmot(GenSpec(args.marginals, (n,), seed=seed))
            ref, _ = _oracle_report(inst)
            if ref.status != OPTIMAL:
                raise IeppaError(f"oracle failed on n={n} seed={seed}: {ref.status}")
            runs = []
            for method in methods:
                if method == "oracle":
                    runs.append(("oracle", None, ref))
                elif method == "ieppa":
                    p = EppaParams(epsilon=args.epsilon, tol_kkt=args.tol, max_outer=args.max_outer)
                    runs.append(("ieppa", args.epsilon, solve_ieppa(inst, p).report))
                elif method == "dykl":
                    for eps in dykl_eps or [DEFAULT_DYKL_EPS]:
                        runs.append(("dykl", eps, solve_dykl(inst, eps, args.tol, args.max_iter)[1]))
                else:
                    raise UsageError(f"unknown bench method {method!r}")
            for method, eps, rep in runs:
                F, Fg = rep.objective, ref.objective
                feas = max(rep.deltas[k] for k in ("d1", "d3", "d4"))
                yield {
                    "marginals": args.marginals, "n": n, "seed": seed, "method": method,
                    "epsilon": "" if eps is None else f"{eps:g}",
                    "objective": f"{F:.12e}",
                    "normalized_obj": f"{abs(F - Fg) / (1 + abs(Fg)):.3e}",
                    "feasibility": f"{feas:.3e}",
                    "iter": rep.outer_iters, "inner_iter": rep.inner_sweeps,
                    "time_s": f"{rep.wall_time_ms / 1e3:.4f}", "status": rep.status,
                }


def cmd_bench(args) -> int:
    out = sys.stdout if args.output in (None, "-") else open(args.output, "w", newline="", encoding="utf-8")
    try:
        writer = csv.DictWriter(out, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for row in _bench_rows(args):
            writer.writerow(row)
            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_solver_flags(p, *, with_dykl=False):
    p.add_argument("--epsilon", type=float, default=None,
                   help=f"proximal / regularization weight (default {DEFAULT_EPS} for ieppa"
                        + (f", {DEFAULT_DYKL_EPS} for dykl)" if with_dykl else ")"))
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-outer", type=int, default=DEFAULT_MAX_OUTER)
    p.add_argument("--scheme", choices=("auto", "multiplicative", "logdomain", "cmot"), default="auto")
    if with_dykl:
        p.add_argument("--max-iter", type=int, default=DEFAULT_DYKL_MAX_ITER, help="DyKL iteration cap")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ieppa", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded CMOT instance as JSON")
    g.add_argument("--marginals", type=int, choices=(2, 3), default=2)
    g.add_argument("--size", default="10", help="n or n1,n2[,n3]")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--capacity-factor", type=float, default=2.0)
    g.add_argument("-o", "--output", default="-")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve an instance and write a JSON report")
    s.add_argument("instance")
    s.add_argument("--method", choices=("ieppa", "dykl", "oracle"), default="ieppa")
    _add_solver_flags(s, with_dykl=True)
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--primal-out", help="also write the primal tensor as JSON")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("tomo", help="tomography: project an image or reconstruct one")
    tsub = t.add_subparsers(dest="tomo_command", required=True)
    tp = tsub.add_parser("project", help="PGM image -> instance JSON")
    tp.add_argument("image")
    tp.add_argument("--dirs", help='direction list such as "1,0;0,1;1,1;1,-1"')
    tp.add_argument("--num-dirs", type=int, help="use the first N canonical directions")
    tp.add_argument("-o", "--output", default="-")
    tp.set_defaults(func=cmd_tomo_project)
    tr = tsub.add_parser("reconstruct", help="instance JSON -> PGM image")
    tr.add_argument("instance")
    tr.add_argument("-o", "--output", required=True)
    tr.add_argument("--truth", help="ground-truth PGM; prints the PSNR")
    tr.add_argument("--report", help="write the solver report here")
    _add_solver_flags(tr)
    tr.set_defaults(func=cmd_tomo_reconstruct)

    b = sub.add_parser("bench", help="seeded benchmark table as CSV")
    b.add_argument("--marginals", type=int, choices=(2, 3), default=2)
    b.add_argument("--sizes", default="10")
    b.add_argument("--seeds", default="5", help='"N" for 0..N-1, "a-b" or "a,b,c"')
    b.add_argument("--methods", default="ieppa,dykl,oracle")
    b.add_argument("--dykl-eps", default="0.1,0.01", help="comma-separated DyKL weights")
    b.add_argument("--epsilon", type=float, default=DEFAULT_EPS)
    b.add_argument("--tol", type=float, default=DEFAULT_TOL)
    b.add_argument("--max-outer", type=int, default=DEFAULT_MAX_OUTER)
    b.add_argument("--max-iter", type=int, default=DEFAULT_DYKL_MAX_ITER)
    b.add_argument("-o", "--output", default="-")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ieppa: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceFormatError, InvalidDirectionError, json.JSONDecodeError) as exc:
        print(f"ieppa: malformed input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"ieppa: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IeppaError, ArithmeticError, ValueError) as exc:
        print(f"ieppa: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``project``, ``bench``, ``verify`` and ``slope``.

Exit status is 0 on success, 2 for invalid parameters or malformed input and
3 when a solution fails its certificate or disagrees with the oracle.
"""

import argparse
import hashlib
import sys
import time

import numpy as np

from . import bench
from .core import DEFAULT_TOL, ParameterError, ProblemInstance, topk_sum, verify_kkt

EXIT_OK = 0
EXIT_PARAM = 2
EXIT_CERT = 3


def _fmt(value):
    """Shortest round-trip text for a float, without a trailing ``.0``."""
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def _size(text):
    """Integer sizes, accepting forms like ``1e6``."""
    value = float(text)
    if value != int(value):
        raise argparse.ArgumentTypeError(f"not an integer size: {text}")
    return int(value)


def _emit(**pairs):
    for key, value in pairs.items():
        if isinstance(value, float):
            value = _fmt(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        print(f"{key}={value}")


def _load_vector(args):
    if args.input is not None:
        return bench.read_vector(args.input)
    if args.n is None:
        raise ParameterError("give --input or --n")
    seed = args.seed if args.seed is not None else bench.default_seed()
    return bench.gen_instance(args.n, seed)


def _problem(args, a):
    if a.size == 0:
        raise ParameterError("the input vector is empty")
    if args.k is not None:
        k = args.k
    else:
        if not 0.0 < args.tau_k <= 1.0:
            raise ParameterError(f"--tau-k must lie in (0, 1], got {args.tau_k}")
        k = bench.derive_k(a.size, args.tau_k)
    if not 1 <= k <= a.size:
        raise ParameterError(f"k must satisfy 1 <= k <= n={a.size}, got {k}")
    r = args.r if args.r is not None else args.tau_r * topk_sum(a, k)
    return ProblemInstance(a, k, r)


def cmd_project(args):
    inst = _problem(args, _load_vector(args))
    solver = bench.SOLVERS[args.algo]
    if args.algo == "grid" and inst.n > bench.GRID_MAX_N:
        raise ParameterError(f"the grid oracle is limited to n <= {bench.GRID_MAX_N}")
    t0 = time.perf_counter_ns()
    sol = solver(inst, args.eps) if args.algo == "eips" else solver(inst)
    elapsed = time.perf_counter_ns() - t0
    st = sol.stats
    _emit(n=inst.n, k=inst.k, r=inst.r, algo=args.algo, u_star=sol.u_star,
          l_star=sol.l_star, lam=sol.lam, flag=sol.flag, init_iters=st.init_iters,
          pivot_iters=st.pivot_iters, exact_iters=st.exact_iters,
          gsearch_passes=st.gsearch_passes, elapsed_ns=elapsed,
          x_sha256=hashlib.sha256(np.ascontiguousarray(sol.x).tobytes()).hexdigest())
    if args.out is not None:
        fmt = args.format or ("binary" if args.out.endswith((".bin", ".tks")) else "text")
        bench.write_vector(args.out, sol.x, fmt)
    status = EXIT_OK
    if args.verify:
        cert = verify_kkt(inst, sol, args.tol)
        _emit(kkt_pass=cert.passed, residual_area=cert.residual_area,
              residual_budget=cert.residual_budget, set_violations=cert.set_violations)
        if not cert.passed:
            status = EXIT_CERT
        if inst.n <= bench.GRID_MAX_N:
            diff = float(np.abs(sol.x - bench.grid_oracle(inst).x).max())
            _emit(oracle_max_diff=diff, oracle_pass=diff <= bench.ORACLE_TOL)
            if diff > bench.ORACLE_TOL:
                status = EXIT_CERT
    return status


def cmd_bench(args):
    seed = args.seed if args.seed is not None else bench.default_seed()
    grid = bench.ExperimentGrid(tuple(args.n_list), tuple(args.tau_k), tuple(args.tau_r),
                                args.reps, seed)
    try:
        records = bench.run_suite(grid, args.algos, args.out, tol=args.tol, eps=args.eps)
    except bench.CertificateFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CERT
    if args.flag_table is not None:
        table = bench.flag_stats(records, grid.tau_k_list, grid.tau_r_list)
        bench.write_flag_table(table, args.flag_table)
    _emit(records=len(records), out=args.out)
    return EXIT_OK


def cmd_verify(args):
    seed = args.seed if args.seed is not None else bench.default_seed()
    if not 1 <= args.n_min <= args.n_max:
        raise ParameterError("need 1 <= --n-min <= --n-max")
    if args.n_max > bench.GRID_MAX_N:
        raise ParameterError(f"the grid oracle is limited to n <= {bench.GRID_MAX_N}")
    failures = bench.verify_suite(args.count, seed, args.n_min, args.n_max, args.tol,
                                  args.parallel_instances)
    for msg in failures:
        print(f"FAIL {msg}", file=sys.stderr)
    _emit(checked=args.count, failures=len(failures))
    return EXIT_CERT if failures else EXIT_OK


def cmd_slope(args):
    records = bench.read_records(args.input)
    table = bench.slope_table(records, args.algo, args.n_min)
    if not table:
        raise ParameterError(f"no ({args.algo}) cell has records for 3 or more sizes")
    print("tau_k,tau_r,slope")
    for (tk, tr), slope in table.items():
        print(f"{_fmt(tk)},{_fmt(tr)},{slope:.4f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="topksum",
        description="Euclidean projection onto {x : sum of the k largest entries <= r}.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="solve one instance")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="vector file (text or binary)")
    src.add_argument("--n", type=_size, help="generate a uniform vector of this size")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="generator seed (default $TKS_SEED)")
    kgrp = p.add_mutually_exclusive_group(required=True)
    kgrp.add_argument("--k", type=int)
    kgrp.add_argument("--tau-k", type=float)
    rgrp = p.add_mutually_exclusive_group(required=True)
    rgrp.add_argument("--r", type=float)
    rgrp.add_argument("--tau-r", type=float)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="certificate tolerance")
    p.add_argument("--algo", choices=sorted(bench.SOLVERS), default="eips")
    p.add_argument("--verify", action="store_true",
                   help="check the certificate, and the grid oracle when n <= 10^4")
    p.add_argument("--out", help="write x to this file")
    p.add_argument("--format", choices=("text", "binary"),
                   help="format of --out (default: binary for .bin/.tks, else text)")
    p.set_defaults(func=cmd_project)

    b = sub.add_parser("bench", help="time solvers over a tau grid")
    b.add_argument("--n-list", type=_size, nargs="+", default=list(bench.DESK_N_LIST))
    b.add_argument("--tau-k", type=float, nargs="+", default=list(bench.TAU_K_GRID))
    b.add_argument("--tau-r", type=float, nargs="+", default=list(bench.TAU_R_GRID))
    b.add_argument("--reps", type=int, default=bench.DEFAULT_REPS)
    b.add_argument("--seed", type=lambda s: int(s, 0))
    b.add_argument("--algos", nargs="+", choices=sorted(bench.SOLVERS),
                   default=["eips", "sorted"])
    b.add_argument("--eps", type=float, default=1e-8)
    b.add_argument("--tol", type=float, default=DEFAULT_TOL)
    b.add_argument("--out", required=True, help="CSV file for the records")
    b.add_argument("--flag-table", help="also write mean flags per (tau_k, tau_r)")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="compare the solver with the grid oracle")
    v.add_argument("--count", type=int, default=1000)
    v.add_argument("--n-min", type=int, default=5)
    v.add_argument("--n-max", type=int, default=200)
    v.add_argument("--seed", type=lambda s: int(s, 0))
    v.add_argument("--tol", type=float, default=DEFAULT_TOL)
    v.add_argument("--parallel-instances", type=int, default=1, metavar="WORKERS")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("slope", help="log-log slopes from a bench CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--algo", default="eips")
    s.add_argument("--n-min", type=_size, help="fit only sizes >= this")
    s.set_defaults(func=cmd_slope)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())

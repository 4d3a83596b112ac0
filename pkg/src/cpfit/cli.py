"""Command-line driver: synthetic data generation, completion runs, and
kernel micro-benchmarks.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import statistics
import sys
import time

import numpy as np

from . import hypersparse, kernels
from .core import RngState, SparseTensor, gen_function_tensor, gen_low_rank
from .exceptions import DataError, NumericalError
from .optim import SolverConfig, run
from .tensor_io import parse_tns, write_factors, write_tns, write_trace


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1 (argparse default is 2, which we reserve for data)
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"dims must be comma-separated integers, got {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError("dims must be positive")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpfit",
                     description="Sparse tensor completion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic tensors",
                         description="Write a synthetic .tns dataset.")
    gen.add_argument("kind", choices=["lowrank", "function"],
                     help="lowrank: exact low-rank model on a Bernoulli mask; "
                          "function: smooth separable-decay model problem")
    gen.add_argument("--dims", type=_dims, required=True,
                     help="comma-separated mode sizes, e.g. 50,50,50")
    gen.add_argument("--rank", type=int, default=5)
    gen.add_argument("--fraction", type=float, default=0.2,
                     help="observation probability per cell")
    gen.add_argument("--law", choices=["uniform01", "gaussian"],
                     default="uniform01")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output .tns path")
    gen.add_argument("--factors-out", default=None,
                     help="ground-truth factors path "
                          "(default: <out>.factors.npy for lowrank)")
    gen.set_defaults(func=cmd_gen)

    runp = sub.add_parser("run", help="run a completion solver",
                          description="Fit factors to a .tns dataset and "
                                      "write a convergence trace.")
    runp.add_argument("--input", required=True, help="input .tns path")
    runp.add_argument("--algo", choices=["als", "ccd", "sgd", "gn", "newton"],
                      default="als")
    runp.add_argument("--loss", choices=["ls", "poisson"], default="ls")
    runp.add_argument("--rank", type=int, default=10)
    runp.add_argument("--reg", type=float, default=None,
                      help="regularization (default per loss/algo)")
    runp.add_argument("--max-iters", type=int, default=20)
    runp.add_argument("--tol", type=float, default=1e-6)
    runp.add_argument("--inner-max", type=int, default=None,
                      help="inner Newton count (als/ccd, generalized loss)")
    runp.add_argument("--inner-tol", type=float, default=None)
    runp.add_argument("--cg-tol", type=float, default=None,
                      help="CG relative tolerance (gn/newton)")
    runp.add_argument("--cg-max", type=int, default=None)
    runp.add_argument("--step", type=float, default=None,
                      help="SGD learning rate")
    runp.add_argument("--sample-rate", type=float, default=None,
                      help="SGD per-entry sampling probability")
    runp.add_argument("--seed", type=int, default=0)
    runp.add_argument("--threads", type=int, default=1)
    runp.add_argument("--deterministic", action="store_true",
                      help="byte-stable traces (elapsed written as 0.0)")
    runp.add_argument("--trace", default=None, help="trace CSV output path")
    runp.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="micro-benchmark the kernels",
                           description="Time all-at-once kernels against "
                                       "pairwise-contraction baselines.")
    bench.add_argument("kernel", choices=["mttkrp", "tttp", "solvefactor"])
    bench.add_argument("--dims", type=_dims, default=(64, 64, 64))
    bench.add_argument("--nnz", type=int, default=20000)
    bench.add_argument("--rank", type=int, default=16)
    bench.add_argument("--repeats", type=int, default=5,
                       help="timed repeats (an extra warm-up run is discarded)")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--threads", type=int, default=1)
    bench.set_defaults(func=cmd_bench)
    return parser


_SGD_ONLY = ("step", "sample_rate")
_CG_ONLY = ("cg_tol", "cg_max")
_INNER_ONLY = ("inner_max", "inner_tol")


def _usage_error(message: str) -> None:
    sys.stderr.write(f"cpfit run: error: {message}\n")
    raise SystemExit(1)


def _check_flag_compat(args) -> None:
    if args.algo != "sgd":
        for name in _SGD_ONLY:
            if getattr(args, name) is not None:
                _usage_error(f"--{name.replace('_', '-')} requires --algo sgd")
    if args.algo not in ("gn", "newton"):
        for name in _CG_ONLY:
            if getattr(args, name) is not None:
                _usage_error(
                    f"--{name.replace('_', '-')} requires --algo gn or newton")
    if args.algo not in ("als", "ccd"):
        for name in _INNER_ONLY:
            if getattr(args, name) is not None:
                _usage_error(
                    f"--{name.replace('_', '-')} requires --algo als or ccd")


def _run_defaults(args) -> dict:
    """Per-loss defaults for unset flags, following the reported run setups."""
    if args.loss == "poisson":
        reg = 1.0 if args.algo == "ccd" else 0.1
        step = 3e-3
    else:
        reg = 1e-5
        step = 5e-3
    return {
        "reg": reg if args.reg is None else args.reg,
        "step": step if args.step is None else args.step,
        "sample_rate": step if args.sample_rate is None else args.sample_rate,
        "inner_max": 5 if args.inner_max is None else args.inner_max,
        "inner_tol": 1e-3 if args.inner_tol is None else args.inner_tol,
        "cg_tol": 5e-3 if args.cg_tol is None else args.cg_tol,
        "cg_max": args.cg_max,
    }


def cmd_gen(args) -> int:
    rng = RngState(args.seed)
    if args.kind == "lowrank":
        t, truth = gen_low_rank(args.dims, args.rank, args.fraction,
                                value_law=args.law, rng=rng)
        factors_out = args.factors_out or f"{args.out}.factors.npy"
        write_tns(t, args.out)
        write_factors(truth, factors_out)
        print(f"wrote {t.nnz} entries to {args.out}; "
              f"ground-truth factors in {factors_out}")
    else:
        t = gen_function_tensor(args.dims, args.fraction, rng=rng)
        write_tns(t, args.out)
        print(f"wrote {t.nnz} entries to {args.out}")
    return 0


def cmd_run(args) -> int:
    _check_flag_compat(args)
    overrides = _run_defaults(args)
    tensor = parse_tns(args.input)
    cfg = SolverConfig(
        rank=args.rank, algorithm=args.algo, loss=args.loss,
        reg=overrides["reg"], max_iters=args.max_iters, tol=args.tol,
        inner_max=overrides["inner_max"], inner_tol=overrides["inner_tol"],
        cg_tol=overrides["cg_tol"], cg_max=overrides["cg_max"],
        step=overrides["step"], sample_rate=overrides["sample_rate"],
        seed=args.seed, deterministic=args.deterministic,
        threads=args.threads,
    )
    trace = run(tensor, cfg)
    last = trace.records[-1]
    print(f"{args.algo}/{args.loss}: {len(trace.records)} records, "
          f"objective {last.objective:.6g}, "
          f"{trace.metric_name} {last.metric:.6g}")
    if args.trace:
        write_trace(trace, args.trace)
        print(f"trace written to {args.trace}")
    return 0


def _random_tensor(dims, nnz, seed) -> SparseTensor:
    total = math.prod(dims)
    if nnz > total:
        raise DataError(f"nnz {nnz} exceeds cell count {total}")
    g = RngState(seed).generator()
    keys = np.unique(g.integers(0, total, size=int(nnz * 1.2) + 16,
                                dtype=np.uint64))
    while keys.size < nnz:
        extra = g.integers(0, total, size=nnz, dtype=np.uint64)
        keys = np.unique(np.concatenate([keys, extra]))
    keys = keys[:nnz]
    values = g.standard_normal(nnz)
    return SparseTensor(dims, keys, values, validate=False)


def _timeit(fn, repeats):
    fn()  # warm-up trial, ignored
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    mean = statistics.fmean(times)
    sd = statistics.pstdev(times) if len(times) > 1 else 0.0
    return mean, sd, times


def _report(name, mean, sd, repeats):
    print(f"{name}: mean {mean:.6f}s +- {2 * sd:.6f}s "
          f"(2 sigma, n={repeats}, warm-up discarded)")


def cmd_bench(args) -> int:
    t = _random_tensor(args.dims, args.nnz, args.seed)
    g = RngState(args.seed).child(1).generator()
    factors = [g.random((d, args.rank)) for d in args.dims]
    print(f"bench {args.kernel}: dims={args.dims} nnz={t.nnz} "
          f"rank={args.rank} repeats={args.repeats}")
    if args.kernel == "mttkrp":
        mean_a, sd_a, _ = _timeit(
            lambda: kernels.mttkrp(t, factors, 0, threads=args.threads),
            args.repeats)
        mean_p, sd_p, _ = _timeit(
            lambda: hypersparse.pairwise_mttkrp(t, factors, 0), args.repeats)
        _report("mttkrp all-at-once", mean_a, sd_a, args.repeats)
        _report("mttkrp pairwise", mean_p, sd_p, args.repeats)
        print(f"ratio pairwise/all-at-once: {mean_p / mean_a:.2f}")
    elif args.kernel == "tttp":
        mean_a, sd_a, _ = _timeit(
            lambda: kernels.tttp(t, factors, threads=args.threads),
            args.repeats)
        mean_p, sd_p, _ = _timeit(
            lambda: hypersparse.pairwise_tttp(t, factors), args.repeats)
        _report("tttp all-at-once", mean_a, sd_a, args.repeats)
        _report("tttp pairwise", mean_p, sd_p, args.repeats)
        print(f"ratio pairwise/all-at-once: {mean_p / mean_a:.2f}")
    else:
        mask = t.observation_mask()
        rhs = g.random((args.dims[0], args.rank))
        mean_s, sd_s, _ = _timeit(
            lambda: kernels.solve_factor(mask, factors, rhs, 0, reg=1e-3,
                                         threads=args.threads),
            args.repeats)
        _report("solve_factor", mean_s, sd_s, args.repeats)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as err:
        print(f"cpfit: data error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"cpfit: numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())

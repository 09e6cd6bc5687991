"""Command line: trace programs, verify plans, emit source, benchmark.

Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .codegen import (
    PlanConfig,
    build_plan,
    evaluate_outputs_individually,
    interpret_plan,
    load_plan,
    save_plan,
)
from .decompose import DecomposeConfig, global_decompose
from .emit import compile_plan, emit_kernel_source
from .expr import check_hash_collisions, eval_numeric
from .programs import PROGRAM_NAMES, ProgramSpec, trace_program
from .simplify import SimplifyConfig


def _add_program_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--program", required=True, choices=PROGRAM_NAMES)
    p.add_argument("--pattern", required=True,
                   help="random:n,nnz,seed | grid:WxH | mtx:path")
    p.add_argument("--seed", type=int, default=0)
    tag = p.add_mutually_exclusive_group()
    tag.add_argument("--tag", dest="tag", action="store_true", default=True,
                     help="tag per-element value blocks (default)")
    tag.add_argument("--no-tag", dest="tag", action="store_false")


def _add_plan_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tref", type=int, default=2,
                   help="reference-count threshold for stored intermediates")
    p.add_argument("--tcompl", type=int, default=8,
                   help="complexity threshold for stored intermediates")
    p.add_argument("--no-simplify", action="store_true")
    p.add_argument("--no-simplify-sums", action="store_true",
                   help="keep every sum untouched (cancellation safety)")
    p.add_argument("--no-coalesce", action="store_true")
    p.add_argument("--no-coherence", action="store_true")
    p.add_argument("--vector-width", type=int, default=4)


def _plan_config(args) -> PlanConfig:
    return PlanConfig(
        t_ref=args.tref,
        t_compl=args.tcompl,
        simplify_enabled=not args.no_simplify,
        simplify=SimplifyConfig(sums_enabled=not args.no_simplify_sums),
        coalesce=not args.no_coalesce,
        coherence=not args.no_coherence,
        vector_width=args.vector_width,
    )


def cmd_trace(args) -> int:
    spec = ProgramSpec(args.program, args.pattern, seed=args.seed, tag=args.tag)
    t0 = time.perf_counter()
    traced = trace_program(spec)
    t_exec = time.perf_counter() - t0
    plan = build_plan(traced.session, _plan_config(args), metadata=traced.meta)
    plan.stats["stage_seconds"]["execution"] = round(t_exec, 6)
    if args.check_collisions:
        report = check_hash_collisions(traced.arena)
        plan.stats["hash_collisions"] = {
            "structural": len(report.struct_collisions),
            "algebraic": len(report.alg_collisions),
            "nodes": report.nodes_checked,
        }
        print(
            f"hash check: {len(report.struct_collisions)} structural, "
            f"{len(report.alg_collisions)} algebraic collisions over {len(traced.arena)} nodes"
        )
    save_plan(plan, args.out)
    print(
        f"traced {args.program} ({args.pattern}): {plan.stats['nodes']} nodes, "
        f"{plan.stats['entities']} entities, {plan.stats['kernels']} kernels, "
        f"{len(plan.outputs)} outputs -> {args.out}"
    )
    return 0


def _retrace_for(plan):
    meta = plan.metadata
    spec = ProgramSpec(meta["program"], meta["pattern"], seed=meta["seed"], tag=meta["tag"])
    traced = trace_program(spec)
    if traced.arena.var_count != plan.input_count:
        raise ValueError(
            f"plan expects {plan.input_count} inputs but the program traces "
            f"{traced.arena.var_count}; the plan directory is stale"
        )
    return traced


def cmd_check(args) -> int:
    plan = load_plan(args.plan_dir)
    traced = _retrace_for(plan)
    rng = np.random.default_rng(args.seed)
    inputs = rng.uniform(0.5, 2.0, plan.input_count)
    res = interpret_plan(plan, inputs, check_schedule=True)
    if res.violations:
        for v in res.violations:
            print(f"schedule violation: {v}")
        print("schedule: FAIL")
        return 1
    oracle = eval_numeric(traced.arena, traced.outputs, list(inputs))
    got = res.outputs.tolist()
    if plan.metadata.get("simplify", True):
        ok = all(
            abs(g - o) <= 1e-12 * max(1.0, abs(g), abs(o)) for g, o in zip(got, oracle)
        ) and len(got) == len(oracle)
        print("rel<=1e-12: " + ("PASS" if ok else "FAIL"))
    else:
        ok = got == oracle
        print("bitwise: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def cmd_emit(args) -> int:
    plan = load_plan(args.plan_dir)
    if args.vector_width:
        plan.vector_width = args.vector_width
    src = emit_kernel_source(plan, parallel=args.parallel)
    out = Path(args.out) if args.out else Path(args.plan_dir) / "kernels.c"
    out.write_text(src)
    print(f"{len(plan.kernels)} kernels, {src.count(chr(10)) + 1} lines -> {out}")
    return 0


def cmd_bench(args) -> int:
    plan = load_plan(args.plan_dir)
    traced = _retrace_for(plan)
    rng = np.random.default_rng(args.seed)
    inputs = rng.uniform(0.5, 2.0, plan.input_count)

    naive_iters = max(1, args.iters // 20)
    t0 = time.perf_counter()
    for _ in range(naive_iters):
        evaluate_outputs_individually(traced.arena, traced.outputs, list(inputs))
    naive = (time.perf_counter() - t0) / naive_iters

    t0 = time.perf_counter()
    for _ in range(args.iters):
        interpret_plan(plan, inputs)
    interp = (time.perf_counter() - t0) / args.iters

    print(f"naive tree walking : {naive * 1e3:10.3f} ms  (mean of {naive_iters})")
    print(f"interpreter        : {interp * 1e3:10.3f} ms  (mean of {args.iters}, "
          f"{naive / interp:.1f}x)")

    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        run = compile_plan(plan, tmp, parallel=args.parallel)
        if run is None:
            print("compiled           : skipped (no C compiler)")
            return 0
        run(inputs)  # warm up
        t0 = time.perf_counter()
        for _ in range(args.iters):
            run(inputs)
        comp = (time.perf_counter() - t0) / args.iters
    print(f"compiled source    : {comp * 1e3:10.3f} ms  (mean of {args.iters}, "
          f"{naive / comp:.1f}x)")
    return 0


def cmd_dump_deps(args) -> int:
    spec = ProgramSpec(args.program, args.pattern, seed=args.seed, tag=args.tag)
    traced = trace_program(spec)
    _, graph = global_decompose(
        traced.arena, traced.outputs, DecomposeConfig(args.tref, args.tcompl),
        traced.session.blocks,
    )
    dot = graph.to_dot()
    if args.out:
        Path(args.out).write_text(dot + "\n")
        print(f"dependency graph with {len(graph.entities)} nodes -> {args.out}")
    else:
        print(dot)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsegen",
        description="Trace sparse-matrix programs symbolically and compile them "
        "into a small set of pattern-specialized kernels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="trace a program and write an execution plan")
    _add_program_args(p)
    _add_plan_args(p)
    p.add_argument("--out", required=True, help="plan output directory")
    p.add_argument("--check-collisions", action="store_true")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("check", help="verify a plan against direct evaluation")
    p.add_argument("plan_dir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("emit", help="emit C source for a plan")
    p.add_argument("plan_dir")
    p.add_argument("--out", default=None)
    p.add_argument("--parallel", choices=("none", "pragma"), default="none")
    p.add_argument("--vector-width", type=int, default=0,
                   help="override the plan's vector width")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("bench", help="time naive evaluation vs plan backends")
    p.add_argument("plan_dir")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", choices=("none", "pragma"), default="none")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump-deps", help="print the dependency graph as DOT")
    _add_program_args(p)
    p.add_argument("--tref", type=int, default=2)
    p.add_argument("--tcompl", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dump_deps)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

# The full pipeline: decompose, group, simplify, plan, execute, emit.
#
# Tracing (A+B)(AB+C) over random patterns, the planner stores the shared
# AB+C entries once, groups structurally equal outputs into kernels, and lays
# out positions/constants for consecutive access. The interpreter reproduces
# direct evaluation bit for bit when simplification is off, and the emitted
# C is bit-identical to the interpreter.

import tempfile

import numpy as np

from sparsegen import (
    ExprArena,
    PlanConfig,
    TraceSession,
    build_plan,
    compile_plan,
    emit_kernel_source,
    eval_numeric,
    interpret_plan,
    random_pattern,
    sp_add,
    sp_mul,
    symbolic_matrix,
)

arena = ExprArena()
n = 60
A, nxt = symbolic_matrix(arena, n, n, random_pattern(n, 4, seed=0))
B, nxt = symbolic_matrix(arena, n, n, random_pattern(n, 4, seed=1), first_var=nxt)
C, nxt = symbolic_matrix(arena, n, n, random_pattern(n, 4, seed=2), first_var=nxt)
out = sp_mul(sp_add(A, B), sp_add(sp_mul(A, B), C))
session = TraceSession(arena, outputs=list(out.values))
print(f"traced {len(session.outputs)} output entries, {len(arena)} nodes")

plan = build_plan(session, PlanConfig(simplify_enabled=False, t_compl=0))
stored = sum(k.instances for k in plan.kernels if k.dest_kind == "intermediate")
print(f"{len(plan.kernels)} kernels, {stored} stored intermediates, "
      f"value array of {plan.value_array_size} doubles")
for kp in plan.kernels[:4]:
    print(f"  {kp.name}: level {kp.level}, {kp.instances:5d} instances, "
          f"{len(kp.pos_vars)} loads, {len(kp.const_vars)} constants, "
          f"{len(kp.template_locals)} locals")

rng = np.random.default_rng(3)
vals = rng.uniform(0.5, 2.0, arena.var_count)
res = interpret_plan(plan, vals)
oracle = eval_numeric(arena, session.outputs, list(vals))
print("\ninterpreter == direct evaluation bitwise:", res.outputs.tolist() == oracle)

src = emit_kernel_source(plan)
print(f"emitted C: {src.count(chr(10))} lines; first kernel header:")
print("   " + [l for l in src.splitlines() if l.startswith("static void")][0])

with tempfile.TemporaryDirectory() as tmp:
    run = compile_plan(plan, tmp)
    if run is None:
        print("no C compiler found; skipping the compiled comparison")
    else:
        x = run(vals)
        same = np.array_equal(x[np.array(plan.outputs)], res.outputs)
        print("compiled == interpreter bitwise:", same)

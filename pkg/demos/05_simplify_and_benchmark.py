# Template simplification and a small end-to-end timing comparison.
#
# The five rewrite families work on any expression; here they run standalone
# on the textbook cases, then the cubed grid operator is planned, compiled
# and timed against evaluating every output tree on its own.

import tempfile
import time

import numpy as np

from sparsegen import (
    ExprArena,
    PlanConfig,
    SimplifyConfig,
    build_plan,
    compile_plan,
    evaluate_outputs_individually,
    interpret_plan,
    simplify,
    sym_sqrt,
    to_str,
)
from sparsegen.programs import ProgramSpec, trace_program

arena = ExprArena()
x, y, z, w, v, u = (arena.var(i) for i in range(6))
names = {0: "x", 1: "y", 2: "z", 3: "w", 4: "v", 5: "u"}
cases = [
    x * y * z + x * w * y + v * x * y + u * x,
    ((x + y) * z**2) / ((x + y) ** 2 * w) * (w**2 / z),
    x + x + y - 2.0 * (y + x),
    sym_sqrt(x**2 + y**2) * sym_sqrt(x**2 + y**2),
    ((x - y) ** 2 + x * y) / (x**2 - x * y + y**2),
]
for e in cases:
    got = simplify(arena, e.ref, SimplifyConfig())
    print(f"{to_str(arena, e.ref, names):58s} -> {to_str(arena, got, names)}")

print("\ncubed grid operator, 40x40 vertices:")
traced = trace_program(ProgramSpec("lpow3", "grid:40x40"))
plan = build_plan(traced.session, PlanConfig(simplify_enabled=False))
print(f"  {len(traced.arena)} nodes -> {len(plan.kernels)} kernels")

rng = np.random.default_rng(0)
vals = rng.uniform(0.5, 2.0, traced.arena.var_count)

t0 = time.perf_counter()
naive = evaluate_outputs_individually(traced.arena, traced.outputs, list(vals))
t_naive = time.perf_counter() - t0

t0 = time.perf_counter()
res = interpret_plan(plan, vals)
t_interp = time.perf_counter() - t0

print(f"  per-output evaluation : {t_naive * 1e3:9.1f} ms")
print(f"  plan interpreter      : {t_interp * 1e3:9.1f} ms ({t_naive / t_interp:5.1f}x)")

with tempfile.TemporaryDirectory() as tmp:
    run = compile_plan(plan, tmp)
    if run is not None:
        run(vals)
        t0 = time.perf_counter()
        for _ in range(50):
            x_arr = run(vals)
        t_c = (time.perf_counter() - t0) / 50
        print(f"  compiled kernels      : {t_c * 1e3:9.3f} ms ({t_naive / t_c:5.0f}x)")
        print("  compiled == naive bitwise:",
              np.array_equal(x_arr[np.array(plan.outputs)], np.asarray(naive)))

"""Acceptance suite: one test per criterion, one PASS line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import shutil
import tempfile
import time

import numpy as np
import pytest

from sparsegen.codegen import (
    PlanConfig,
    build_plan,
    evaluate_outputs_individually,
    interpret_plan,
    slot_addresses,
)
from sparsegen.decompose import DecomposeConfig, TraceSession, global_decompose, local_decompose
from sparsegen.emit import compile_plan
from sparsegen.expr import (
    ExprArena,
    OpKind,
    check_hash_collisions,
    eval_numeric,
    sym_sqrt,
)
from sparsegen.grouping import group_expressions
from sparsegen.programs import ProgramSpec, trace_program
from sparsegen.simplify import SimplifyConfig, simplify

HAVE_CC = shutil.which("cc") or shutil.which("gcc") or shutil.which("clang")


def _inputs(arena, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.5, 2.0, arena.var_count)


def test_criterion_01_oracle_bitwise_equivalence():
    t0 = time.perf_counter()
    for name in ("expr1", "expr2", "expr3"):
        for seed in (1, 2, 3):
            traced = trace_program(ProgramSpec(name, f"random:200,6,{seed}", seed=seed))
            plan = build_plan(traced.session, PlanConfig(simplify_enabled=False))
            vals = _inputs(traced.arena, seed)
            got = interpret_plan(plan, vals).outputs.tolist()
            oracle = eval_numeric(traced.arena, traced.outputs, list(vals))
            assert got == oracle, f"{name} seed {seed}: bitwise mismatch"
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"criterion 1 took {elapsed:.1f}s (budget 10s)"
    print(f"\nACCEPTANCE 1 PASS: bitwise oracle equivalence, 9 plans in {elapsed:.1f}s")


def test_criterion_02_simplification_safety():
    # five worked rewrites reproduce their stated results exactly
    arena = ExprArena()
    x, y, z, w, v, u = (arena.var(i) for i in range(6))
    got = simplify(arena, (x * y * z + x * w * y + v * x * y + u * x).ref, SimplifyConfig())
    inner = arena.apply(OpKind.MUL, (y.ref, arena.apply(OpKind.ADD, (z.ref, w.ref, v.ref))))
    assert got == arena.apply(OpKind.MUL, (x.ref, arena.apply(OpKind.ADD, (inner, u.ref))))

    got = simplify(arena, (((x + y) * z**2) / ((x + y) ** 2 * w) * (w**2 / z)).ref,
                   SimplifyConfig())
    assert got == (z * w / (x + y)).ref

    assert simplify(arena, (x + x + y - 2.0 * (y + x)).ref, SimplifyConfig()) == (-y).ref

    s = x**2 + y**2
    assert simplify(arena, (sym_sqrt(s) * sym_sqrt(s)).ref, SimplifyConfig()) == s.ref

    got = simplify(arena, (((x - y) ** 2 + x * y) / (x**2 - x * y + y**2)).ref,
                   SimplifyConfig())
    assert got == arena.make_const(1.0)

    # interpreter with all rules on stays within 1e-12 of the oracle
    checked = 0
    for name, pattern in (
        ("expr1", "random:120,5,3"),
        ("expr3", "random:120,5,4"),
        ("lpow3", "grid:10x10"),
        ("cotan", "grid:5x5"),
    ):
        traced = trace_program(ProgramSpec(name, pattern, seed=9))
        plan = build_plan(traced.session, PlanConfig(simplify_enabled=True))
        vals = _inputs(traced.arena, 9)
        got = interpret_plan(plan, vals).outputs
        oracle = np.array(eval_numeric(traced.arena, traced.outputs, list(vals)))
        err = np.abs(got - oracle) / np.maximum(1.0, np.abs(oracle))
        assert float(err.max()) <= 1e-12, f"{name}: max rel err {err.max():.2e}"
        checked += len(oracle)
    print(f"\nACCEPTANCE 2 PASS: five worked rewrites exact, {checked} outputs within 1e-12")


def _three_kernel_example(arena):
    a, b, c, d = (arena.var(i) for i in range(4))
    s = a * a + b * b
    q = sym_sqrt(s)
    out0 = q + a
    t = a + d
    u = c * t
    out1 = u * q + u + __import__("sparsegen.expr", fromlist=["sym_sin"]).sym_sin(t)
    out2 = s + a * b
    return (out0.ref, out1.ref, out2.ref), s.ref, q.ref, t.ref, u.ref


def test_criterion_03_decomposition_golden():
    arena = ExprArena()
    outs, s, q, t, u = _three_kernel_example(arena)
    interm, graph = global_decompose(arena, list(outs), DecomposeConfig(t_ref=2, t_compl=0))
    assert sorted(interm.globals) == sorted([s, q]), "globals must be {a*a+b*b, sqrt(.)}"
    locs = local_decompose(arena, [outs[1]], cut={s, q})
    assert [ref for _, ref in locs] == [t, u], "kernel 2 locals must be {a+d, c*(a+d)}"
    print("\nACCEPTANCE 3 PASS: golden decomposition (2 globals, 2 locals in kernel 2)")


def test_criterion_04_tagging_golden():
    arena = ExprArena()
    a, b = arena.var(0), arena.var(1)
    q = sym_sqrt(a * a + b * b)
    out0 = (b * q + a).ref
    out1 = (a * q + b).ref
    session = TraceSession(arena, outputs=[out0, out1])
    session.tag_block([out0, out1], block_id=0)
    plan = build_plan(session, PlanConfig(simplify_enabled=False, t_compl=0))
    assert len(plan.kernels) == 1, "tagged pair must form one kernel"
    kp = plan.kernels[0]
    assert len(kp.template_locals) == 1, "exactly one local: y = sqrt(a*a+b*b)"
    local = kp.template_locals[0]
    assert kp.template_arena.op(local) == OpKind.SQRT
    interm, _ = global_decompose(arena, session.outputs, DecomposeConfig(2, 0), session.blocks)
    assert interm.globals == [], "no global intermediates may remain"
    print("\nACCEPTANCE 4 PASS: tagging golden (one kernel, local sqrt, zero globals)")


def _fan17_pattern():
    faces = []
    for k in range(8):
        a = 1 + k
        b = 1 + (k + 1) % 8
        faces.append((0, a, b))
        faces.append((a, 9 + k, b))
        faces.append((b, 9 + k, 9 + (k + 1) % 8))
    cells = {(v, v) for v in range(17)}
    for f in faces:
        for p, r in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            cells.add((p, r))
            cells.add((r, p))
    return sorted(cells)


def _tree_signature(arena, ref, cut, is_root=True):
    op = arena.op(ref)
    if not is_root and (ref in cut or op == OpKind.VAR):
        return ("load",)
    if op == OpKind.VAR:
        return ("load",)
    if op == OpKind.CONST:
        return ("const",)
    if op == OpKind.POW:
        return ("pow", arena.payload[arena.args[ref][1]],
                _tree_signature(arena, arena.args[ref][0], cut, False))
    return (int(op),) + tuple(_tree_signature(arena, c, cut, False) for c in arena.args[ref])


def test_criterion_05_group_count_properties():
    t0 = time.perf_counter()
    from sparsegen.sparse import sp_mul, sp_transpose, symbolic_matrix

    # (a) exact agreement with the brute-force structural partition
    for pattern, n in ((_fan17_pattern(), 17), (None, 25)):
        arena = ExprArena()
        if pattern is None:
            from sparsegen.sparse import grid_laplacian_pattern

            pattern = grid_laplacian_pattern(5, 5)
        L, _ = symbolic_matrix(arena, n, n, pattern)
        M = sp_mul(sp_transpose(L), L)
        uniq = list(dict.fromkeys(M.values))
        _, graph = global_decompose(arena, uniq, DecomposeConfig(2, 8))
        groups = group_expressions(arena, graph)
        cut = set(graph.root_of)
        sigs = set()
        for ei, ent in enumerate(graph.entities):
            dest = "output" if ent.kind == "unit" else "intermediate"
            sigs.add((graph.levels[ei], dest,
                      tuple(_tree_signature(arena, r, cut) for r in ent.roots)))
        assert len(groups) == len(sigs), "hash grouping must match the brute-force partition"
        if n == 17:
            assert len(groups) == 7, "the 17-vertex fan mesh takes 7 kernels"

    # (b) kernel count is grid-size independent for the cubed operator
    counts = []
    for size in (20, 40, 80):
        traced = trace_program(ProgramSpec("lpow3", f"grid:{size}x{size}"))
        plan = build_plan(traced.session, PlanConfig(simplify_enabled=False))
        counts.append(len(plan.kernels))
    assert counts[0] == counts[1] == counts[2], f"kernel counts differ: {counts}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"criterion 5 took {elapsed:.1f}s (budget 60s)"
    print(f"\nACCEPTANCE 5 PASS: brute-force match (fan mesh: 7 groups), "
          f"cubed-operator kernels {counts} in {elapsed:.1f}s")


def _toy_energies():
    """Two small differentiable energies over a handful of coordinates."""
    arena = ExprArena()
    # two springs: origin - p1 - p2 in the plane
    p1 = [arena.var(0), arena.var(1)]
    p2 = [arena.var(2), arena.var(3)]

    def stretch(p, q, rest):
        d = [b - a for a, b in zip(p, q)]
        return (sym_sqrt(d[0] * d[0] + d[1] * d[1]) - rest) ** 2

    zero = [arena.const(0.0), arena.const(0.0)]
    springs = stretch(zero, p1, 1.0) + stretch(p1, p2, 1.0)

    # planar deformation energy of one triangle (identity rest shape)
    q0 = [arena.var(4), arena.var(5)]
    q1 = [arena.var(6), arena.var(7)]
    q2 = [arena.var(8), arena.var(9)]
    f00, f01 = q1[0] - q0[0], q2[0] - q0[0]
    f10, f11 = q1[1] - q0[1], q2[1] - q0[1]
    frob = f00 * f00 + f01 * f01 + f10 * f10 + f11 * f11
    det = f00 * f11 - f01 * f10
    dirichlet = frob + frob / (det * det)
    return arena, [(springs.ref, [0, 1, 2, 3]), (dirichlet.ref, [4, 5, 6, 7, 8, 9])]


def _config_points(arena, ids, seed):
    rng = np.random.default_rng(seed)
    point = {v: 0.0 for v in range(arena.var_count)}
    point.update({0: 1.0, 1: 0.0, 2: 2.0, 3: 0.0})
    point.update({4: 0.0, 5: 0.0, 6: 1.0, 7: 0.0, 8: 0.0, 9: 1.0})
    for v in ids:
        point[v] += float(rng.uniform(-0.15, 0.15))
    return point


def test_criterion_06_autodiff_correctness():
    from sparsegen.autodiff import gradient, hessian

    arena, energies = _toy_energies()
    for root, ids in energies:
        g = gradient(arena, root, ids)
        h = hessian(arena, root, ids)
        for i in ids:
            for j in ids:
                if (i, j) in h:
                    assert h[(i, j)] == h[(j, i)], "mirrored entries must be the same node"
        for cfg in range(20):
            point = _config_points(arena, ids, cfg)

            def f(bind):
                return eval_numeric(arena, [root], bind)[0]

            for v in ids:
                step = 1e-4 * max(1.0, abs(point[v]))
                hi = dict(point)
                hi[v] += step
                lo = dict(point)
                lo[v] -= step
                fd = (f(hi) - f(lo)) / (2 * step)
                entry = g.get(v)
                sym = eval_numeric(arena, [entry], point)[0] if entry is not None else 0.0
                assert sym == pytest.approx(fd, rel=1e-5, abs=1e-7)
            # second derivatives against differences of first derivatives
            for (i, j), ref in h.items():
                if i > j or (i + j + cfg) % 5:
                    continue  # spot-check a fifth of the entries per config
                gj = g.get(j)
                step = 1e-4 * max(1.0, abs(point[i]))
                hi = dict(point)
                hi[i] += step
                lo = dict(point)
                lo[i] -= step
                fd = (
                    eval_numeric(arena, [gj], hi)[0] - eval_numeric(arena, [gj], lo)[0]
                ) / (2 * step)
                sym = eval_numeric(arena, [ref], point)[0]
                assert sym == pytest.approx(fd, rel=1e-5, abs=1e-6)
    print("\nACCEPTANCE 6 PASS: gradients and second derivatives match finite differences "
          "at 20 configurations; mirrored entries share nodes")


def test_criterion_07_hash_soundness():
    traced = trace_program(ProgramSpec("lpow3", "grid:20x20"))
    report = check_hash_collisions(traced.arena)
    assert report.clean, (
        f"{len(report.struct_collisions)} structural / {len(report.alg_collisions)} "
        f"algebraic collisions on {report.nodes_checked} nodes"
    )

    weak = ExprArena(hash_bits=8)
    a, b = weak.make_var(0), weak.make_var(1)
    prev = weak.apply(OpKind.ADD, (a, b))
    for _ in range(300):
        prev = weak.apply(OpKind.ADD, (prev, weak.apply(OpKind.MUL, (prev, b))))
    weak_report = check_hash_collisions(weak)
    assert len(weak_report.struct_collisions) >= 1, "8-bit hashes must collide"
    print(f"\nACCEPTANCE 7 PASS: zero collisions on {report.nodes_checked} nodes at 64 bits; "
          f"{len(weak_report.struct_collisions)} collisions with the 8-bit hook")


def _coordinate_toy(instances=96):
    """Per-vertex expressions over interleaved 3-coordinate input."""
    arena = ExprArena()
    outs = []
    rng = np.random.default_rng(31)
    for k in range(instances):
        x0 = arena.var(3 * k)
        x1 = arena.var(3 * k + 1)
        x2 = arena.var(3 * k + 2)
        c0 = arena.const(float(rng.integers(2, 30)) + 0.25)
        t = x0 * x1
        outs.append((c0 * t + 2.0 * x2 * sym_sqrt(t)).ref)
    return TraceSession(arena, outputs=outs)


def test_criterion_08_layout_correctness():
    session = _coordinate_toy()
    optimized = build_plan(session, PlanConfig(simplify_enabled=False))
    baseline = build_plan(
        session, PlanConfig(simplify_enabled=False, coalesce=False, coherence=False)
    )
    vals = _inputs(session.arena, 17)
    res_opt = interpret_plan(optimized, vals, record_loads=True, check_schedule=True)
    res_base = interpret_plan(baseline, vals, record_loads=True, check_schedule=True)
    assert res_opt.violations == [] and res_base.violations == []
    # every slot resolves to the same address with and without the optimizations
    for ko, kb in zip(optimized.kernels, baseline.kernels):
        for col_o, col_b in zip(slot_addresses(optimized, ko), slot_addresses(baseline, kb)):
            assert np.array_equal(col_o, col_b), "a load moved to a wrong address"
    assert sorted(res_opt.loads) == sorted(res_base.loads)
    assert res_opt.outputs.tolist() == res_base.outputs.tolist()
    # three coherent coordinate slots keep one third of the index entries
    kp = optimized.kernels[0]
    assert len(kp.pos_vars) == 3 and None not in kp.coherence
    assert len(optimized.positions) * 3 == len(baseline.positions)
    print("\nACCEPTANCE 8 PASS: load set permutation-equivalent; "
          f"index entries {len(optimized.positions)} vs {len(baseline.positions)} (1/3)")


@pytest.mark.skipif(not HAVE_CC, reason="no C compiler in the environment")
def test_criterion_09_cross_backend_equivalence():
    for name, pattern in (("expr3", "random:120,5,2"), ("lpow3", "grid:10x10")):
        traced = trace_program(ProgramSpec(name, pattern, seed=13))
        for simplify_on in (False, True):
            plan = build_plan(traced.session, PlanConfig(simplify_enabled=simplify_on))
            with tempfile.TemporaryDirectory() as tmp:
                run = compile_plan(plan, tmp)
                assert run is not None, "compilation failed"
                vals = _inputs(traced.arena, 13)
                ref = interpret_plan(plan, vals)
                x = run(vals)
                assert np.array_equal(x[np.array(plan.outputs)], ref.outputs), (
                    f"{name} simplify={simplify_on}: compiled output differs"
                )
    print("\nACCEPTANCE 9 PASS: compiled kernels equal the interpreter bit for bit")


@pytest.mark.skipif(not HAVE_CC, reason="no C compiler in the environment")
def test_criterion_10_performance_smoke():
    traced = trace_program(ProgramSpec("lpow3", "grid:100x100"))
    plan = build_plan(traced.session, PlanConfig(simplify_enabled=False))
    vals = _inputs(traced.arena, 19)

    t0 = time.perf_counter()
    naive = evaluate_outputs_individually(traced.arena, traced.outputs, list(vals))
    t_naive = time.perf_counter() - t0

    with tempfile.TemporaryDirectory() as tmp:
        run = compile_plan(plan, tmp)
        assert run is not None
        x = run(vals)  # warm-up, and correctness
        assert np.array_equal(x[np.array(plan.outputs)], np.asarray(naive))
        t0 = time.perf_counter()
        for _ in range(100):
            run(vals)
        t_comp = (time.perf_counter() - t0) / 100
    speedup = t_naive / t_comp
    assert speedup >= 10.0, f"compiled speedup only {speedup:.1f}x"
    print(f"\nACCEPTANCE 10 PASS: compiled {speedup:.0f}x faster than naive tree walking "
          f"({t_naive:.2f}s vs {t_comp * 1e3:.2f}ms, mean of 100)")

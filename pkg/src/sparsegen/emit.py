"""Portable C99 source emission for execution plans.

One function per kernel plus an entry point ``sg_run(x, c, p)`` that runs
them in schedule order.  Each kernel is two nested loops: an outer chunk
loop (optionally annotated for parallel execution) and an inner loop over
the vector width carrying an ignore-dependencies pragma so the compiler can
vectorize; a scalar tail handles instance counts that are not a multiple of
the width.  Uniform constants appear as literals, varying constants and
position indices are read through the plan's (by default coalesced)
arrays, and kernel locals become stack scalars in dependency order.

The emitted arithmetic follows the template's stored operation order, so a
build without fast-math reproduces the interpreter bit for bit.
"""

from __future__ import annotations

from .codegen import ExecutionPlan, KernelPlan
from .expr import ExprArena, ExprRef, OpKind, reachable

_PREC = {
    OpKind.ADD: 10,
    OpKind.SUB: 10,
    OpKind.MUL: 20,
    OpKind.DIV: 20,
    OpKind.NEG: 30,
}
_FUNC = {
    OpKind.SQRT: "sqrt",
    OpKind.SIN: "sin",
    OpKind.COS: "cos",
    OpKind.EXP: "exp",
    OpKind.LOG: "log",
}


def _c_double(v: float) -> str:
    """Round-trip double literal."""
    if v == int(v) and abs(v) < 1e16:
        return f"{int(v)}.0"
    return repr(v)


class _ExprPrinter:
    def __init__(self, tmpl: ExprArena, names: dict[ExprRef, str], leaf: dict[int, str]):
        self.tmpl = tmpl
        self.names = names  # node -> already-materialized local/root name
        self.leaf = leaf  # template var id -> load expression

    def render(self, ref: ExprRef, skip_name: bool = False) -> str:
        return self._render(ref, 0, skip_name)

    def _render(self, ref: ExprRef, parent_prec: int, skip_name: bool = False) -> str:
        if not skip_name and ref in self.names:
            return self.names[ref]
        tmpl = self.tmpl
        op = OpKind(tmpl.ops[ref])
        a = tmpl.args[ref]
        if op == OpKind.VAR:
            return self.leaf[tmpl.payload[ref]]
        if op == OpKind.CONST:
            return _c_double(tmpl.payload[ref])
        if op == OpKind.ADD or op == OpKind.MUL:
            sep = " + " if op == OpKind.ADD else "*"
            prec = _PREC[op]
            # children after the first need parens at equal precedence:
            # C associates left, and float +/* are not associative
            parts = [self._render(a[0], prec)]
            parts += [self._render(c, prec + 1) for c in a[1:]]
            body = sep.join(parts)
            return f"({body})" if prec < parent_prec else body
        if op == OpKind.SUB or op == OpKind.DIV:
            sep = " - " if op == OpKind.SUB else "/"
            prec = _PREC[op]
            left = self._render(a[0], prec)
            right = self._render(a[1], prec + 1)
            body = f"{left}{sep}{right}"
            return f"({body})" if prec < parent_prec else body
        if op == OpKind.NEG:
            return f"-{self._render(a[0], _PREC[OpKind.NEG] + 1)}"
        if op == OpKind.POW:
            base = self._render(a[0], 0)
            return f"pow({base}, {_c_double(self.tmpl.payload[a[1]])})"
        if op == OpKind.SELECT:
            c, t, f = (self._render(x, 0) for x in a)
            return f"({c} < 0.0 ? {t} : {f})"
        return f"{_FUNC[op]}({self._render(a[0], 0)})"


def _kernel_body(kp: KernelPlan, index_expr: str) -> list[str]:
    """Statements evaluating one instance whose linear index is ``index_expr``."""
    n = kp.instances
    lines: list[str] = []
    leaf: dict[int, str] = {}
    retained_idx = {s: k for k, s in enumerate(kp.retained)}
    hoist = not kp.self_referencing

    def p_entry(r: int) -> str:
        if kp.layout == "coalesced":
            return f"p[{kp.p_base + r * n} + {index_expr}]"
        return f"p[{kp.p_base} + {index_expr}*{len(kp.retained)} + {r}]"

    def c_entry(s: int) -> str:
        if kp.layout == "coalesced":
            return f"c[{kp.c_base + s * n} + {index_expr}]"
        return f"c[{kp.c_base} + {index_expr}*{len(kp.const_vars)} + {s}]"

    for s, var_id in enumerate(kp.pos_vars):
        coh = kp.coherence[s]
        if s in retained_idx:
            load = f"x[{p_entry(retained_idx[s])}]"
        else:
            load = f"x[{p_entry(0)} + {coh}]" if coh >= 0 else f"x[{p_entry(0)} - {-coh}]"
        if hoist:
            lines.append(f"const double x{s} = {load};")
            leaf[var_id] = f"x{s}"
        else:
            leaf[var_id] = load
    for s, var_id in enumerate(kp.const_vars):
        if hoist:
            lines.append(f"const double c{s} = {c_entry(s)};")
            leaf[var_id] = f"c{s}"
        else:
            leaf[var_id] = c_entry(s)

    names: dict[ExprRef, str] = {}
    printer = _ExprPrinter(kp.template_arena, names, leaf)
    for k, loc in enumerate(kp.template_locals):
        lines.append(f"const double t{k} = {printer.render(loc, skip_name=True)};")
        names[loc] = f"t{k}"
    root_set = set(kp.template_roots)
    live = reachable(kp.template_arena, kp.template_roots)
    referenced: set[ExprRef] = set()
    for i in live:
        referenced.update(kp.template_arena.args[i])
    counts = {r: kp.template_roots.count(r) for r in root_set}
    reused = {r for r in root_set if r in referenced or counts[r] > 1}
    for r_idx, root in enumerate(kp.template_roots):
        dest = f"x[{kp.dest_base + r_idx * n} + {index_expr}]"
        if root in names:
            lines.append(f"{dest} = {names[root]};")
            continue
        expr = printer.render(root, skip_name=True)
        if root in reused:
            lines.append(f"const double r{r_idx} = {expr};")
            names[root] = f"r{r_idx}"
            lines.append(f"{dest} = r{r_idx};")
        else:
            lines.append(f"{dest} = {expr};")
    return lines


def emit_kernel_source(plan: ExecutionPlan, parallel: str = "none") -> str:
    """Emit the whole plan as one C99 translation unit.

    ``parallel`` is "none" or "pragma" (OpenMP annotations on the outer
    loops; the pragmas are inert when compiled without OpenMP support).
    """
    if parallel not in ("none", "pragma"):
        raise ValueError(f"parallel must be 'none' or 'pragma', got {parallel!r}")
    w = plan.vector_width
    out: list[str] = []
    out.append("/* generated kernel source; compile with: cc -O3 -ffp-contract=off */")
    out.append("#include <math.h>")
    out.append("")
    for kp in plan.kernels:
        n = kp.instances
        full = n // w
        out.append(f"/* level {kp.level}, {n} instance(s), {kp.n_roots} result(s) each */")
        out.append(f"static void {kp.name}(double* x, const double* c, const unsigned* p) {{")
        body = _kernel_body(kp, "i")
        if full:
            if parallel == "pragma":
                out.append("    #pragma omp parallel for")
            out.append(f"    for (long ii = 0; ii < {full}; ++ii) {{")
            out.append("        #pragma omp simd")
            out.append(f"        for (long j = 0; j < {w}; ++j) {{")
            out.append(f"            const long i = ii*{w} + j;")
            for line in body:
                out.append(f"            {line}")
            out.append("        }")
            out.append("    }")
        if full * w < n:
            out.append(f"    for (long i = {full * w}; i < {n}; ++i) {{")
            for line in body:
                out.append(f"        {line}")
            out.append("    }")
        out.append("}")
        out.append("")
    out.append("void sg_run(double* x, const double* c, const unsigned* p) {")
    for kp in plan.kernels:
        out.append(f"    {kp.name}(x, c, p);")
    out.append("}")
    out.append("")
    return "\n".join(out)


def compile_plan(plan: ExecutionPlan, work_dir, parallel: str = "none"):
    """Compile the emitted source to a shared object and return a runner.

    Returns None when no C compiler is available.  The runner takes the
    input vector and returns the full value array, exactly like the
    interpreter's ``values``.
    """
    import ctypes
    import shutil
    import subprocess
    from pathlib import Path

    import numpy as np

    cc = shutil.which("cc") or shutil.which("gcc") or shutil.which("clang")
    if cc is None:
        return None
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    src = work / "kernels.c"
    src.write_text(emit_kernel_source(plan, parallel=parallel))
    lib = work / "kernels.so"
    cmd = [cc, "-O3", "-ffp-contract=off", "-fPIC", "-shared", "-o", str(lib), str(src), "-lm"]
    try:
        subprocess.run(cmd, check=True, capture_output=True)
    except subprocess.CalledProcessError:
        return None
    dll = ctypes.CDLL(str(lib))
    dll.sg_run.restype = None
    dll.sg_run.argtypes = [
        ctypes.POINTER(ctypes.c_double),
        ctypes.POINTER(ctypes.c_double),
        ctypes.POINTER(ctypes.c_uint),
    ]
    constants = np.ascontiguousarray(plan.constants, dtype=np.float64)
    positions = np.ascontiguousarray(plan.positions, dtype=np.uint32)
    c_ptr = constants.ctypes.data_as(ctypes.POINTER(ctypes.c_double))
    p_ptr = positions.ctypes.data_as(ctypes.POINTER(ctypes.c_uint))

    def run(inputs) -> np.ndarray:
        x = np.zeros(plan.value_array_size, dtype=np.float64)
        x[: plan.input_count] = np.asarray(inputs, dtype=np.float64)
        dll.sg_run(x.ctypes.data_as(ctypes.POINTER(ctypes.c_double)), c_ptr, p_ptr)
        return x

    run.source_path = src
    run.library_path = lib
    return run

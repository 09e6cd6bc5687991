"""Execution planning: memory layout, kernel schedule, interpreter, plan files.

The value array holds inputs first (variable id == offset), then one
contiguous, vector-width-aligned result range per kernel in schedule order;
instance ``i`` of a single-result kernel writes ``base + i``, multi-result
kernels store result-major so writes stay consecutive across instances.

Position indices and per-instance constants live in two plan-wide arrays.
Slots whose address is a fixed offset from the kernel's first slot drop out
of the index array entirely; remaining entries are laid out slot-major
("coalesced", consecutive across instances) or instance-major
("interleaved").

The interpreter executes plans with the template's exact operation order,
so with simplification disabled its results are bit-identical to direct
evaluation of the traced expressions, and always bit-identical to the
emitted C kernels.
"""

from __future__ import annotations

import json
import math
import struct as _struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .decompose import DecomposeConfig, DependencyGraph, TraceSession, global_decompose, local_decompose
from .expr import ExprArena, ExprRef, OpKind, reachable
from .grouping import KernelGroup, build_template, group_expressions
from .simplify import SimplifyConfig, SimplifyStats, simplify

_BLOB_MAGIC = b"SGEN"
_BLOB_VERSION = 1
_SEC_POSITIONS = 1
_SEC_CONSTANTS = 2

# ops a numpy lane-parallel evaluation reproduces bit-exactly
_EXACT_OPS = {
    int(OpKind.VAR),
    int(OpKind.CONST),
    int(OpKind.ADD),
    int(OpKind.SUB),
    int(OpKind.MUL),
    int(OpKind.DIV),
    int(OpKind.NEG),
    int(OpKind.SQRT),
    int(OpKind.SELECT),
}


@dataclass
class KernelPlan:
    name: str
    level: int
    dest_kind: str
    instances: int
    n_roots: int
    dest_base: int
    template_arena: ExprArena
    template_roots: list[ExprRef]
    template_locals: list[ExprRef]
    pos_vars: list[int]  # template var ids of active position slots
    const_vars: list[int]  # template var ids of active constant slots
    coherence: list[int | None]  # per active position slot: offset from slot 0 or None
    retained: list[int]  # active-slot indices present in the index array
    p_base: int
    c_base: int
    layout: str
    self_referencing: bool = False
    uniform_consts: int = 0
    dup_slots: int = 0
    entity_ids: list[int] = field(default_factory=list)

    @property
    def pos_entries(self) -> int:
        return len(self.retained) * self.instances

    @property
    def const_entries(self) -> int:
        return len(self.const_vars) * self.instances


@dataclass
class ExecutionPlan:
    value_array_size: int
    input_count: int
    vector_width: int
    outputs: list[int]  # value-array offset per traced output
    kernels: list[KernelPlan]
    positions: np.ndarray  # uint32
    constants: np.ndarray  # float64
    metadata: dict
    stats: dict = field(default_factory=dict)


@dataclass
class PlanConfig:
    t_ref: int = 2
    t_compl: int = 8
    simplify_enabled: bool = True
    simplify: SimplifyConfig = field(default_factory=SimplifyConfig)
    coalesce: bool = True
    coherence: bool = True
    vector_width: int = 4

    def describe(self) -> dict:
        return {
            "t_ref": self.t_ref,
            "t_compl": self.t_compl,
            "simplify": self.simplify_enabled,
            "simplify_sums": self.simplify.sums_enabled,
            "coalesce": self.coalesce,
            "coherence": self.coherence,
            "vector_width": self.vector_width,
        }


def _align(n: int, to: int) -> int:
    return ((n + to - 1) // to) * to


def build_plan(
    session: TraceSession,
    cfg: PlanConfig | None = None,
    metadata: dict | None = None,
) -> ExecutionPlan:
    """Run decomposition, grouping, template optimization and memory planning."""
    cfg = cfg or PlanConfig()
    arena = session.arena
    stats: dict = {}
    t0 = time.perf_counter()
    interm, graph = global_decompose(
        arena, session.outputs, DecomposeConfig(cfg.t_ref, cfg.t_compl), session.blocks
    )
    groups = group_expressions(arena, graph)
    simp_stats = SimplifyStats()
    prepared = [_prepare_kernel(arena, graph, g, k, cfg, simp_stats) for k, g in enumerate(groups)]
    t1 = time.perf_counter()

    plan = plan_memory(arena, session, graph, prepared, cfg, metadata or {})
    t2 = time.perf_counter()

    arena_stats = arena.stats()
    stats["nodes"] = len(arena)
    stats["peak_nodes"] = len(arena)
    stats["est_bytes"] = arena_stats["est_bytes"]
    stats["per_op"] = arena_stats["per_op"]
    stats["entities"] = len(graph.entities)
    stats["globals"] = len(interm.globals)
    stats["demoted_locals"] = len(interm.locals)
    stats["kernels"] = len(prepared)
    stats["simplify_hits"] = dict(simp_stats.hits)
    stats["groups"] = [
        {
            "name": kp.name,
            "level": kp.level,
            "instances": kp.instances,
            "position_slots": len(kp.pos_vars),
            "constant_slots": len(kp.const_vars),
            "uniform_consts": kp.uniform_consts,
            "duplicate_slots": kp.dup_slots,
            "locals": len(kp.template_locals),
        }
        for kp in prepared
    ]
    stats["stage_seconds"] = {
        "analysis": round(t1 - t0, 6),
        "generation": round(t2 - t1, 6),
    }
    # the deterministic subset also travels with the manifest
    plan.metadata["trace_stats"] = {
        "nodes": stats["nodes"],
        "entities": stats["entities"],
        "globals": stats["globals"],
        "kernels": stats["kernels"],
        "simplify_hits": stats["simplify_hits"],
    }
    plan.stats = stats
    return plan


def _prepare_kernel(arena, graph, group: KernelGroup, idx: int, cfg: PlanConfig, simp_stats):
    """Template construction, optional simplification, slot pruning, locals."""
    cut = set(graph.root_of)
    roots0 = graph.entities[group.entity_ids[0]].roots
    tmpl, troots, n_pos, n_const = build_template(arena, roots0, group.table, cut)
    if cfg.simplify_enabled:
        troots = [simplify(tmpl, r, cfg.simplify, simp_stats) for r in troots]
        # simplification may have erased slots entirely; drop their columns
        used: set[int] = set()
        for i in reachable(tmpl, troots):
            if tmpl.ops[i] == OpKind.VAR:
                used.add(tmpl.payload[i])
        pos_vars = [s for s in range(n_pos) if s in used]
        const_vars = [n_pos + s for s in range(n_const) if (n_pos + s) in used]
        var_payloads = [group.var_payloads[s] for s in range(n_pos) if s in used]
        const_values = [group.const_values[s] for s in range(n_const) if (n_pos + s) in used]
    else:
        # an unsimplified template references every slot by construction
        pos_vars = list(range(n_pos))
        const_vars = list(range(n_pos, n_pos + n_const))
        var_payloads = group.var_payloads
        const_values = group.const_values

    locals_ = [r for _, r in local_decompose(tmpl, troots)]
    dup_slots = sum(1 for c in group.table.columns if c.cls == "duplicate")
    uniform = sum(1 for c in group.table.columns if c.cls == "uniform-constant")
    own = set(group.entity_ids)
    self_ref = any(
        p & 1 and graph.root_of[p >> 1][0] in own for col in var_payloads for p in col
    )
    kp = KernelPlan(
        name=f"k{idx}",
        level=group.level,
        dest_kind=group.dest_kind,
        instances=group.instances,
        n_roots=group.n_roots,
        dest_base=-1,
        template_arena=tmpl,
        template_roots=troots,
        template_locals=locals_,
        pos_vars=pos_vars,
        const_vars=const_vars,
        coherence=[None] * len(pos_vars),
        retained=list(range(len(pos_vars))),
        p_base=-1,
        c_base=-1,
        layout="coalesced" if cfg.coalesce else "interleaved",
        self_referencing=self_ref,
        uniform_consts=uniform,
        dup_slots=dup_slots,
        entity_ids=list(group.entity_ids),
    )
    kp._payloads = var_payloads  # resolved to addresses during memory planning
    kp._const_values = const_values
    return kp


def plan_memory(
    arena: ExprArena,
    session: TraceSession,
    graph: DependencyGraph,
    kernels: list[KernelPlan],
    cfg: PlanConfig,
    metadata: dict,
) -> ExecutionPlan:
    """Assign result ranges, resolve leaf addresses, build index/constant arrays."""
    input_count = arena.var_count
    cursor = input_count
    entity_loc: dict[int, tuple[KernelPlan, int]] = {}
    for kp in kernels:
        kp.dest_base = _align(cursor, cfg.vector_width)
        cursor = kp.dest_base + kp.n_roots * kp.instances
        for inst, e in enumerate(kp.entity_ids):
            entity_loc[e] = (kp, inst)

    def ref_offset(ref: ExprRef) -> int:
        entity, member = graph.root_of[ref]
        kp, inst = entity_loc[entity]
        return kp.dest_base + member * kp.instances + inst

    positions: list[np.ndarray] = []
    constants: list[np.ndarray] = []
    p_cursor = 0
    c_cursor = 0
    for kp in kernels:
        n = kp.instances
        addr_cols = []
        for col in kp._payloads:
            addr_cols.append(
                np.array(
                    [ref_offset(p >> 1) if p & 1 else p >> 1 for p in col], dtype=np.uint32
                )
            )
        kp.coherence = detect_offset_coherence(addr_cols) if cfg.coherence else (
            [0] + [None] * (len(addr_cols) - 1) if addr_cols else []
        )
        kp.retained = [s for s, c in enumerate(kp.coherence) if s == 0 or c is None]
        kp.p_base = p_cursor
        if addr_cols:
            block = np.stack([addr_cols[s] for s in kp.retained])  # slot-major
            if kp.layout == "interleaved":
                block = block.T
            positions.append(block.reshape(-1))
            p_cursor += block.size
        kp.c_base = c_cursor
        if kp._const_values:
            cblock = np.stack([np.asarray(c, dtype=np.float64) for c in kp._const_values])
            if kp.layout == "interleaved":
                cblock = cblock.T
            constants.append(cblock.reshape(-1))
            c_cursor += cblock.size
        del kp._payloads
        del kp._const_values

    outputs = [ref_offset(r) for r in session.outputs]
    meta = dict(metadata)
    meta.update(cfg.describe())
    return ExecutionPlan(
        value_array_size=cursor,
        input_count=input_count,
        vector_width=cfg.vector_width,
        outputs=outputs,
        kernels=kernels,
        positions=np.concatenate(positions) if positions else np.zeros(0, np.uint32),
        constants=np.concatenate(constants) if constants else np.zeros(0, np.float64),
        metadata=meta,
        stats={},
    )


def detect_offset_coherence(addr_cols: list[np.ndarray]) -> list[int | None]:
    """Per slot: fixed delta from slot 0 across every instance, or None."""
    if not addr_cols:
        return []
    base = addr_cols[0].astype(np.int64)
    out: list[int | None] = [0]
    for col in addr_cols[1:]:
        delta = col.astype(np.int64) - base
        first = int(delta[0])
        out.append(first if bool(np.all(delta == first)) else None)
    return out


def coalesce_layout(kp: KernelPlan, positions: np.ndarray, constants: np.ndarray) -> None:
    """Reorder one kernel's array segments from interleaved to slot-major in place."""
    if kp.layout == "coalesced":
        return
    n = kp.instances
    r = len(kp.retained)
    if r:
        seg = positions[kp.p_base : kp.p_base + r * n]
        positions[kp.p_base : kp.p_base + r * n] = seg.reshape(n, r).T.reshape(-1)
    c = len(kp.const_vars)
    if c:
        seg = constants[kp.c_base : kp.c_base + c * n]
        constants[kp.c_base : kp.c_base + c * n] = seg.reshape(n, c).T.reshape(-1)
    kp.layout = "coalesced"


def de_coalesce_layout(kp: KernelPlan, positions: np.ndarray, constants: np.ndarray) -> None:
    """Inverse of coalesce_layout (restores the interleaved order)."""
    if kp.layout == "interleaved":
        return
    n = kp.instances
    r = len(kp.retained)
    if r:
        seg = positions[kp.p_base : kp.p_base + r * n]
        positions[kp.p_base : kp.p_base + r * n] = seg.reshape(r, n).T.reshape(-1)
    c = len(kp.const_vars)
    if c:
        seg = constants[kp.c_base : kp.c_base + c * n]
        constants[kp.c_base : kp.c_base + c * n] = seg.reshape(c, n).T.reshape(-1)
    kp.layout = "interleaved"


# -- interpretation ----------------------------------------------------------------


@dataclass
class InterpretResult:
    outputs: np.ndarray
    values: np.ndarray  # the full value array, intermediates included
    loads: list[tuple[str, int, int]] | None = None  # (kernel, slot, address)
    violations: list[str] = field(default_factory=list)


def slot_addresses(plan: ExecutionPlan, kp: KernelPlan) -> list[np.ndarray]:
    """Resolved per-instance load addresses for every active position slot."""
    n = kp.instances
    r = len(kp.retained)
    seg = plan.positions[kp.p_base : kp.p_base + r * n]
    per_retained = (
        seg.reshape(r, n) if kp.layout == "coalesced" else seg.reshape(n, r).T
    )
    cols = []
    retained_idx = {s: k for k, s in enumerate(kp.retained)}
    for s, coh in enumerate(kp.coherence):
        if s in retained_idx:
            cols.append(per_retained[retained_idx[s]].astype(np.int64))
        else:
            cols.append(per_retained[0].astype(np.int64) + coh)
    return cols


def _const_columns(plan: ExecutionPlan, kp: KernelPlan) -> list[np.ndarray]:
    n = kp.instances
    c = len(kp.const_vars)
    seg = plan.constants[kp.c_base : kp.c_base + c * n]
    return list(seg.reshape(c, n) if kp.layout == "coalesced" else seg.reshape(n, c).T)


def _template_program(kp: KernelPlan):
    tmpl = kp.template_arena
    live = reachable(tmpl, kp.template_roots)
    return tmpl, live


def interpret_plan(
    plan: ExecutionPlan,
    inputs: Sequence[float],
    record_loads: bool = False,
    check_schedule: bool = False,
) -> InterpretResult:
    """Execute the plan kernel by kernel; the verification backend.

    Kernels run in schedule order, instances in ascending index, each
    instance following the template's stored operation order exactly.
    """
    if len(inputs) != plan.input_count:
        raise ValueError(
            f"plan expects {plan.input_count} input values, got {len(inputs)}"
        )
    x = np.zeros(plan.value_array_size, dtype=np.float64)
    x[: plan.input_count] = np.asarray(inputs, dtype=np.float64)
    loads: list[tuple[str, int, int]] | None = [] if record_loads else None
    written = None
    if check_schedule:
        written = np.zeros(plan.value_array_size, dtype=bool)
        written[: plan.input_count] = True
    violations: list[str] = []

    for kp in plan.kernels:
        addr_cols = slot_addresses(plan, kp)
        const_cols = _const_columns(plan, kp)
        if record_loads:
            for s, col in enumerate(addr_cols):
                loads.extend((kp.name, s, int(a)) for a in col)
        if written is not None:
            for s, col in enumerate(addr_cols):
                bad = ~written[col]
                if bad.any() and not kp.self_referencing:
                    violations.append(
                        f"{kp.name}: slot {s} reads {int(bad.sum())} unwritten addresses"
                    )
        _run_kernel(kp, x, addr_cols, const_cols)
        if written is not None:
            written[kp.dest_base : kp.dest_base + kp.n_roots * kp.instances] = True

    outputs = x[np.asarray(plan.outputs, dtype=np.int64)] if plan.outputs else np.zeros(0)
    return InterpretResult(outputs=outputs, values=x, loads=loads, violations=violations)


def _run_kernel(kp: KernelPlan, x: np.ndarray, addr_cols, const_cols) -> None:
    tmpl, live = _template_program(kp)
    ops = tmpl.ops
    args = tmpl.args
    payload = tmpl.payload
    n = kp.instances
    exact = all(ops[i] in _EXACT_OPS for i in live)
    slot_of = {v: k for k, v in enumerate(kp.pos_vars)}
    cslot_of = {v: k for k, v in enumerate(kp.const_vars)}

    if exact and not kp.self_referencing:
        vals: dict[int, np.ndarray] = {}
        for i in live:
            op = ops[i]
            a = args[i]
            if op == 0:
                v = payload[i]
                if v in slot_of:
                    vals[i] = x[addr_cols[slot_of[v]]]
                else:
                    vals[i] = const_cols[cslot_of[v]]
            elif op == 1:
                vals[i] = np.full(n, payload[i])
            elif op == 2:
                acc = vals[a[0]].copy()
                for c in a[1:]:
                    acc += vals[c]
                vals[i] = acc
            elif op == 4:
                acc = vals[a[0]].copy()
                for c in a[1:]:
                    acc *= vals[c]
                vals[i] = acc
            elif op == 3:
                vals[i] = vals[a[0]] - vals[a[1]]
            elif op == 5:
                vals[i] = vals[a[0]] / vals[a[1]]
            elif op == 6:
                vals[i] = -vals[a[0]]
            elif op == 7:
                vals[i] = np.sqrt(vals[a[0]])
            else:  # SELECT
                vals[i] = np.where(vals[a[0]] < 0.0, vals[a[1]], vals[a[2]])
        for r_idx, root in enumerate(kp.template_roots):
            base = kp.dest_base + r_idx * n
            x[base : base + n] = vals[root]
        return

    # scalar path: transcendental templates, or kernels reading their own results
    for inst in range(n):
        bind = {}
        for v, s in slot_of.items():
            bind[v] = x[addr_cols[s][inst]]
        for v, s in cslot_of.items():
            bind[v] = const_cols[s][inst]
        vals_s: dict[int, float] = {}
        for r_idx, root in enumerate(kp.template_roots):
            if kp.self_referencing:
                # results stored so far are visible to later members
                for v, s in slot_of.items():
                    bind[v] = x[addr_cols[s][inst]]
                vals_s = {}
            _eval_scalar(tmpl, live, bind, vals_s)
            x[kp.dest_base + r_idx * n + inst] = vals_s[root]


def _eval_scalar(tmpl, live, bind, vals):
    ops = tmpl.ops
    args = tmpl.args
    payload = tmpl.payload
    for i in live:
        if i in vals:
            continue
        op = ops[i]
        a = args[i]
        if op == 0:
            vals[i] = bind[payload[i]]
        elif op == 1:
            vals[i] = payload[i]
        elif op == 2:
            acc = vals[a[0]]
            for c in a[1:]:
                acc += vals[c]
            vals[i] = acc
        elif op == 4:
            acc = vals[a[0]]
            for c in a[1:]:
                acc *= vals[c]
            vals[i] = acc
        elif op == 3:
            vals[i] = vals[a[0]] - vals[a[1]]
        elif op == 5:
            vals[i] = vals[a[0]] / vals[a[1]]
        elif op == 6:
            vals[i] = -vals[a[0]]
        elif op == 7:
            vals[i] = math.sqrt(vals[a[0]])
        elif op == 8:
            vals[i] = math.sin(vals[a[0]])
        elif op == 9:
            vals[i] = math.cos(vals[a[0]])
        elif op == 10:
            vals[i] = math.exp(vals[a[0]])
        elif op == 11:
            vals[i] = math.log(vals[a[0]])
        elif op == 12:
            vals[i] = math.pow(vals[a[0]], vals[a[1]])
        else:
            vals[i] = vals[a[1]] if vals[a[0]] < 0.0 else vals[a[2]]


def evaluate_outputs_individually(arena: ExprArena, outputs, input_values) -> np.ndarray:
    """Per-output evaluation without cross-output sharing (the naive baseline)."""
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    out = np.zeros(len(outputs))
    for k, root in enumerate(outputs):
        vals: dict[int, float] = {}
        stack = [root]
        while stack:
            i = stack[-1]
            if i in vals:
                stack.pop()
                continue
            missing = [c for c in args[i] if c not in vals]
            if missing:
                stack.extend(missing)
                continue
            stack.pop()
            op = ops[i]
            a = args[i]
            if op == 0:
                vals[i] = input_values[payload[i]]
            elif op == 1:
                vals[i] = payload[i]
            elif op == 2:
                acc = vals[a[0]]
                for c in a[1:]:
                    acc += vals[c]
                vals[i] = acc
            elif op == 4:
                acc = vals[a[0]]
                for c in a[1:]:
                    acc *= vals[c]
                vals[i] = acc
            elif op == 3:
                vals[i] = vals[a[0]] - vals[a[1]]
            elif op == 5:
                vals[i] = vals[a[0]] / vals[a[1]]
            elif op == 6:
                vals[i] = -vals[a[0]]
            elif op == 7:
                vals[i] = math.sqrt(vals[a[0]])
            elif op == 8:
                vals[i] = math.sin(vals[a[0]])
            elif op == 9:
                vals[i] = math.cos(vals[a[0]])
            elif op == 10:
                vals[i] = math.exp(vals[a[0]])
            elif op == 11:
                vals[i] = math.log(vals[a[0]])
            elif op == 12:
                vals[i] = math.pow(vals[a[0]], vals[a[1]])
            else:
                vals[i] = vals[a[1]] if vals[a[0]] < 0.0 else vals[a[2]]
        out[k] = vals[root]
    return out


# -- serialization ------------------------------------------------------------------


_OP_NAMES = {int(op): op.name.lower() for op in OpKind}
_OP_FROM_NAME = {name: OpKind(code) for code, name in _OP_NAMES.items()}


def _template_json(kp: KernelPlan) -> dict:
    tmpl = kp.template_arena
    live = reachable(tmpl, kp.template_roots)
    index = {ref: k for k, ref in enumerate(live)}
    nodes = []
    for ref in live:
        op = tmpl.ops[ref]
        if op == OpKind.VAR:
            nodes.append(["var", tmpl.payload[ref]])
        elif op == OpKind.CONST:
            nodes.append(["const", tmpl.payload[ref]])
        else:
            nodes.append([_OP_NAMES[op], [index[c] for c in tmpl.args[ref]]])
    return {
        "nodes": nodes,
        "roots": [index[r] for r in kp.template_roots],
        "locals": [index[r] for r in kp.template_locals],
    }


def _template_from_json(spec: dict) -> tuple[ExprArena, list[ExprRef], list[ExprRef]]:
    tmpl = ExprArena()
    refs: list[ExprRef] = []
    for node in spec["nodes"]:
        kind = node[0]
        if kind == "var":
            refs.append(tmpl.make_var(int(node[1])))
        elif kind == "const":
            refs.append(tmpl.make_const(float(node[1])))
        else:
            refs.append(tmpl.apply(_OP_FROM_NAME[kind], [refs[c] for c in node[1]], sort=False))
    roots = [refs[i] for i in spec["roots"]]
    locals_ = [refs[i] for i in spec["locals"]]
    return tmpl, roots, locals_


def plan_manifest(plan: ExecutionPlan) -> dict:
    kernels = []
    for kp in plan.kernels:
        kernels.append(
            {
                "name": kp.name,
                "level": kp.level,
                "dest_kind": kp.dest_kind,
                "instances": kp.instances,
                "n_roots": kp.n_roots,
                "dest_base": kp.dest_base,
                "layout": kp.layout,
                "template": _template_json(kp),
                "pos_vars": kp.pos_vars,
                "const_vars": kp.const_vars,
                "coherence": kp.coherence,
                "retained": kp.retained,
                "p_base": kp.p_base,
                "c_base": kp.c_base,
                "self_referencing": kp.self_referencing,
                "uniform_consts": kp.uniform_consts,
                "dup_slots": kp.dup_slots,
            }
        )
    return {
        "format": 1,
        "value_array_size": plan.value_array_size,
        "input_count": plan.input_count,
        "vector_width": plan.vector_width,
        "outputs": plan.outputs,
        "metadata": plan.metadata,
        "kernels": kernels,
    }


def _blob_bytes(plan: ExecutionPlan) -> bytes:
    parts = [_BLOB_MAGIC, _struct.pack("<I", _BLOB_VERSION)]
    pos = np.ascontiguousarray(plan.positions, dtype="<u4").tobytes()
    con = np.ascontiguousarray(plan.constants, dtype="<f8").tobytes()
    parts.append(_struct.pack("<IQ", _SEC_POSITIONS, len(pos)))
    parts.append(pos)
    parts.append(_struct.pack("<IQ", _SEC_CONSTANTS, len(con)))
    parts.append(con)
    return b"".join(parts)


def save_plan(plan: ExecutionPlan, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = plan_manifest(plan)
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"
    )
    (out / "data.blob").write_bytes(_blob_bytes(plan))
    if plan.stats:
        (out / "stats.json").write_text(json.dumps(plan.stats, sort_keys=True, indent=2) + "\n")


def load_plan(plan_dir: str | Path) -> ExecutionPlan:
    src = Path(plan_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    if manifest.get("format") != 1:
        raise ValueError(f"{src}: unsupported manifest format {manifest.get('format')!r}")
    raw = (src / "data.blob").read_bytes()
    if raw[:4] != _BLOB_MAGIC:
        raise ValueError(f"{src}: bad data blob magic")
    (version,) = _struct.unpack_from("<I", raw, 4)
    if version != _BLOB_VERSION:
        raise ValueError(f"{src}: unsupported blob version {version}")
    off = 8
    sections: dict[int, bytes] = {}
    while off < len(raw):
        if off + 12 > len(raw):
            raise ValueError(f"{src}: truncated section header")
        tag, length = _struct.unpack_from("<IQ", raw, off)
        off += 12
        if off + length > len(raw):
            raise ValueError(f"{src}: section {tag} overruns the blob")
        sections[tag] = raw[off : off + length]
        off += length
    if _SEC_POSITIONS not in sections or _SEC_CONSTANTS not in sections:
        raise ValueError(f"{src}: missing blob sections")
    positions = np.frombuffer(sections[_SEC_POSITIONS], dtype="<u4").astype(np.uint32)
    constants = np.frombuffer(sections[_SEC_CONSTANTS], dtype="<f8").astype(np.float64)

    kernels = []
    for kj in manifest["kernels"]:
        tmpl, roots, locals_ = _template_from_json(kj["template"])
        kernels.append(
            KernelPlan(
                name=kj["name"],
                level=kj["level"],
                dest_kind=kj["dest_kind"],
                instances=kj["instances"],
                n_roots=kj["n_roots"],
                dest_base=kj["dest_base"],
                template_arena=tmpl,
                template_roots=roots,
                template_locals=locals_,
                pos_vars=list(kj["pos_vars"]),
                const_vars=list(kj["const_vars"]),
                coherence=[None if c is None else int(c) for c in kj["coherence"]],
                retained=list(kj["retained"]),
                p_base=kj["p_base"],
                c_base=kj["c_base"],
                layout=kj["layout"],
                self_referencing=kj["self_referencing"],
                uniform_consts=kj["uniform_consts"],
                dup_slots=kj["dup_slots"],
            )
        )
    plan = ExecutionPlan(
        value_array_size=manifest["value_array_size"],
        input_count=manifest["input_count"],
        vector_width=manifest["vector_width"],
        outputs=list(manifest["outputs"]),
        kernels=kernels,
        positions=positions,
        constants=constants,
        metadata=manifest["metadata"],
    )
    _validate_plan(plan, src)
    return plan


def _validate_plan(plan: ExecutionPlan, src) -> None:
    expected_p = sum(kp.pos_entries for kp in plan.kernels)
    expected_c = sum(kp.const_entries for kp in plan.kernels)
    if len(plan.positions) != expected_p:
        raise ValueError(f"{src}: position array has {len(plan.positions)} entries, expected {expected_p}")
    if len(plan.constants) != expected_c:
        raise ValueError(f"{src}: constant array has {len(plan.constants)} entries, expected {expected_c}")
    if len(plan.positions) and int(plan.positions.max()) >= plan.value_array_size:
        raise ValueError(f"{src}: position index outside the value array")
    for off in plan.outputs:
        if not 0 <= off < plan.value_array_size:
            raise ValueError(f"{src}: output offset {off} outside the value array")

"""Kernel groups: partitioning, leaf harvesting and template construction.

After decomposition every output, block and retained intermediate is one
entity.  Entities whose post-decomposition expressions are structurally
identical (loads from the value array all look alike, whether they fetch an
input or a stored intermediate) and that sit on the same dependency level
can share one kernel.  A group is split when one member transitively
depends on another, since members of a kernel must be safe to evaluate in
parallel.

Harvesting walks all member trees in lockstep and collects each member's
leaves into one table row; columns that always repeat an earlier column
collapse, constant columns with a single value are inlined into the
template, the rest become position or constant slots of the kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .decompose import DependencyGraph
from .expr import ExprArena, ExprRef, OpKind, mix2, mix64


def cut_struct_hashes(arena: ExprArena, cut: set[ExprRef]) -> list[int]:
    """Structural hashes with every cut ref seen as a variable leaf.

    The array entry for a cut ref itself still holds its expanded hash, so
    an entity hashes its own roots expanded while references to other
    entities' results hash like input loads.
    """
    n = len(arena.ops)
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    hm = arena._hmask
    var_leaf = arena._var_struct
    const_leaf = arena._const_struct
    mask = (1 << 64) - 1
    m1 = 0xBF58476D1CE4E5B9
    m2 = 0x94D049BB133111EB
    op_mix = {}
    for op in OpKind:
        op_mix[int(op)] = mix64(int(op))
    cut_flags = bytearray(n)
    for ref in cut:
        cut_flags[ref] = 1
    out = [0] * n
    for i in range(n):
        op = ops[i]
        if op == 0:
            out[i] = var_leaf
            continue
        if op == 1:
            out[i] = const_leaf
            continue
        h = 0
        for c in args[i]:
            # inlined mix2(child_hash, h)
            z = (var_leaf if cut_flags[c] else out[c]) ^ (((h << 31) | (h >> 33)) & mask)
            z = ((z ^ (z >> 30)) * m1) & mask
            z = ((z ^ (z >> 27)) * m2) & mask
            h = z ^ (z >> 31)
        if op == 12:
            h = mix2(h, mix64(int(payload[args[i][1]])))
        z = op_mix[op] ^ (((h << 31) | (h >> 33)) & mask)
        z = ((z ^ (z >> 30)) * m1) & mask
        z = ((z ^ (z >> 27)) * m2) & mask
        out[i] = (z ^ (z >> 31)) & hm
    return out


def structurally_equal_cut(arena: ExprArena, a: ExprRef, b: ExprRef, cut: set[ExprRef]) -> bool:
    """Full recursive comparison of post-decomposition kernel expressions."""
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    stack = [(a, b, True), ]
    while stack:
        x, y, is_root = stack.pop()
        x_load = not is_root and (x in cut or ops[x] == 0)
        y_load = not is_root and (y in cut or ops[y] == 0)
        if x_load or y_load:
            if x_load != y_load:
                return False
            continue
        if ops[x] != ops[y]:
            return False
        if ops[x] == 1:
            continue
        ax, ay = args[x], args[y]
        if len(ax) != len(ay):
            return False
        if ops[x] == 12 and payload[ax[1]] != payload[ay[1]]:
            return False
        for cx, cy in zip(ax, ay):
            stack.append((cx, cy, False))
    return True


@dataclass
class LeafColumn:
    kind: str  # "position" or "const"
    cls: str  # "variable", "varying-constant", "uniform-constant", "duplicate"
    slot: int | None = None
    of_column: int | None = None
    value: float | None = None


def leaf_var(var_id: int) -> int:
    """Table payload for an input-variable leaf."""
    return var_id << 1


def leaf_global(ref: ExprRef) -> int:
    """Table payload for a leaf loading a stored intermediate."""
    return (ref << 1) | 1


def decode_leaf(payload) -> tuple:
    """('c', value) | ('v', var_id) | ('g', ref) view of a table payload."""
    if type(payload) is float:
        return ("c", payload)
    if payload & 1:
        return ("g", payload >> 1)
    return ("v", payload >> 1)


@dataclass
class LeafTable:
    """One row per group member, one column per template leaf position.

    Payloads are scalars: a float is a constant, an even int is a variable
    id doubled, an odd int references a stored intermediate (see
    ``decode_leaf``).
    """

    rows: list[list]
    columns: list[LeafColumn] = field(default_factory=list)

    @property
    def n_columns(self) -> int:
        return len(self.rows[0]) if self.rows else 0


@dataclass
class KernelGroup:
    level: int
    dest_kind: str  # "output" or "intermediate"
    entity_ids: list[int]
    n_roots: int
    table: LeafTable
    var_payloads: list[list[int]]  # per position slot, per instance (encoded)
    const_values: list[list[float]]  # per constant slot, per instance
    template_arena: ExprArena | None = None
    template_roots: list[ExprRef] = field(default_factory=list)
    template_locals: list[tuple[int, ExprRef]] = field(default_factory=list)

    @property
    def instances(self) -> int:
        return len(self.entity_ids)


def _harvest_one(arena: ExprArena, roots: Sequence[ExprRef], cut_flags: bytearray) -> list:
    """Pre-order leaf payloads of one member's kernel expression."""
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    row: list = []
    append = row.append
    for root in roots:
        op = ops[root]
        if op == 0:
            append(payload[root] << 1)
            continue
        if op == 1:
            append(payload[root])
            continue
        stack = [args[root][0]] if op == 12 else list(reversed(args[root]))
        while stack:
            ref = stack.pop()
            if cut_flags[ref]:
                append((ref << 1) | 1)
                continue
            op = ops[ref]
            if op == 0:
                append(payload[ref] << 1)
            elif op == 1:
                append(payload[ref])
            elif op == 12:
                stack.append(args[ref][0])  # the exponent is part of the template
            else:
                stack.extend(reversed(args[ref]))
    return row


def harvest_leaves(
    arena: ExprArena,
    members: Sequence[Sequence[ExprRef]],
    cut: set[ExprRef] | None = None,
    _flags: bytearray | None = None,
) -> LeafTable:
    """Collect the leaf table of structurally equivalent members.

    A structural mismatch discovered while walking means two members with
    equal hashes disagree, i.e. a hash collision; that is reported rather
    than silently mis-grouped.
    """
    if _flags is None:
        _flags = bytearray(len(arena.ops))
        for ref in cut or ():
            _flags[ref] = 1
    cut_flags = _flags
    rows = [_harvest_one(arena, roots, cut_flags) for roots in members]
    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise RuntimeError(
                f"leaf count mismatch in member {r}: structural hash collision"
            )
    table = LeafTable(rows=rows)
    table.columns = _classify_columns(rows)
    return table


def _classify_columns(rows: list[list]) -> list[LeafColumn]:
    width = len(rows[0]) if rows else 0
    columns: list[LeafColumn] = []
    seen: dict[tuple, int] = {}
    n_pos = 0
    n_const = 0
    for k in range(width):
        vec = tuple(row[k] for row in rows)
        is_const = type(vec[0]) is float
        if any((type(p) is float) != is_const for p in vec):
            raise RuntimeError(f"leaf kind mismatch in column {k}: structural hash collision")
        key = (is_const, vec)  # 2 == 2.0 in dict keys, so keep kinds apart
        prior = seen.get(key)
        if prior is not None:
            columns.append(LeafColumn(kind=columns[prior].kind, cls="duplicate", of_column=prior))
            continue
        seen[key] = k
        if is_const:
            if len(set(vec)) == 1:
                columns.append(LeafColumn(kind="const", cls="uniform-constant", value=vec[0]))
            else:
                columns.append(LeafColumn(kind="const", cls="varying-constant", slot=n_const))
                n_const += 1
        else:
            columns.append(LeafColumn(kind="position", cls="variable", slot=n_pos))
            n_pos += 1
    return columns


def build_template(
    arena: ExprArena,
    roots: Sequence[ExprRef],
    table: LeafTable,
    cut: set[ExprRef] | None = None,
) -> tuple[ExprArena, list[ExprRef], int, int]:
    """Rebuild the representative expression over slot variables.

    Position slots become template variables 0..nv-1, varying constants
    nv..nv+nc-1, uniform constants are inlined literally.  Child order is
    preserved exactly, so evaluating the template with a member's table row
    reproduces that member's evaluation bit for bit.
    """
    cut = cut or set()
    n_pos = sum(1 for c in table.columns if c.cls == "variable")
    tmpl = ExprArena(op_cost=arena.op_cost)
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    cols = table.columns
    counter = [0]

    def leaf_node(k: int) -> ExprRef:
        col = cols[k]
        if col.cls == "duplicate":
            col = cols[col.of_column]
        if col.cls == "variable":
            return tmpl.make_var(col.slot)
        if col.cls == "varying-constant":
            return tmpl.make_var(n_pos + col.slot)
        return tmpl.make_const(col.value)

    def build(ref: ExprRef, is_root: bool) -> ExprRef:
        # iterative with explicit frames: (ref, child results)
        out: list[ExprRef] = []
        stack: list[tuple[ExprRef, bool, int, list[ExprRef]]] = [(ref, is_root, 0, [])]
        while stack:
            node, root_flag, state, kids = stack.pop()
            op = ops[node]
            if state == 0:
                if (not root_flag and node in cut) or op == 0 or op == 1:
                    k = counter[0]
                    counter[0] += 1
                    out.append(leaf_node(k))
                    continue
                if op == 12:
                    stack.append((node, root_flag, 1, kids))
                    stack.append((args[node][0], False, 0, []))
                    continue
                stack.append((node, root_flag, 1, kids))
                for c in reversed(args[node]):
                    stack.append((c, False, 0, []))
            else:
                a = args[node]
                if op == 12:
                    base = out.pop()
                    e = tmpl.make_const(payload[a[1]])
                    out.append(tmpl.apply(OpKind.POW, (base, e)))
                else:
                    k = len(a)
                    kids = out[-k:]
                    del out[-k:]
                    out.append(tmpl.apply(OpKind(op), kids, sort=False))
        return out[0]

    troots = [build(r, True) for r in roots]
    n_const = sum(1 for c in cols if c.cls == "varying-constant")
    return tmpl, troots, n_pos, n_const


def partition_entities(arena: ExprArena, graph: DependencyGraph) -> list[tuple[tuple, list[int]]]:
    """Partition entities by (level, kernel-expression hash, destination class).

    Partitions containing internal producer-consumer pairs are layered so no
    member of a partition depends on another member.
    """
    cut = set(graph.root_of)
    hashes = cut_struct_hashes(arena, cut)
    buckets: dict[tuple, list[int]] = {}
    for ei, ent in enumerate(graph.entities):
        dest = "output" if ent.kind == "unit" else "intermediate"
        key = (
            graph.levels[ei],
            dest,
            len(ent.roots),
            tuple(hashes[r] for r in ent.roots),
        )
        buckets.setdefault(key, []).append(ei)
    parts: list[tuple[tuple, list[int]]] = []
    for key, members in buckets.items():
        for layer in _dependency_layers(graph, members):
            parts.append((key, layer))
    parts.sort(key=lambda p: (-p[0][0], p[1][0]))
    return parts


def schedule_partitions(
    graph: DependencyGraph, parts: list[tuple[tuple, list[int]]]
) -> list[tuple[tuple, list[int]]]:
    """Order partitions so every producer runs before its consumers.

    Levels normally give that order (deepest first), but a producer shared
    between a shallow output and a deep intermediate can sit at a lower
    level than one of its consumers; when that blocks progress, the blocked
    partition is split and its runnable members scheduled first.
    """
    done: set[int] = set()
    pending = list(parts)
    out: list[tuple[tuple, list[int]]] = []
    while pending:
        pick = None
        for idx, (key, members) in enumerate(pending):
            if all(p in done for m in members for p in graph.producers[m]):
                pick = idx
                break
        if pick is not None:
            key, members = pending.pop(pick)
            out.append((key, members))
            done.update(members)
            continue
        # no whole partition is ready: split the first one with runnable members
        for idx, (key, members) in enumerate(pending):
            runnable = [m for m in members if all(p in done for p in graph.producers[m])]
            if runnable:
                rest = [m for m in members if m not in set(runnable)]
                pending[idx] = (key, rest)
                out.append((key, runnable))
                done.update(runnable)
                break
        else:
            raise RuntimeError("dependency cycle among kernel groups")
    return out


def group_expressions(
    arena: ExprArena,
    graph: DependencyGraph,
) -> list[KernelGroup]:
    """Partition, schedule and harvest: the returned order is the execution order."""
    cut = set(graph.root_of)
    flags = bytearray(len(arena.ops))
    for ref in cut:
        flags[ref] = 1
    parts = schedule_partitions(graph, partition_entities(arena, graph))
    groups: list[KernelGroup] = []
    for key, layer in parts:
        level, dest, n_roots, _ = key
        table = harvest_leaves(
            arena, [graph.entities[e].roots for e in layer], cut, _flags=flags
        )
        var_payloads: list[list[int]] = []
        const_values: list[list[float]] = []
        for k, col in enumerate(table.columns):
            if col.cls == "variable":
                var_payloads.append([row[k] for row in table.rows])
            elif col.cls == "varying-constant":
                const_values.append([row[k] for row in table.rows])
        groups.append(
            KernelGroup(
                level=level,
                dest_kind=dest,
                entity_ids=list(layer),
                n_roots=n_roots,
                table=table,
                var_payloads=var_payloads,
                const_values=const_values,
            )
        )
    return groups


def _dependency_layers(graph: DependencyGraph, members: list[int]) -> list[list[int]]:
    """Split members so no member depends on another in the same layer."""
    idx = {e: k for k, e in enumerate(members)}
    reach: dict[int, int] = {}

    def reach_mask(start: int) -> int:
        # iterative DFS computing, per entity, the bitmask of members
        # reachable through producer edges
        stack = [(start, 0)]
        while stack:
            e, state = stack.pop()
            if state == 0:
                if e in reach:
                    continue
                reach[e] = 0  # placeholder; acyclic so no true cycles
                stack.append((e, 1))
                for p in graph.producers[e]:
                    if p not in reach:
                        stack.append((p, 0))
            else:
                m = 0
                for p in graph.producers[e]:
                    m |= reach.get(p, 0)
                    if p in idx:
                        m |= 1 << idx[p]
                reach[e] = m
        return reach[start]

    masks = {e: reach_mask(e) for e in members}
    if all(masks[e] == 0 for e in members):
        return [members]
    depth: dict[int, int] = {}

    def get_depth(e: int) -> int:
        stack = [e]
        while stack:
            cur = stack[-1]
            if cur in depth:
                stack.pop()
                continue
            deps = [members[k] for k in range(len(members)) if masks[cur] >> k & 1]
            missing = [d for d in deps if d not in depth]
            if missing:
                stack.extend(missing)
                continue
            depth[cur] = 1 + max((depth[d] for d in deps), default=-1)
            stack.pop()
        return depth[e]

    layers: dict[int, list[int]] = {}
    for e in members:
        layers.setdefault(get_depth(e), []).append(e)
    return [layers[d] for d in sorted(layers)]

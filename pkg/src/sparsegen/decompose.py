"""Shared-subexpression decomposition and the dependency graph.

Works on a finished trace.  Subtrees referenced often enough and heavy
enough become *global* intermediates stored in the value array; candidates
reused only within a single consumer are demoted and handled as per-kernel
stack locals instead.  Outputs, tagged blocks and retained globals become
the nodes ("entities") of a dependency graph whose levels drive kernel
scheduling: the level of a node is the shortest path from any output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .expr import ExprArena, ExprRef, OpKind


@dataclass
class TraceSession:
    """A traced program: the arena, its outputs, and explicit block tags."""

    arena: ExprArena
    outputs: list[ExprRef] = field(default_factory=list)
    blocks: list[tuple[int, tuple[ExprRef, ...]]] = field(default_factory=list)
    _tagged: set[ExprRef] = field(default_factory=set)

    def add_outputs(self, refs: Iterable[ExprRef]) -> None:
        self.outputs.extend(refs)

    def tag_block(self, values: Sequence[ExprRef], block_id: int) -> None:
        """Group values so they are evaluated together in one kernel.

        Members are materialized side by side; quantities shared between
        them turn into stack locals of that kernel rather than globally
        stored intermediates.
        """
        vals = tuple(values)
        n = len(self.arena.ops)
        for v in vals:
            if not 0 <= v < n:
                raise ValueError(f"value {v} was not traced in this session")
            if v in self._tagged:
                raise ValueError(f"value {v} is already tagged in another block")
        self._tagged.update(vals)
        self.blocks.append((block_id, vals))


def tag_block(session: TraceSession, values: Sequence[ExprRef], block_id: int) -> None:
    session.tag_block(values, block_id)


@dataclass
class DecomposeConfig:
    t_ref: int = 2
    t_compl: int = 8

    def __post_init__(self):
        if self.t_ref < 2:
            raise ValueError("t_ref must be >= 2")
        if self.t_compl < 0:
            raise ValueError("t_compl must be >= 0")


@dataclass
class Entity:
    """One node of the dependency graph: an output unit, block, or global."""

    kind: str  # "unit" or "global"
    roots: tuple[ExprRef, ...]
    block_id: int | None = None
    is_source: bool = False  # contains at least one traced output


@dataclass
class DependencyGraph:
    entities: list[Entity]
    producers: list[tuple[int, ...]]  # consumer entity -> producer entities
    levels: list[int]
    root_of: dict[ExprRef, tuple[int, int]]  # ref -> (entity, member index)

    def consumers_of(self, entity: int) -> list[int]:
        return [e for e, prods in enumerate(self.producers) if entity in prods]

    def to_dot(self) -> str:
        lines = ["digraph deps {"]
        for i, ent in enumerate(self.entities):
            shape = "box" if ent.kind == "unit" else "ellipse"
            label = f"{ent.kind}{i}\\nlevel {self.levels[i]}\\nroots {len(ent.roots)}"
            lines.append(f'  n{i} [shape={shape}, label="{label}"];')
        for c, prods in enumerate(self.producers):
            for p in prods:
                lines.append(f"  n{c} -> n{p};")
        lines.append("}")
        return "\n".join(lines)


@dataclass
class IntermediateSet:
    globals: list[ExprRef]
    blocks: list[tuple[int, tuple[ExprRef, ...]]]
    locals: dict[ExprRef, int]  # demoted candidate -> its single consumer entity


def count_references(arena: ExprArena, outputs: Sequence[ExprRef]) -> dict[ExprRef, int]:
    """In-edge counts over the DAG region reachable from the outputs.

    Each unique subtree is traversed once, so a node inside an already
    shared subtree is not recounted from a second root; repeated children of
    one parent count per edge.
    """
    n = len(arena.ops)
    need = bytearray(n)
    for r in outputs:
        if not 0 <= r < n:
            raise ValueError(f"output {r} is not a node of this arena")
        need[r] = 1
    args = arena.args
    cnt = [0] * n
    for i in range(n - 1, -1, -1):
        if need[i]:
            for c in args[i]:
                need[c] = 1
                cnt[c] += 1
    return {i: cnt[i] for i in range(n) if need[i]}


def _direct_refs(arena: ExprArena, roots: Sequence[ExprRef], cut: set[ExprRef]) -> set[ExprRef]:
    """Cut refs reachable from roots without passing through another cut ref.

    The roots themselves are entered even when they are cut refs (an entity
    always owns its own roots).
    """
    walker = _RefWalker(arena, cut)
    return walker.direct_refs(roots)


class _RefWalker:
    """Reusable cut-reference traversal; one stamp array instead of per-call sets."""

    def __init__(self, arena: ExprArena, cut):
        self.args = arena.args
        n = len(arena.ops)
        self.cut_flags = bytearray(n)
        for ref in cut:
            self.cut_flags[ref] = 1
        self.stamp = [0] * n
        self.token = 0

    def direct_refs(self, roots: Sequence[ExprRef]) -> set[ExprRef]:
        args = self.args
        cut_flags = self.cut_flags
        stamp = self.stamp
        self.token += 1
        token = self.token
        found: set[ExprRef] = set()
        stack: list[ExprRef] = []
        for r in roots:
            stamp[r] = token
        for r in roots:
            stack.extend(args[r])
        while stack:
            ref = stack.pop()
            if stamp[ref] == token:
                continue
            stamp[ref] = token
            if cut_flags[ref]:
                found.add(ref)
                continue
            stack.extend(args[ref])
        return found


def global_decompose(
    arena: ExprArena,
    outputs: Sequence[ExprRef],
    cfg: DecomposeConfig | None = None,
    blocks: Sequence[tuple[int, tuple[ExprRef, ...]]] = (),
) -> tuple[IntermediateSet, DependencyGraph]:
    """Choose global intermediates and build the dependency graph.

    Candidates are nodes referenced at least ``t_ref`` times with complexity
    at least ``t_compl``.  A candidate whose references all come from inside
    a single consumer is demoted (its reuse is purely local); demotion
    repeats until stable because dissolving one candidate can leave another
    with a single consumer.
    """
    cfg = cfg or DecomposeConfig()
    counts = count_references(arena, [r for r in outputs] + [m for _, ms in blocks for m in ms])

    output_set = set(outputs)
    tagged = {m for _, ms in blocks for m in ms}
    units: list[Entity] = []
    root_of: dict[ExprRef, tuple[int, int]] = {}
    for block_id, members in blocks:
        ent = Entity(
            kind="unit",
            roots=members,
            block_id=block_id,
            is_source=any(m in output_set for m in members),
        )
        for k, m in enumerate(members):
            if m in root_of:
                raise ValueError(f"value {m} appears in two blocks")
            root_of[m] = (len(units), k)
        units.append(ent)
    for r in outputs:
        if r in root_of:
            continue  # tagged, or a duplicate output entry
        root_of[r] = (len(units), 0)
        units.append(Entity(kind="unit", roots=(r,), is_source=True))

    unit_roots = set(root_of)
    complexities = arena.complexity
    leafless = arena.args
    candidates = [
        ref
        for ref, cnt in counts.items()
        if cnt >= cfg.t_ref
        and leafless[ref]
        and ref not in unit_roots
        and complexities[ref] >= cfg.t_compl
    ]
    candidates.sort()

    # whether any unit root appears inside another entity's expression;
    # if not and nothing is retained, no traversal can find anything
    interior_roots = any(counts.get(r, 0) > 0 for r in unit_roots)

    retained = set(candidates)
    demoted: dict[ExprRef, int] = {}
    final_refs: list[set[ExprRef]] | None = None
    while True:
        if not retained and not interior_roots:
            final_refs = [set() for _ in units]
            break
        cut = unit_roots | retained
        walker = _RefWalker(arena, cut)
        consumers: dict[ExprRef, set[int]] = {g: set() for g in retained}
        entity_refs: list[set[ExprRef]] = []
        ordered_globals = sorted(retained)
        global_index = {g: len(units) + k for k, g in enumerate(ordered_globals)}
        for ent in units:
            refs = walker.direct_refs(ent.roots)
            entity_refs.append(refs)
        for ei, refs in enumerate(entity_refs):
            for ref in refs:
                if ref in retained:
                    consumers[ref].add(ei)
        for g in ordered_globals:
            refs = walker.direct_refs((g,))
            entity_refs.append(refs)
            for ref in refs:
                if ref in retained and ref != g:
                    consumers[ref].add(global_index[g])
        drop = [g for g in ordered_globals if len(consumers[g]) <= 1]
        if not drop:
            final_refs = entity_refs
            break
        for g in drop:
            who = consumers[g]
            # unit indices are stable; a consuming global may itself demote later
            only = next(iter(who)) if who else -1
            demoted[g] = only if only < len(units) else -1
            retained.discard(g)

    ordered_globals = sorted(retained)
    entities = list(units) + [Entity(kind="global", roots=(g,)) for g in ordered_globals]
    for k, g in enumerate(ordered_globals):
        root_of[g] = (len(units) + k, 0)

    producers: list[tuple[int, ...]] = []
    for ei, ent in enumerate(entities):
        refs = final_refs[ei]
        prods = sorted({root_of[r][0] for r in refs if root_of[r][0] != ei})
        producers.append(tuple(prods))

    levels = [-1] * len(entities)
    frontier = [i for i, e in enumerate(entities) if e.kind == "unit" and e.is_source]
    for i in frontier:
        levels[i] = 0
    depth = 0
    while frontier:
        depth += 1
        nxt = []
        for c in frontier:
            for p in producers[c]:
                if levels[p] < 0:
                    levels[p] = depth
                    nxt.append(p)
        frontier = nxt
    # entities not reachable from any output (tagged-only programs) keep
    # level one past the deepest reachable producer
    fallback = max(levels) + 1 if any(l >= 0 for l in levels) else 0
    for i, l in enumerate(levels):
        if l < 0:
            levels[i] = fallback

    interm = IntermediateSet(globals=ordered_globals, blocks=list(blocks), locals=demoted)
    graph = DependencyGraph(entities=entities, producers=producers, levels=levels, root_of=root_of)
    return interm, graph


def decompose_session(session: TraceSession, cfg: DecomposeConfig | None = None):
    return global_decompose(session.arena, session.outputs, cfg, session.blocks)


# -- per-kernel locals -----------------------------------------------------------


def cut_complexity(arena: ExprArena, roots: Sequence[ExprRef], cut: set[ExprRef]) -> dict[ExprRef, int]:
    """Evaluation cost of each node when cut refs are loads (free leaves)."""
    scope = _scope_nodes(arena, roots, cut)
    args = arena.args
    ops = arena.ops
    cost = arena.op_cost
    cc: dict[ExprRef, int] = {}
    for i in scope:  # ascending, children first
        a = args[i]
        if not a or (i in cut and i not in roots):
            cc[i] = 0
            continue
        op = ops[i]
        base = cost[OpKind(op)]
        w = base * (len(a) - 1) if op in (OpKind.ADD, OpKind.MUL) else base
        cc[i] = w + sum(cc[c] for c in a)
    return cc


def _scope_nodes(arena: ExprArena, roots: Sequence[ExprRef], cut: set[ExprRef]) -> list[ExprRef]:
    args = arena.args
    seen: set[ExprRef] = set()
    stack = list(roots)
    root_set = set(roots)
    while stack:
        ref = stack.pop()
        if ref in seen:
            continue
        seen.add(ref)
        if ref in cut and ref not in root_set:
            continue
        stack.extend(args[ref])
    return sorted(seen)


def local_decompose(
    arena: ExprArena,
    roots: Sequence[ExprRef],
    cut: set[ExprRef] | None = None,
    min_saving: int = 2,
) -> list[tuple[int, ExprRef]]:
    """Pick the stack locals of one kernel and order them dependencies-first.

    A subtree becomes a local when recomputing its remaining occurrences
    would cost at least ``min_saving`` units, counted over the expanded
    expression tree, and when it still occurs at least twice once earlier
    (enclosing) locals are materialized; a reused subtree living entirely
    inside one local is simply absorbed by it.
    """
    cut = cut or set()
    scope = _scope_nodes(arena, roots, cut)
    if not scope:
        return []
    cc = cut_complexity(arena, roots, cut)
    args = arena.args
    root_set = set(roots)
    occ: dict[ExprRef, int] = dict.fromkeys(scope, 0)
    cocc: dict[ExprRef, int] = dict.fromkeys(scope, 0)
    for r in roots:
        occ[r] += 1
        cocc[r] += 1
    chosen: list[ExprRef] = []
    for i in reversed(scope):  # parents before children
        is_interior = bool(args[i]) and not (i in cut and i not in root_set)
        local = False
        if is_interior and i not in root_set:
            if (occ[i] - 1) * cc[i] >= min_saving and cocc[i] >= 2:
                local = True
                chosen.append(i)
        if not is_interior:
            continue
        w = 1 if (local or i in root_set) else cocc[i]
        o = occ[i]
        for c in args[i]:
            occ[c] += o
            cocc[c] += w
    chosen.sort()
    return [(slot, ref) for slot, ref in enumerate(chosen)]

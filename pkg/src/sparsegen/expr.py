"""Arena-backed symbolic expression DAGs with hash consing.

Every value produced while tracing a program over symbolic scalars becomes a
node in an append-only arena.  Nodes are immutable and deduplicated at
construction time, so identical subexpressions are stored exactly once and
expression identity is plain integer equality of arena indices.

Each node carries two 64-bit hashes computed once at construction:

* a *structural* hash that is identical for trees that differ only in their
  leaf payloads (any variable matches any variable, any constant any
  constant), used to group expressions that can share one kernel, and
* an *algebraic* hash built from wrapping ring arithmetic (sums hash to sums,
  products to products), so that rewrites such as factoring, expanding or
  cancelling summands preserve the hash and equal hashes predict equal
  values.

The arena is single-writer; once a trace is complete it can be read, hashed,
traversed and evaluated concurrently.
"""

from __future__ import annotations

import math
import struct as _struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Mapping, Sequence

ExprRef = int

_MASK64 = (1 << 64) - 1
_SALT = 0x9E3779B97F4A7C15

# Fixed leaf seeds; the concrete values are arbitrary but must never change,
# hashes are required to be stable across runs and platforms.
_VAR_SEED = 0x243F6A8885A308D3
_CONST_SEED = 0x13198A2E03707344


def mix64(z: int) -> int:
    """SplitMix64 finalizer; the only scrambling primitive used for hashing."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix2(a: int, b: int) -> int:
    """Combine two hash words as mix(a xor rotl(b, 31))."""
    b &= _MASK64
    return mix64(a ^ (((b << 31) | (b >> 33)) & _MASK64))


class OpKind(IntEnum):
    VAR = 0
    CONST = 1
    ADD = 2
    SUB = 3
    MUL = 4
    DIV = 5
    NEG = 6
    SQRT = 7
    SIN = 8
    COS = 9
    EXP = 10
    LOG = 11
    POW = 12
    SELECT = 13


# arity None means n-ary with at least two children
_ARITY: dict[OpKind, int | None] = {
    OpKind.VAR: 0,
    OpKind.CONST: 0,
    OpKind.ADD: None,
    OpKind.SUB: 2,
    OpKind.MUL: None,
    OpKind.DIV: 2,
    OpKind.NEG: 1,
    OpKind.SQRT: 1,
    OpKind.SIN: 1,
    OpKind.COS: 1,
    OpKind.EXP: 1,
    OpKind.LOG: 1,
    OpKind.POW: 2,
    OpKind.SELECT: 3,
}

COMMUTATIVE = frozenset((OpKind.ADD, OpKind.MUL))

# Coarse clock-cycle ordering; leaves are free.  n-ary sums/products pay the
# per-op cost once per combining step, i.e. (children - 1) times.
DEFAULT_OP_COST: dict[OpKind, int] = {
    OpKind.VAR: 0,
    OpKind.CONST: 0,
    OpKind.ADD: 1,
    OpKind.SUB: 1,
    OpKind.NEG: 1,
    OpKind.MUL: 1,
    OpKind.DIV: 4,
    OpKind.SQRT: 8,
    OpKind.SIN: 12,
    OpKind.COS: 12,
    OpKind.EXP: 12,
    OpKind.LOG: 12,
    OpKind.POW: 12,
    OpKind.SELECT: 2,
}

_LEAF_OPS = (OpKind.VAR, OpKind.CONST)

_OP_MIX = {op: mix64(int(op)) for op in OpKind}


def _float_bits(v: float) -> int:
    return _struct.unpack("<Q", _struct.pack("<d", v))[0]


class ExprArena:
    """Append-only node store with memoizing constructors.

    ``hash_bits`` narrows every hash to the low bits; the default of 64 is
    what real use wants, small widths exist to make collisions reproducible
    in tests.  ``alg_consing`` additionally reuses nodes whose algebraic hash
    already exists, trading structural fidelity for memory.
    """

    def __init__(
        self,
        hash_bits: int = 64,
        op_cost: Mapping[OpKind, int] | None = None,
        alg_consing: bool = False,
    ):
        if not 1 <= hash_bits <= 64:
            raise ValueError("hash_bits must be in [1, 64]")
        self.hash_bits = hash_bits
        self._mod = 1 << hash_bits
        self._hmask = self._mod - 1
        self.op_cost = dict(DEFAULT_OP_COST if op_cost is None else op_cost)
        self.ops: list[int] = []
        self.args: list[tuple[ExprRef, ...]] = []
        self.payload: list[float | int | None] = []
        self.struct_hash: list[int] = []
        self.alg_hash: list[int] = []
        self.complexity: list[int] = []
        self.cons_map: dict[tuple, ExprRef] = {}
        self.alg_map: dict[int, ExprRef] | None = {} if alg_consing else None
        self.var_count = 0
        hm = self._hmask
        self._var_struct = mix2(mix64(OpKind.VAR), _VAR_SEED & hm) & hm
        self._const_struct = mix2(mix64(OpKind.CONST), _CONST_SEED & hm) & hm
        self._sh2_cache: dict[tuple[int, int], int] = {}

    def __len__(self) -> int:
        return len(self.ops)

    # -- constructors ------------------------------------------------------

    def _push(self, op, cargs, payload, sh, ah, cx) -> ExprRef:
        ref = len(self.ops)
        self.ops.append(op)
        self.args.append(cargs)
        self.payload.append(payload)
        self.struct_hash.append(sh)
        self.alg_hash.append(ah)
        self.complexity.append(cx)
        return ref

    def make_var(self, var_id: int) -> ExprRef:
        if var_id < 0:
            raise ValueError("var_id must be >= 0")
        key = (0, var_id)
        ref = self.cons_map.get(key)
        if ref is not None:
            return ref
        # the low bit is forced so variable hashes are units mod 2^k and
        # quotients of variable products stay detectable
        ah = (mix64(_SALT + var_id) | 1) & self._hmask
        if self.alg_map is not None:
            hit = self.alg_map.get(ah)
            if hit is not None:
                return hit
        ref = self._push(OpKind.VAR, (), var_id, self._var_struct, ah, 0)
        self.cons_map[key] = ref
        if self.alg_map is not None:
            self.alg_map[ah] = ref
        if var_id >= self.var_count:
            self.var_count = var_id + 1
        return ref

    def make_const(self, value: float) -> ExprRef:
        v = float(value)
        if not math.isfinite(v):
            raise ValueError(f"constants must be finite, got {value!r}")
        key = (1, _float_bits(v))
        ref = self.cons_map.get(key)
        if ref is not None:
            return ref
        if v.is_integer() and abs(v) < 2.0**32:
            ah = int(v) % self._mod
        else:
            ah = mix64(_float_bits(v)) & self._hmask
        if self.alg_map is not None:
            hit = self.alg_map.get(ah)
            if hit is not None:
                return hit
        ref = self._push(OpKind.CONST, (), v, self._const_struct, ah, 0)
        self.cons_map[key] = ref
        if self.alg_map is not None:
            self.alg_map[ah] = ref
        return ref

    def apply(self, op: OpKind, children: Sequence[ExprRef], sort: bool = True) -> ExprRef:
        """Build an operation node, reusing an identical existing node.

        Children of commutative operations are put into canonical order:
        ascending structural hash, ties broken by arena index.  The index
        tie-break keeps equal-structure operands in creation order, which is
        the same per instance of a uniformly built trace; that alignment is
        what makes per-slot address coherence detectable later.  ``sort`` is
        disabled by template rebuilding to preserve an instance's evaluation
        order exactly.
        """
        if type(op) is not OpKind:
            op = OpKind(op)
        cs = tuple(children)
        arity = _ARITY[op]
        if arity is None:
            if len(cs) < 2:
                raise ValueError(f"{op.name} needs at least 2 children, got {len(cs)}")
        elif len(cs) != arity:
            raise ValueError(f"{op.name} needs {arity} children, got {len(cs)}")
        n = len(self.ops)
        for c in cs:
            if c < 0 or c >= n:
                raise ValueError(f"child {c} is not a node of this arena")
        if op is OpKind.POW:
            e = cs[1]
            ev = self.payload[e]
            if self.ops[e] != OpKind.CONST or not float(ev).is_integer() or ev < 2:
                raise ValueError("pow requires a constant integer exponent >= 2")
        sh_list = self.struct_hash
        ah_list = self.alg_hash
        if sort and op in COMMUTATIVE:
            if len(cs) == 2:
                a, b = cs
                if (sh_list[b], b) < (sh_list[a], a):
                    cs = (b, a)
            else:
                cs = tuple(sorted(cs, key=lambda c: (sh_list[c], c)))
        key = (op, cs)
        ref = self.cons_map.get(key)
        if ref is not None:
            return ref

        hm = self._hmask
        mod = self._mod
        # inlined mix2 chain over child hashes, then the op word
        mask = _MASK64
        m1 = 0xBF58476D1CE4E5B9
        m2 = 0x94D049BB133111EB
        h = 0
        for c in cs:
            z = sh_list[c] ^ (((h << 31) | (h >> 33)) & mask)
            z = ((z ^ (z >> 30)) * m1) & mask
            z = ((z ^ (z >> 27)) * m2) & mask
            h = z ^ (z >> 31)
        if op is OpKind.POW:
            # the exponent is part of the operation, not a harvested leaf
            h = mix2(h, mix64(int(self.payload[cs[1]])))
        z = _OP_MIX[op] ^ (((h << 31) | (h >> 33)) & mask)
        z = ((z ^ (z >> 30)) * m1) & mask
        z = ((z ^ (z >> 27)) * m2) & mask
        sh = (z ^ (z >> 31)) & hm

        if op is OpKind.ADD:
            ah = 0
            for c in cs:
                ah += ah_list[c]
            ah %= mod
        elif op is OpKind.MUL:
            ah = 1
            for c in cs:
                ah = (ah * ah_list[c]) % mod
        elif op is OpKind.SUB:
            ah = (ah_list[cs[0]] - ah_list[cs[1]]) % mod
        elif op is OpKind.NEG:
            ah = (-ah_list[cs[0]]) % mod
        elif op is OpKind.POW:
            ah = pow(ah_list[cs[0]], int(self.payload[cs[1]]), mod)
        elif op is OpKind.DIV and ah_list[cs[1]] & 1:
            ah = (ah_list[cs[0]] * pow(ah_list[cs[1]], -1, mod)) % mod
        else:
            ah = 0
            for c in cs:
                z = ah_list[c] ^ (((ah << 31) | (ah >> 33)) & mask)
                z = ((z ^ (z >> 30)) * m1) & mask
                z = ((z ^ (z >> 27)) * m2) & mask
                ah = z ^ (z >> 31)
            z = _OP_MIX[op] ^ (((ah << 31) | (ah >> 33)) & mask)
            z = ((z ^ (z >> 30)) * m1) & mask
            z = ((z ^ (z >> 27)) * m2) & mask
            ah = (z ^ (z >> 31)) & hm

        base = self.op_cost[op]
        if op is OpKind.ADD or op is OpKind.MUL:
            cx = base * (len(cs) - 1)
        else:
            cx = base
        comp = self.complexity
        for c in cs:
            cx += comp[c]

        if self.alg_map is not None:
            hit = self.alg_map.get(ah)
            if hit is not None:
                return hit
        ref = self._push(op, cs, None, sh, ah, cx)
        self.cons_map[key] = ref
        if self.alg_map is not None:
            self.alg_map[ah] = ref
        return ref

    def mul2(self, a: ExprRef, b: ExprRef) -> ExprRef:
        """Lean two-operand product; semantically apply(MUL, (a, b)).

        The sparse matrix product calls this once per term, so it skips the
        generic arity machinery.
        """
        if self.alg_map is not None:
            return self.apply(OpKind.MUL, (a, b))
        sh_list = self.struct_hash
        if (sh_list[b], b) < (sh_list[a], a):
            a, b = b, a
        key = (OpKind.MUL, (a, b))
        ref = self.cons_map.get(key)
        if ref is not None:
            return ref
        # traces reuse very few distinct child-hash pairs, so memoize the mix
        shk = (sh_list[a], sh_list[b])
        sh = self._sh2_cache.get(shk)
        if sh is None:
            mask = _MASK64
            m1 = 0xBF58476D1CE4E5B9
            m2 = 0x94D049BB133111EB
            h = 0
            for c in (a, b):
                z = sh_list[c] ^ (((h << 31) | (h >> 33)) & mask)
                z = ((z ^ (z >> 30)) * m1) & mask
                z = ((z ^ (z >> 27)) * m2) & mask
                h = z ^ (z >> 31)
            z = _OP_MIX[OpKind.MUL] ^ (((h << 31) | (h >> 33)) & mask)
            z = ((z ^ (z >> 30)) * m1) & mask
            z = ((z ^ (z >> 27)) * m2) & mask
            sh = (z ^ (z >> 31)) & self._hmask
            self._sh2_cache[shk] = sh
        ah_list = self.alg_hash
        ah = (ah_list[a] * ah_list[b]) % self._mod
        cx = self.op_cost[OpKind.MUL] + self.complexity[a] + self.complexity[b]
        ref = self._push(OpKind.MUL, (a, b), None, sh, ah, cx)
        self.cons_map[key] = ref
        return ref

    def select(self, cond: ExprRef, if_neg: ExprRef, if_nonneg: ExprRef) -> ExprRef:
        """Conditional assignment: evaluates to if_neg when cond < 0."""
        return self.apply(OpKind.SELECT, (cond, if_neg, if_nonneg))

    # -- convenience accessors ---------------------------------------------

    def op(self, ref: ExprRef) -> OpKind:
        return OpKind(self.ops[ref])

    def children(self, ref: ExprRef) -> tuple[ExprRef, ...]:
        return self.args[ref]

    def is_leaf(self, ref: ExprRef) -> bool:
        return self.ops[ref] in _LEAF_OPS

    def var(self, var_id: int) -> "Sym":
        return Sym(self, self.make_var(var_id))

    def const(self, value: float) -> "Sym":
        return Sym(self, self.make_const(value))

    def stats(self) -> dict:
        from collections import Counter

        per_op = {OpKind(op).name: cnt for op, cnt in sorted(Counter(self.ops).items())}
        n = len(self.ops)
        return {
            "nodes": n,
            "vars": self.var_count,
            "per_op": per_op,
            # node payload + hash/complexity slots + consing entry, roughly
            "est_bytes": n * 120,
        }


def complexity(arena: ExprArena, ref: ExprRef) -> int:
    """Cached cost-model weight of the full expression tree under ``ref``."""
    return arena.complexity[ref]


# -- evaluation --------------------------------------------------------------


def _marks_needed(arena: ExprArena, roots: Sequence[ExprRef]) -> bytearray:
    n = len(arena.ops)
    need = bytearray(n)
    for r in roots:
        if not 0 <= r < n:
            raise ValueError(f"root {r} is not a node of this arena")
        need[r] = 1
    args = arena.args
    for i in range(n - 1, -1, -1):
        if need[i]:
            for c in args[i]:
                need[c] = 1
    return need


def eval_numeric(
    arena: ExprArena,
    roots: Sequence[ExprRef],
    bindings: Mapping[int, float],
) -> list[float]:
    """Evaluate expressions numerically; the ground-truth oracle.

    A single memoized post-order sweep: each reachable DAG node is computed
    exactly once, children in stored order (n-ary sums and products fold
    left), so results are bit-reproducible and match both a plain recursive
    tree evaluation and the generated kernels.
    """
    need = _marks_needed(arena, roots)
    n = len(arena.ops)
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    vals = [0.0] * n
    _pow = math.pow
    for i in range(n):
        if not need[i]:
            continue
        op = ops[i]
        a = args[i]
        if op == 4:  # MUL
            acc = vals[a[0]]
            for c in a[1:]:
                acc *= vals[c]
            vals[i] = acc
        elif op == 2:  # ADD
            acc = vals[a[0]]
            for c in a[1:]:
                acc += vals[c]
            vals[i] = acc
        elif op == 0:  # VAR
            try:
                vals[i] = bindings[payload[i]]
            except KeyError:
                raise ValueError(f"no binding for variable {payload[i]}") from None
        elif op == 1:  # CONST
            vals[i] = payload[i]
        elif op == 3:  # SUB
            vals[i] = vals[a[0]] - vals[a[1]]
        elif op == 5:  # DIV
            vals[i] = vals[a[0]] / vals[a[1]]
        elif op == 6:  # NEG
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
            vals[i] = _pow(vals[a[0]], vals[a[1]])
        else:  # SELECT
            vals[i] = vals[a[1]] if vals[a[0]] < 0.0 else vals[a[2]]
    return [vals[r] for r in roots]


def eval_tree(arena: ExprArena, root: ExprRef, bindings: Mapping[int, float]) -> float:
    """Recursive tree evaluation without memoization (reference/benchmark)."""
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    # iterative post-order over the expanded tree; shared nodes recomputed
    out: list[float] = []
    stack: list[tuple[int, bool]] = [(root, False)]
    while stack:
        ref, done = stack.pop()
        if done:
            op = ops[ref]
            k = len(args[ref])
            if k:
                vs = out[-k:]
                del out[-k:]
            if op == 4:
                acc = vs[0]
                for v in vs[1:]:
                    acc *= v
                out.append(acc)
            elif op == 2:
                acc = vs[0]
                for v in vs[1:]:
                    acc += v
                out.append(acc)
            elif op == 3:
                out.append(vs[0] - vs[1])
            elif op == 5:
                out.append(vs[0] / vs[1])
            elif op == 6:
                out.append(-vs[0])
            elif op == 7:
                out.append(math.sqrt(vs[0]))
            elif op == 8:
                out.append(math.sin(vs[0]))
            elif op == 9:
                out.append(math.cos(vs[0]))
            elif op == 10:
                out.append(math.exp(vs[0]))
            elif op == 11:
                out.append(math.log(vs[0]))
            elif op == 12:
                out.append(math.pow(vs[0], vs[1]))
            else:
                out.append(vs[1] if vs[0] < 0.0 else vs[2])
        else:
            op = ops[ref]
            if op == 0:
                try:
                    out.append(bindings[payload[ref]])
                except KeyError:
                    raise ValueError(f"no binding for variable {payload[ref]}") from None
            elif op == 1:
                out.append(payload[ref])
            else:
                stack.append((ref, True))
                for c in reversed(args[ref]):
                    stack.append((c, False))
    return out[0]


# -- traversal ---------------------------------------------------------------


def traverse(
    arena: ExprArena,
    roots: Sequence[ExprRef],
    order: str = "post",
    visit: Callable[[ExprRef], object] | None = None,
    skip_visited: bool = True,
    prune: Callable[[ExprRef], bool] | None = None,
) -> int:
    """Depth-first walk over the DAG, returning the number of visits.

    With ``skip_visited`` each node is visited once across all roots; without
    it the walk follows the expanded tree.  ``prune`` stops descent below a
    node (the node itself is still visited), which is how analyses avoid
    walking into already-materialized intermediates.  Visitor state lives in
    the caller's closure.
    """
    if order not in ("pre", "post"):
        raise ValueError(f"order must be 'pre' or 'post', got {order!r}")
    args = arena.args
    seen = bytearray(len(arena.ops))
    count = 0
    if order == "pre":
        stack = list(reversed(roots))
        while stack:
            ref = stack.pop()
            if skip_visited:
                if seen[ref]:
                    continue
                seen[ref] = 1
            count += 1
            if visit is not None:
                visit(ref)
            if prune is not None and prune(ref):
                continue
            for c in reversed(args[ref]):
                stack.append(c)
    else:
        stack = [(r, False) for r in reversed(roots)]
        while stack:
            ref, expanded = stack.pop()
            if expanded:
                count += 1
                if visit is not None:
                    visit(ref)
                continue
            if skip_visited:
                if seen[ref]:
                    continue
                seen[ref] = 1
            stack.append((ref, True))
            if prune is None or not prune(ref):
                for c in reversed(args[ref]):
                    stack.append((c, False))
    return count


def reachable(arena: ExprArena, roots: Sequence[ExprRef]) -> list[ExprRef]:
    """All nodes reachable from ``roots`` in ascending (topological) order."""
    need = _marks_needed(arena, roots)
    return [i for i in range(len(need)) if need[i]]


def structurally_equal(arena: ExprArena, a: ExprRef, b: ExprRef) -> bool:
    """Full recursive structural comparison (identical up to leaf payloads)."""
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x == y:
            continue
        if ops[x] != ops[y]:
            return False
        op = ops[x]
        if op == OpKind.VAR or op == OpKind.CONST:
            continue
        ax, ay = args[x], args[y]
        if len(ax) != len(ay):
            return False
        if op == OpKind.POW and payload[ax[1]] != payload[ay[1]]:
            return False
        stack.extend(zip(ax, ay))
    return True


# -- collision checking -------------------------------------------------------


@dataclass
class CollisionReport:
    """Outcome of the exhaustive equal-hash cross-check."""

    struct_collisions: list[tuple[ExprRef, ExprRef]]
    alg_collisions: list[tuple[ExprRef, ExprRef]]
    nodes_checked: int = 0

    @property
    def clean(self) -> bool:
        return not self.struct_collisions and not self.alg_collisions


def _guarded_eval_all(
    arena: ExprArena, bindings: list[float], roots: Sequence[ExprRef] | None = None
) -> list[float]:
    # probe evaluation; domain errors become nan instead of raising
    n = len(arena.ops)
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    need = None if roots is None else _marks_needed(arena, roots)
    vals = [0.0] * n
    nan = float("nan")
    for i in range(n):
        if need is not None and not need[i]:
            continue
        op = ops[i]
        a = args[i]
        try:
            if op == 0:
                vals[i] = bindings[payload[i]]
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
                v = vals[a[0]]
                vals[i] = math.sqrt(v) if v >= 0.0 else nan
            elif op == 8:
                vals[i] = math.sin(vals[a[0]])
            elif op == 9:
                vals[i] = math.cos(vals[a[0]])
            elif op == 10:
                v = vals[a[0]]
                vals[i] = math.exp(v) if v < 700.0 else nan
            elif op == 11:
                v = vals[a[0]]
                vals[i] = math.log(v) if v > 0.0 else nan
            else:
                if op == 12:
                    vals[i] = math.pow(vals[a[0]], vals[a[1]])
                else:
                    vals[i] = vals[a[1]] if vals[a[0]] < 0.0 else vals[a[2]]
        except (OverflowError, ZeroDivisionError, ValueError):
            vals[i] = nan
    return vals


def check_hash_collisions(arena: ExprArena, probe_seed: int = 0) -> CollisionReport:
    """Cross-check every equal-hash node pair against a real comparison.

    Structural hashes are checked against interned full-tree structural
    classes, algebraic hashes against numeric agreement at three random probe
    points (differing values prove a collision; agreement within 1e-6
    relative clears the pair).
    """
    import numpy as np

    n = len(arena.ops)
    report = CollisionReport([], [], n)
    if n == 0:
        return report

    ops = arena.ops
    args = arena.args
    payload = arena.payload
    # interned structural classes, bottom-up
    classes: dict[tuple, int] = {}
    cls = [0] * n
    for i in range(n):
        op = ops[i]
        if op == OpKind.VAR:
            key = (0,)
        elif op == OpKind.CONST:
            key = (1,)
        elif op == OpKind.POW:
            key = (op, int(payload[args[i][1]]), cls[args[i][0]])
        else:
            key = (op, *[cls[c] for c in args[i]])
        cid = classes.get(key)
        if cid is None:
            cid = len(classes)
            classes[key] = cid
        cls[i] = cid

    buckets: dict[int, list[int]] = {}
    for i, h in enumerate(arena.struct_hash):
        buckets.setdefault(h, []).append(i)
    for members in buckets.values():
        if len(members) < 2:
            continue
        first = members[0]
        for m in members[1:]:
            if cls[m] != cls[first]:
                report.struct_collisions.append((first, m))

    rng = np.random.default_rng(probe_seed)
    probes = [
        _guarded_eval_all(arena, list(rng.uniform(0.5, 2.0, max(arena.var_count, 1))))
        for _ in range(3)
    ]
    abuckets: dict[int, list[int]] = {}
    for i, h in enumerate(arena.alg_hash):
        abuckets.setdefault(h, []).append(i)
    for members in abuckets.values():
        if len(members) < 2:
            continue
        first = members[0]
        for m in members[1:]:
            for vals in probes:
                va, vb = vals[first], vals[m]
                if math.isnan(va) or math.isnan(vb):
                    continue
                if abs(va - vb) > 1e-6 * max(1.0, abs(va), abs(vb)):
                    report.alg_collisions.append((first, m))
                    break
    return report


# -- operator-overloading surface ---------------------------------------------


class Sym:
    """Scalar wrapper used to trace ordinary arithmetic into the arena.

    Mirrors a numeric type closely enough that generic code runs unchanged:
    operators build DAG nodes instead of computing values.
    """

    __slots__ = ("arena", "ref")

    def __init__(self, arena: ExprArena, ref: ExprRef):
        self.arena = arena
        self.ref = ref

    def _lift(self, other) -> ExprRef:
        if isinstance(other, Sym):
            if other.arena is not self.arena:
                raise ValueError("cannot mix expressions from different arenas")
            return other.ref
        return self.arena.make_const(other)

    def __add__(self, other):
        return Sym(self.arena, self.arena.apply(OpKind.ADD, (self.ref, self._lift(other))))

    __radd__ = __add__

    def __mul__(self, other):
        return Sym(self.arena, self.arena.apply(OpKind.MUL, (self.ref, self._lift(other))))

    __rmul__ = __mul__

    def __sub__(self, other):
        return Sym(self.arena, self.arena.apply(OpKind.SUB, (self.ref, self._lift(other))))

    def __rsub__(self, other):
        return Sym(self.arena, self.arena.apply(OpKind.SUB, (self._lift(other), self.ref)))

    def __truediv__(self, other):
        return Sym(self.arena, self.arena.apply(OpKind.DIV, (self.ref, self._lift(other))))

    def __rtruediv__(self, other):
        return Sym(self.arena, self.arena.apply(OpKind.DIV, (self._lift(other), self.ref)))

    def __neg__(self):
        return Sym(self.arena, self.arena.apply(OpKind.NEG, (self.ref,)))

    def __pow__(self, k):
        if isinstance(k, int) and not isinstance(k, bool):
            if k == 0:
                return Sym(self.arena, self.arena.make_const(1.0))
            if k == 1:
                return self
            if k >= 2:
                e = self.arena.make_const(float(k))
                return Sym(self.arena, self.arena.apply(OpKind.POW, (self.ref, e)))
            return 1.0 / self ** (-k)
        # non-integer exponents route through exp/log
        return sym_exp(Sym(self.arena, self._lift(k)) * sym_log(self))

    def __repr__(self):
        return f"Sym({to_str(self.arena, self.ref)})"


def _unary(op: OpKind, x: Sym) -> Sym:
    return Sym(x.arena, x.arena.apply(op, (x.ref,)))


def sym_sqrt(x: Sym) -> Sym:
    return _unary(OpKind.SQRT, x)


def sym_sin(x: Sym) -> Sym:
    return _unary(OpKind.SIN, x)


def sym_cos(x: Sym) -> Sym:
    return _unary(OpKind.COS, x)


def sym_exp(x: Sym) -> Sym:
    return _unary(OpKind.EXP, x)


def sym_log(x: Sym) -> Sym:
    return _unary(OpKind.LOG, x)


def sym_select(cond: Sym, if_neg, if_nonneg) -> Sym:
    arena = cond.arena
    return Sym(arena, arena.select(cond.ref, cond._lift(if_neg), cond._lift(if_nonneg)))


# -- printing ----------------------------------------------------------------

_OP_SYMBOL = {OpKind.ADD: " + ", OpKind.MUL: "*", OpKind.SUB: " - ", OpKind.DIV: "/"}


def to_str(arena: ExprArena, ref: ExprRef, names: Mapping[int, str] | None = None) -> str:
    """Readable infix rendering, mainly for debugging and reports."""
    op = arena.op(ref)
    a = arena.args[ref]
    if op == OpKind.VAR:
        vid = arena.payload[ref]
        return names[vid] if names and vid in names else f"v{vid}"
    if op == OpKind.CONST:
        v = arena.payload[ref]
        return repr(int(v)) if float(v).is_integer() else repr(v)
    if op in _OP_SYMBOL:
        parts = []
        for c in a:
            s = to_str(arena, c, names)
            if not arena.is_leaf(c) and _precedence(arena.op(c)) < _precedence(op):
                s = f"({s})"
            parts.append(s)
        return _OP_SYMBOL[op].join(parts)
    if op == OpKind.NEG:
        inner = to_str(arena, a[0], names)
        return f"-({inner})" if not arena.is_leaf(a[0]) else f"-{inner}"
    if op == OpKind.POW:
        base = to_str(arena, a[0], names)
        if not arena.is_leaf(a[0]):
            base = f"({base})"
        return f"{base}^{int(arena.payload[a[1]])}"
    if op == OpKind.SELECT:
        c, x, y = (to_str(arena, ci, names) for ci in a)
        return f"select({c}, {x}, {y})"
    return f"{op.name.lower()}({to_str(arena, a[0], names)})"


def _precedence(op: OpKind) -> int:
    if op == OpKind.ADD or op == OpKind.SUB:
        return 1
    if op == OpKind.MUL or op == OpKind.DIV:
        return 2
    return 3

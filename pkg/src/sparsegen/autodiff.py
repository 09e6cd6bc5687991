"""Reverse-mode symbolic differentiation.

Derivative expressions are built into the same arena as the primal, so any
subexpression shared between a value and its adjoints (or between different
partial derivatives) is stored once by construction.

The traversal is a worklist of (expression, adjoint) pairs seeded with the
root and the constant 1.  Each operation pushes its children with the
locally differentiated adjoint; contributions arriving at variables are
collected and combined into one canonical n-ary sum at the end, so results
do not depend on worklist order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .expr import ExprArena, ExprRef, OpKind


@dataclass
class Gradient:
    """Partial derivatives keyed by variable id; absent means structurally zero."""

    entries: dict[int, ExprRef] = field(default_factory=dict)

    def get(self, var_id: int) -> ExprRef | None:
        return self.entries.get(var_id)

    def __iter__(self):
        return iter(self.entries.items())


def gradient(arena: ExprArena, root: ExprRef, wrt: Iterable[int]) -> Gradient:
    """Differentiate ``root`` with respect to the given variable ids."""
    wanted = set(wrt)
    if not wanted:
        raise ValueError("wrt must name at least one variable")
    apply = arena.apply
    ops = arena.ops
    args = arena.args
    payload = arena.payload
    one = arena.make_const(1.0)
    zero = arena.make_const(0.0)
    contributions: dict[int, list[ExprRef]] = {}
    stack: list[tuple[ExprRef, ExprRef]] = [(root, one)]
    while stack:
        node, adj = stack.pop()
        op = ops[node]
        a = args[node]
        if op == OpKind.VAR:
            vid = payload[node]
            if vid in wanted:
                contributions.setdefault(vid, []).append(adj)
        elif op == OpKind.CONST:
            pass
        elif op == OpKind.ADD:
            for c in a:
                stack.append((c, adj))
        elif op == OpKind.SUB:
            stack.append((a[0], adj))
            stack.append((a[1], apply(OpKind.NEG, (adj,))))
        elif op == OpKind.MUL:
            for i, c in enumerate(a):
                others = a[:i] + a[i + 1 :]
                stack.append((c, apply(OpKind.MUL, (adj, *others))))
        elif op == OpKind.DIV:
            l, r = a
            stack.append((l, apply(OpKind.DIV, (adj, r))))
            neg = apply(OpKind.NEG, (l,))
            rr = apply(OpKind.MUL, (r, r))
            stack.append((r, apply(OpKind.MUL, (apply(OpKind.DIV, (neg, rr)), adj))))
        elif op == OpKind.NEG:
            stack.append((a[0], apply(OpKind.NEG, (adj,))))
        elif op == OpKind.SQRT:
            two = arena.make_const(2.0)
            denom = apply(OpKind.MUL, (two, node))  # reuses the primal sqrt
            stack.append((a[0], apply(OpKind.DIV, (adj, denom))))
        elif op == OpKind.SIN:
            stack.append((a[0], apply(OpKind.MUL, (adj, apply(OpKind.COS, (a[0],))))))
        elif op == OpKind.COS:
            s = apply(OpKind.SIN, (a[0],))
            stack.append((a[0], apply(OpKind.NEG, (apply(OpKind.MUL, (adj, s)),))))
        elif op == OpKind.EXP:
            stack.append((a[0], apply(OpKind.MUL, (adj, node))))
        elif op == OpKind.LOG:
            stack.append((a[0], apply(OpKind.DIV, (adj, a[0]))))
        elif op == OpKind.POW:
            k = int(payload[a[1]])
            kc = arena.make_const(float(k))
            if k == 2:
                factor = a[0]
            else:
                factor = apply(OpKind.POW, (a[0], arena.make_const(float(k - 1))))
            stack.append((a[0], apply(OpKind.MUL, (adj, kc, factor))))
        elif op == OpKind.SELECT:
            cond, if_neg, if_nonneg = a
            # the condition is treated as non-differentiable
            stack.append((if_neg, apply(OpKind.SELECT, (cond, adj, zero))))
            stack.append((if_nonneg, apply(OpKind.SELECT, (cond, zero, adj))))
        else:
            raise ValueError(f"cannot differentiate through {OpKind(op).name}")
    entries = {}
    for vid in sorted(contributions):
        parts = contributions[vid]
        entries[vid] = parts[0] if len(parts) == 1 else apply(OpKind.ADD, parts)
    return Gradient(entries)


def hessian(arena: ExprArena, root: ExprRef, wrt: Iterable[int]) -> dict[tuple[int, int], ExprRef]:
    """Second derivatives by differentiating each gradient entry once more.

    Only pairs with i <= j are materialized; the mirrored key maps to the
    identical expression reference.
    """
    ids = sorted(set(wrt))
    g = gradient(arena, root, ids)
    out: dict[tuple[int, int], ExprRef] = {}
    for i in ids:
        gi = g.get(i)
        if gi is None:
            continue
        upper = [j for j in ids if j >= i]
        gg = gradient(arena, gi, upper)
        for j, e in gg:
            out[(i, j)] = e
            out[(j, i)] = e
    return out

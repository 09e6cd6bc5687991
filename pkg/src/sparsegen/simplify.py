"""Algebraic simplification of (template) expressions.

Five families of value-preserving rewrites, applied bottom-up to a fixpoint:

* constant folding, including hash-predicted constants: a subexpression
  whose algebraic hash equals that of a small integer is evaluated at three
  random points and replaced only when the values confirm the prediction,
* fraction reduction: maximal product/quotient subtrees are flattened into
  a signed factor multiset (square roots carry half-exponents), cancelled
  and rebuilt,
* summand elimination: sums are flattened with signed coefficients,
  constant-times-sum products expanded, and like terms collected by
  algebraic hash,
* factorization: greedy extraction of the heaviest factor set shared by the
  most summands, recursing into the factored group and the remainder,
* square-root elimination: products of square roots consolidate, roots of
  perfect squares disappear.

Rewrites assume nonvanishing denominators (a strict mode keeps quotients
untouched) and are exact up to floating-point reassociation; with sum
rewriting disabled no sum is reassociated at all, which also disables
factorization and summand elimination.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .expr import ExprArena, ExprRef, OpKind, _guarded_eval_all, reachable

_SMALL = 2**32


@dataclass
class SimplifyConfig:
    factorize: bool = True
    fractions: bool = True
    summands: bool = True
    sqrt: bool = True
    constants: bool = True
    sums_enabled: bool = True
    cancel_divisions: bool = True
    max_passes: int = 16

    def sum_rules_active(self) -> bool:
        return self.sums_enabled


@dataclass
class SimplifyStats:
    hits: dict[str, int] = field(
        default_factory=lambda: {
            "constants": 0,
            "fractions": 0,
            "summands": 0,
            "factorize": 0,
            "sqrt": 0,
        }
    )

    def bump(self, rule: str) -> None:
        self.hits[rule] += 1


def simplify(
    arena: ExprArena,
    root: ExprRef,
    cfg: SimplifyConfig | None = None,
    stats: SimplifyStats | None = None,
) -> ExprRef:
    """Rewrite to a fixpoint (bounded passes); never increases complexity."""
    cfg = cfg or SimplifyConfig()
    stats = stats if stats is not None else SimplifyStats()
    for _ in range(cfg.max_passes):
        new = _rewrite_pass(arena, root, cfg, stats)
        if new == root:
            break
        root = new
    return root


def _rewrite_pass(arena: ExprArena, root: ExprRef, cfg, stats) -> ExprRef:
    memo: dict[ExprRef, ExprRef] = {}
    ops = arena.ops
    args = arena.args
    for i in reachable(arena, [root]):
        a = args[i]
        if not a:
            memo[i] = i
            continue
        new_children = [memo[c] for c in a]
        if new_children == list(a):
            node = i
        else:
            node = arena.apply(OpKind(ops[i]), new_children)
        memo[i] = _apply_rules(arena, node, cfg, stats)
    return memo[root]


def _apply_rules(arena: ExprArena, node: ExprRef, cfg, stats) -> ExprRef:
    op = arena.ops[node]
    sums_ok = cfg.sums_enabled
    if (op == OpKind.ADD or op == OpKind.SUB) and not sums_ok:
        return node
    if cfg.constants:
        node = fold_constants(arena, node, cfg, stats)
        op = arena.ops[node]
    if cfg.fractions and op in (OpKind.MUL, OpKind.DIV):
        node = reduce_fractions(arena, node, cfg, stats)
        op = arena.ops[node]
    if cfg.sqrt and op == OpKind.SQRT:
        node = _reduce_sqrt(arena, node, cfg, stats)
        op = arena.ops[node]
    if sums_ok and cfg.summands and op in (OpKind.ADD, OpKind.SUB):
        node = eliminate_summands(arena, node, cfg, stats)
        op = arena.ops[node]
    if sums_ok and cfg.factorize and op == OpKind.ADD:
        node = factorize(arena, node, cfg, stats)
    return node


# -- constants ---------------------------------------------------------------------


def _contains_sum(arena: ExprArena, node: ExprRef) -> bool:
    ops = arena.ops
    stack = [node]
    while stack:
        r = stack.pop()
        if ops[r] in (OpKind.ADD, OpKind.SUB):
            return True
        stack.extend(arena.args[r])
    return False


def _subtree_is_const(arena: ExprArena, node: ExprRef) -> bool:
    # children are already folded bottom-up, so checking one level suffices
    # for anything foldable; a full check keeps the rule usable standalone
    ops = arena.ops
    stack = [node]
    while stack:
        r = stack.pop()
        if ops[r] == OpKind.VAR:
            return False
        stack.extend(arena.args[r])
    return True


def _probe_values(arena: ExprArena, node: ExprRef):
    for seed in (11, 23, 47):
        rng = np.random.default_rng(seed)
        bindings = list(rng.uniform(0.5, 2.0, max(arena.var_count, 1)))
        yield _guarded_eval_all(arena, bindings, roots=[node])[node]


def fold_constants(
    arena: ExprArena,
    node: ExprRef,
    cfg: SimplifyConfig | None = None,
    stats: SimplifyStats | None = None,
) -> ExprRef:
    """Evaluate constant subtrees; detect hash-predicted constant values."""
    cfg = cfg or SimplifyConfig()
    stats = stats if stats is not None else SimplifyStats()
    ops = arena.ops
    args = arena.args
    op = ops[node]
    if op in (OpKind.VAR, OpKind.CONST):
        return node
    if op == OpKind.NEG:
        inner = args[node][0]
        if ops[inner] == OpKind.NEG:
            stats.bump("constants")
            return args[inner][0]
        if ops[inner] == OpKind.CONST:
            stats.bump("constants")
            return arena.make_const(-arena.payload[inner])
    if op == OpKind.SELECT:
        cond = args[node][0]
        if ops[cond] == OpKind.CONST:
            stats.bump("constants")
            return args[node][1] if arena.payload[cond] < 0 else args[node][2]
    if _subtree_is_const(arena, node):
        try:
            from .expr import eval_numeric

            v = eval_numeric(arena, [node], {})[0]
        except (ValueError, ZeroDivisionError, OverflowError):
            return node
        if math.isfinite(v):
            stats.bump("constants")
            return arena.make_const(v)
        return node
    # hash prediction: does this expression hash like a small integer?
    ah = arena.alg_hash[node]
    mod = arena._mod
    if ah < _SMALL:
        k = ah
    elif mod - ah < _SMALL:
        k = ah - mod
    else:
        return node
    if not cfg.sums_enabled and _contains_sum(arena, node):
        return node
    kf = float(k)
    for v in _probe_values(arena, node):
        if math.isnan(v) or abs(v - kf) > 1e-9 * max(1.0, abs(kf)):
            return node
    stats.bump("constants")
    return arena.make_const(kf)


# -- fractions and roots -------------------------------------------------------------


def _collect_factors(arena, node, h, atoms, state):
    """Flatten a product/quotient tree into atom -> half-exponents.

    ``h`` is twice the exponent this subtree carries; square roots shift one
    halving and stay atoms if that would leave a fractional exponent.
    """
    ops = arena.ops
    args = arena.args
    op = ops[node]
    if op == OpKind.MUL:
        for c in args[node]:
            _collect_factors(arena, c, h, atoms, state)
    elif op == OpKind.DIV:
        _collect_factors(arena, args[node][0], h, atoms, state)
        _collect_factors(arena, args[node][1], -h, atoms, state)
    elif op == OpKind.POW:
        _collect_factors(arena, args[node][0], h * int(arena.payload[args[node][1]]), atoms, state)
    elif op == OpKind.NEG and h % 2 == 0:
        if (h // 2) % 2:
            state["coef"] = -state["coef"]
        _collect_factors(arena, args[node][0], h, atoms, state)
    elif op == OpKind.SQRT and h % 2 == 0:
        state["sqrt_seen"] = True
        _collect_factors(arena, args[node][0], h // 2, atoms, state)
    elif op == OpKind.CONST and h % 2 == 0 and not (arena.payload[node] == 0.0 and h < 0):
        state["coef"] *= arena.payload[node] ** (h // 2)
    else:
        atoms[node] = atoms.get(node, 0) + h


def _power_factors(arena, atom, h):
    """Expression factors for atom^(h/2), h > 0."""
    out = []
    ipart, half = divmod(h, 2)
    if ipart == 1:
        out.append(atom)
    elif ipart >= 2:
        out.append(arena.apply(OpKind.POW, (atom, arena.make_const(float(ipart)))))
    if half:
        out.append(arena.apply(OpKind.SQRT, (atom,)))
    return out


def _rebuild_product(arena, coef, atoms):
    num: list[ExprRef] = []
    den: list[ExprRef] = []
    for atom in sorted(atoms):
        h = atoms[atom]
        if h > 0:
            num.extend(_power_factors(arena, atom, h))
        elif h < 0:
            den.extend(_power_factors(arena, atom, -h))
    negate = coef < 0
    c = -coef if negate else coef
    if c == 0.0:
        return arena.make_const(0.0)
    if c != 1.0 or not num:
        num.insert(0, arena.make_const(c))
    top = num[0] if len(num) == 1 else arena.apply(OpKind.MUL, num)
    if den:
        bottom = den[0] if len(den) == 1 else arena.apply(OpKind.MUL, den)
        top = arena.apply(OpKind.DIV, (top, bottom))
    if negate:
        top = arena.apply(OpKind.NEG, (top,))
    return top


def reduce_fractions(
    arena: ExprArena,
    node: ExprRef,
    cfg: SimplifyConfig | None = None,
    stats: SimplifyStats | None = None,
) -> ExprRef:
    """Cancel and consolidate a maximal product/quotient subtree."""
    cfg = cfg or SimplifyConfig()
    stats = stats if stats is not None else SimplifyStats()
    if arena.ops[node] not in (OpKind.MUL, OpKind.DIV):
        return node
    atoms: dict[ExprRef, int] = {}
    state = {"coef": 1.0, "sqrt_seen": False}
    _collect_factors(arena, node, 2, atoms, state)
    if not math.isfinite(state["coef"]):
        return node
    if not cfg.cancel_divisions or not cfg.sums_enabled:
        raw: dict[ExprRef, list[int]] = {}
        _collect_signed(arena, node, 2, raw)
        for atom, hs in raw.items():
            if len({h > 0 for h in hs}) <= 1:
                continue
            if not cfg.cancel_divisions:
                # strict mode: no factor may cancel against the other side
                return node
            if arena.ops[atom] in (OpKind.ADD, OpKind.SUB):
                # with sum rewriting off, sums must survive untouched
                return node
    new = _rebuild_product(arena, state["coef"], {a: h for a, h in atoms.items() if h != 0})
    if new == node or arena.complexity[new] > arena.complexity[node]:
        return node
    stats.bump("sqrt" if state["sqrt_seen"] else "fractions")
    return new


def _collect_signed(arena, node, h, raw):
    ops = arena.ops
    args = arena.args
    op = ops[node]
    if op == OpKind.MUL:
        for c in args[node]:
            _collect_signed(arena, c, h, raw)
    elif op == OpKind.DIV:
        _collect_signed(arena, args[node][0], h, raw)
        _collect_signed(arena, args[node][1], -h, raw)
    else:
        raw.setdefault(node, []).append(h)


def _reduce_sqrt(arena, node, cfg, stats) -> ExprRef:
    """sqrt of a perfect-square product loses the radical."""
    atoms: dict[ExprRef, int] = {}
    state = {"coef": 1.0, "sqrt_seen": False}
    _collect_factors(arena, arena.args[node][0], 1, atoms, state)
    if any(h <= 0 or h % 2 for h in atoms.values()):
        return node
    c = state["coef"]
    if c < 0.0 or not math.isfinite(c):
        return node
    r = math.sqrt(c)
    if r * r != c:
        return node
    if not atoms:
        stats.bump("constants")
        return arena.make_const(r)
    new = _rebuild_product(arena, r, {a: 2 * (h // 2) for a, h in atoms.items()})
    if arena.complexity[new] > arena.complexity[node]:
        return node
    stats.bump("sqrt")
    return new


# -- summand elimination ---------------------------------------------------------------


def _flatten_sum(arena, node, coef, terms, const_acc):
    ops = arena.ops
    args = arena.args
    op = ops[node]
    if op == OpKind.ADD:
        for c in args[node]:
            _flatten_sum(arena, c, coef, terms, const_acc)
    elif op == OpKind.SUB:
        _flatten_sum(arena, args[node][0], coef, terms, const_acc)
        _flatten_sum(arena, args[node][1], -coef, terms, const_acc)
    elif op == OpKind.NEG:
        _flatten_sum(arena, args[node][0], -coef, terms, const_acc)
    elif op == OpKind.CONST:
        const_acc[0] += coef * arena.payload[node]
    elif op == OpKind.MUL:
        c = coef
        rest = []
        for f in args[node]:
            if ops[f] == OpKind.CONST:
                c *= arena.payload[f]
            else:
                rest.append(f)
        if not rest:
            const_acc[0] += c
        elif len(rest) == 1 and ops[rest[0]] == OpKind.ADD:
            # constant times sum expands so multiples can collect
            _flatten_sum(arena, rest[0], c, terms, const_acc)
        else:
            core = rest[0] if len(rest) == 1 else arena.apply(OpKind.MUL, rest)
            terms.append((c, core))
    else:
        terms.append((coef, node))


def eliminate_summands(
    arena: ExprArena,
    node: ExprRef,
    cfg: SimplifyConfig | None = None,
    stats: SimplifyStats | None = None,
) -> ExprRef:
    """Collect like terms of a sum by algebraic hash; drop zero coefficients."""
    cfg = cfg or SimplifyConfig()
    stats = stats if stats is not None else SimplifyStats()
    if arena.ops[node] not in (OpKind.ADD, OpKind.SUB):
        return node
    terms: list[tuple[float, ExprRef]] = []
    const_acc = [0.0]
    _flatten_sum(arena, node, 1.0, terms, const_acc)
    collected: dict[int, list] = {}
    order: list[int] = []
    for c, ref in terms:
        ah = arena.alg_hash[ref]
        slot = collected.get(ah)
        if slot is None:
            collected[ah] = [c, ref]
            order.append(ah)
        else:
            slot[0] += c
    parts: list[ExprRef] = []
    for ah in order:
        c, ref = collected[ah]
        if c == 0.0:
            continue
        if c == 1.0:
            parts.append(ref)
        elif c == -1.0:
            parts.append(arena.apply(OpKind.NEG, (ref,)))
        else:
            parts.append(arena.apply(OpKind.MUL, (arena.make_const(c), ref)))
    if const_acc[0] != 0.0 or not parts:
        parts.append(arena.make_const(const_acc[0]))
    new = parts[0] if len(parts) == 1 else arena.apply(OpKind.ADD, parts)
    if new == node or arena.complexity[new] > arena.complexity[node]:
        return node
    stats.bump("summands")
    return new


# -- factorization -----------------------------------------------------------------------


def _term_to_factors(arena, coef: float, ref: ExprRef) -> tuple[float, Counter]:
    ops = arena.ops
    args = arena.args
    factors: Counter = Counter()
    stack = [ref]
    while stack:
        r = stack.pop()
        op = ops[r]
        if op == OpKind.MUL:
            stack.extend(args[r])
        elif op == OpKind.POW:
            factors[args[r][0]] += int(arena.payload[args[r][1]])
        elif op == OpKind.NEG:
            coef = -coef
            stack.append(args[r][0])
        elif op == OpKind.CONST:
            coef *= arena.payload[r]
        else:
            factors[r] += 1
    return coef, factors


def _rebuild_term(arena, coef: float, factors: Counter) -> ExprRef:
    refs: list[ExprRef] = []
    for atom in sorted(factors):
        m = factors[atom]
        if m == 1:
            refs.append(atom)
        else:
            refs.append(arena.apply(OpKind.POW, (atom, arena.make_const(float(m)))))
    negate = coef < 0
    c = -coef if negate else coef
    if c != 1.0 or not refs:
        refs.insert(0, arena.make_const(c))
    out = refs[0] if len(refs) == 1 else arena.apply(OpKind.MUL, refs)
    if negate:
        out = arena.apply(OpKind.NEG, (out,))
    return out


def _factor_weight(arena, cand: Counter) -> int:
    return sum((arena.complexity[a] + 1) * m for a, m in cand.items())


def _candidate_order_key(arena, cand: Counter):
    sig = tuple(sorted((arena.struct_hash[a], arena.alg_hash[a], a, m) for a, m in cand.items()))
    return sig


def _factor_sum(arena, terms: list[tuple[float, Counter]]) -> ExprRef:
    """Greedy factor extraction over a flattened sum of products."""
    terms = list(terms)
    while len(terms) >= 2:
        candidates: dict[tuple, Counter] = {}
        for i in range(len(terms)):
            fi = terms[i][1]
            if not fi:
                continue
            for j in range(i + 1, len(terms)):
                inter = fi & terms[j][1]
                if inter:
                    candidates.setdefault(_candidate_order_key(arena, inter), inter)
        best = None
        best_key = None
        for okey, cand in candidates.items():
            coverage = sum(1 for _, f in terms if all(f[a] >= m for a, m in cand.items()))
            if coverage < 2:
                continue
            key = (-_factor_weight(arena, cand), -coverage, okey)
            if best_key is None or key < best_key:
                best_key = key
                best = cand
        if best is None:
            break
        covered = [(c, f) for c, f in terms if all(f[a] >= m for a, m in best.items())]
        rest = [(c, f) for c, f in terms if not all(f[a] >= m for a, m in best.items())]
        inner = _factor_sum(arena, [(c, f - best) for c, f in covered])
        group = Counter(best)
        group[inner] += 1
        terms = rest + [(1.0, group)]
    parts = [_rebuild_term(arena, c, f) for c, f in terms]
    if not parts:
        return arena.make_const(0.0)
    return parts[0] if len(parts) == 1 else arena.apply(OpKind.ADD, parts)


def factorize(
    arena: ExprArena,
    node: ExprRef,
    cfg: SimplifyConfig | None = None,
    stats: SimplifyStats | None = None,
) -> ExprRef:
    """Factor the heaviest shared factor sets out of a sum of products."""
    cfg = cfg or SimplifyConfig()
    stats = stats if stats is not None else SimplifyStats()
    if arena.ops[node] != OpKind.ADD:
        return node
    terms: list[tuple[float, ExprRef]] = []
    const_acc = [0.0]
    _flatten_sum(arena, node, 1.0, terms, const_acc)
    factored = [_term_to_factors(arena, c, r) for c, r in terms]
    if const_acc[0] != 0.0:
        factored.append((const_acc[0], Counter()))
    new = _factor_sum(arena, factored)
    if new == node or arena.complexity[new] > arena.complexity[node]:
        return node
    stats.bump("factorize")
    return new


import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegen.expr import (
    ExprArena,
    OpKind,
    Sym,
    check_hash_collisions,
    complexity,
    eval_numeric,
    eval_tree,
    structurally_equal,
    sym_sqrt,
    to_str,
    traverse,
)


def build_h(arena):
    """x*x with x = a*(a+b)."""
    a = arena.make_var(0)
    b = arena.make_var(1)
    s = arena.apply(OpKind.ADD, (a, b))
    x = arena.apply(OpKind.MUL, (a, s))
    return arena.apply(OpKind.MUL, (x, x)), a, b, s, x


# -- consing and hashing -------------------------------------------------------


def test_make_var_is_consed():
    arena = ExprArena()
    assert arena.make_var(0) == arena.make_var(0)


def test_var_struct_hash_is_payload_independent():
    arena = ExprArena()
    assert arena.struct_hash[arena.make_var(0)] == arena.struct_hash[arena.make_var(7)]


def test_var_alg_hash_depends_on_id():
    arena = ExprArena()
    assert arena.alg_hash[arena.make_var(0)] != arena.alg_hash[arena.make_var(7)]


def test_small_integer_const_hashes_to_its_value():
    arena = ExprArena()
    assert arena.alg_hash[arena.make_const(2)] == 2
    assert arena.alg_hash[arena.make_const(-1)] == (1 << 64) - 1


def test_const_struct_hash_is_shared():
    arena = ExprArena()
    assert arena.struct_hash[arena.make_const(2)] == arena.struct_hash[arena.make_const(3.1)]


def test_const_consing_is_bit_exact():
    arena = ExprArena()
    assert arena.make_const(2.0) == arena.make_const(2)


def test_non_finite_const_rejected():
    arena = ExprArena()
    with pytest.raises(ValueError):
        arena.make_const(float("inf"))
    with pytest.raises(ValueError):
        arena.make_const(float("nan"))


def test_commutative_children_canonicalized():
    arena = ExprArena()
    a, b = arena.make_var(0), arena.make_var(1)
    assert arena.apply(OpKind.ADD, (a, b)) == arena.apply(OpKind.ADD, (b, a))


@given(st.permutations(list(range(4))))
def test_add_canonical_under_any_permutation(perm):
    arena = ExprArena()
    cs = [arena.make_var(i) for i in range(4)]
    base = arena.apply(OpKind.ADD, cs)
    assert arena.apply(OpKind.ADD, [cs[i] for i in perm]) == base


def test_algebraic_hash_detects_ring_equivalence():
    # 2*(x+y)*(z+w) versus 2xz + (2z+2w)y + xw + wx
    arena = ExprArena()
    x, y, z, w = (arena.var(i) for i in range(4))
    two = arena.const(2)
    lhs = two * (x + y) * (z + w)
    rhs = two * x * z + (two * z + two * w) * y + x * w + w * x
    assert arena.alg_hash[lhs.ref] == arena.alg_hash[rhs.ref]
    assert arena.struct_hash[lhs.ref] != arena.struct_hash[rhs.ref]


def test_dag_shares_repeated_subtrees():
    arena = ExprArena()
    _, a, b, s, x = build_h(arena)
    # leaf a and the subexpression x appear once each in the arena
    assert arena.ops.count(int(OpKind.VAR)) == 2
    assert sum(1 for op, cs in zip(arena.ops, arena.args) if op == OpKind.MUL and x in cs) == 1


def test_arity_mismatch_is_an_error():
    arena = ExprArena()
    a = arena.make_var(0)
    with pytest.raises(ValueError):
        arena.apply(OpKind.SUB, (a,))
    with pytest.raises(ValueError):
        arena.apply(OpKind.ADD, (a,))


def test_pow_requires_constant_integer_exponent():
    arena = ExprArena()
    a, b = arena.make_var(0), arena.make_var(1)
    with pytest.raises(ValueError):
        arena.apply(OpKind.POW, (a, b))
    with pytest.raises(ValueError):
        arena.apply(OpKind.POW, (a, arena.make_const(1.5)))
    arena.apply(OpKind.POW, (a, arena.make_const(2)))


def test_pow_alg_hash_matches_repeated_product():
    arena = ExprArena()
    x = arena.make_var(0)
    sq = arena.apply(OpKind.POW, (x, arena.make_const(2)))
    mm = arena.apply(OpKind.MUL, (x, x))
    assert arena.alg_hash[sq] == arena.alg_hash[mm]


def test_hashes_are_run_independent():
    a1, a2 = ExprArena(), ExprArena()
    r1, *_ = build_h(a1)
    r2, *_ = build_h(a2)
    assert a1.struct_hash[r1] == a2.struct_hash[r2]
    assert a1.alg_hash[r1] == a2.alg_hash[r2]


# -- select ---------------------------------------------------------------------


def test_select_semantics():
    arena = ExprArena()
    c, a, b = arena.make_var(0), arena.make_var(1), arena.make_var(2)
    s = arena.select(c, a, b)
    assert eval_numeric(arena, [s], {0: -1.0, 1: 5.0, 2: 9.0}) == [5.0]
    assert eval_numeric(arena, [s], {0: 0.0, 1: 5.0, 2: 9.0}) == [9.0]


def test_select_identical_branches_not_folded():
    arena = ExprArena()
    c, a = arena.make_var(0), arena.make_var(1)
    s = arena.select(c, a, a)
    assert arena.op(s) == OpKind.SELECT


# -- complexity -----------------------------------------------------------------


def test_leaf_complexity_zero():
    arena = ExprArena()
    assert complexity(arena, arena.make_var(0)) == 0
    assert complexity(arena, arena.make_const(3.0)) == 0


def test_complexity_small_examples():
    arena = ExprArena()
    a, b, c = (arena.var(i) for i in range(3))
    assert complexity(arena, (a * b + c).ref) == 2
    assert complexity(arena, sym_sqrt(a * a + b * b).ref) == 11


def test_nary_complexity_counts_combining_steps():
    arena = ExprArena()
    cs = [arena.make_var(i) for i in range(5)]
    assert complexity(arena, arena.apply(OpKind.ADD, cs)) == 4


# -- evaluation -------------------------------------------------------------------


def test_eval_simple():
    arena = ExprArena()
    a, b = arena.var(0), arena.var(1)
    assert eval_numeric(arena, [(a + b).ref], {0: 1.0, 1: 2.0}) == [3.0]


def test_eval_h_example():
    arena = ExprArena()
    root, *_ = build_h(arena)
    assert eval_numeric(arena, [root], {0: 2.0, 1: 1.0}) == [36.0]


def test_eval_missing_binding_names_variable():
    arena = ExprArena()
    a, b = arena.make_var(0), arena.make_var(7)
    e = arena.apply(OpKind.ADD, (a, b))
    with pytest.raises(ValueError, match="variable 7"):
        eval_numeric(arena, [e], {0: 1.0})


def test_eval_matches_tree_eval_bitwise():
    arena = ExprArena()
    root, *_ = build_h(arena)
    q = sym_sqrt(Sym(arena, root) + arena.var(0) / arena.var(1))
    bindings = {0: 1.7, 1: 0.3}
    assert eval_numeric(arena, [q.ref], bindings)[0] == eval_tree(arena, q.ref, bindings)


# -- traversal ---------------------------------------------------------------------


def test_postorder_visits_dag_nodes_once():
    arena = ExprArena()
    root, *_ = build_h(arena)
    visited = []
    n = traverse(arena, [root], order="post", visit=visited.append)
    assert n == 5
    assert len(set(visited)) == 5
    # children come before parents in post order
    assert visited.index(root) == len(visited) - 1


def test_shared_subtree_visited_once_across_roots():
    arena = ExprArena()
    a, b = arena.make_var(0), arena.make_var(1)
    s = arena.apply(OpKind.ADD, (a, b))
    r1 = arena.apply(OpKind.MUL, (a, s))
    r2 = arena.apply(OpKind.MUL, (b, s))
    seen = []
    traverse(arena, [r1, r2], visit=seen.append)
    assert seen.count(s) == 1


def test_preorder_prune_stops_descent():
    arena = ExprArena()
    root, a, b, s, x = build_h(arena)
    seen = []
    traverse(arena, [root], order="pre", visit=seen.append, prune=lambda r: r == x)
    assert x in seen and s not in seen and a not in seen


def test_tree_visit_count_vs_dag_count():
    arena = ExprArena()
    root, *_ = build_h(arena)
    assert traverse(arena, [root]) == 5
    # expanded tree of h: root + two copies of the 5-node x subtree
    assert traverse(arena, [root], skip_visited=False) == 11


# -- collisions ---------------------------------------------------------------------


def test_empty_arena_reports_clean():
    assert check_hash_collisions(ExprArena()).clean


def test_full_width_hashes_have_no_collisions_on_moderate_arena():
    arena = ExprArena()
    refs = [arena.make_var(i) for i in range(20)]
    import itertools

    for i, j in itertools.combinations(range(20), 2):
        refs.append(arena.apply(OpKind.MUL, (refs[i], refs[j])))
        refs.append(arena.apply(OpKind.ADD, (refs[i], refs[j])))
    assert check_hash_collisions(arena).clean


def test_weakened_hashes_collide():
    arena = ExprArena(hash_bits=8)
    a, b = arena.make_var(0), arena.make_var(1)
    prev = arena.apply(OpKind.ADD, (a, b))
    for _ in range(300):  # 300 distinct structures cannot fit in 256 hash values
        prev = arena.apply(OpKind.ADD, (prev, arena.apply(OpKind.MUL, (prev, b))))
    report = check_hash_collisions(arena)
    assert len(report.struct_collisions) >= 1


def test_structurally_equal_ignores_leaf_payloads():
    arena = ExprArena()
    a, b, c, d = (arena.make_var(i) for i in range(4))
    e1 = arena.apply(OpKind.MUL, (a, arena.apply(OpKind.ADD, (a, b))))
    e2 = arena.apply(OpKind.MUL, (c, arena.apply(OpKind.ADD, (c, d))))
    assert structurally_equal(arena, e1, e2)
    assert arena.struct_hash[e1] == arena.struct_hash[e2]
    e3 = arena.apply(OpKind.ADD, (a, arena.make_const(1.0)))
    assert not structurally_equal(arena, e1, e3)


@settings(max_examples=50)
@given(st.integers(0, 2**32), st.integers(0, 5))
def test_struct_hash_sound_under_leaf_rerandomization(seed, depth):
    import numpy as np

    rng = np.random.default_rng(seed)
    shape = _random_shape(rng, depth)
    a1, a2 = ExprArena(), ExprArena()
    r1 = _instantiate(a1, shape, rng.integers(0, 50, 64))
    r2 = _instantiate(a2, shape, rng.integers(0, 50, 64))
    assert a1.struct_hash[r1] == a2.struct_hash[r2]


def _random_shape(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        return ("leaf", int(rng.integers(0, 2)))
    op = [OpKind.ADD, OpKind.MUL, OpKind.SUB, OpKind.DIV, OpKind.SQRT][rng.integers(0, 5)]
    if op in (OpKind.ADD, OpKind.MUL, OpKind.SUB, OpKind.DIV):
        return (op, _random_shape(rng, depth - 1), _random_shape(rng, depth - 1))
    return (op, _random_shape(rng, depth - 1))


_COUNTER = [0]


def _instantiate(arena, shape, ids):
    if shape[0] == "leaf":
        _COUNTER[0] += 1
        if shape[1] == 0:
            return arena.make_var(int(ids[_COUNTER[0] % len(ids)]))
        return arena.make_const(float(ids[_COUNTER[0] % len(ids)]) + 0.5)
    op = shape[0]
    kids = [_instantiate(arena, s, ids) for s in shape[1:]]
    return arena.apply(op, kids, sort=False)


# -- alg consing mode ------------------------------------------------------------


def test_alg_consing_reuses_equivalent_expressions():
    arena = ExprArena(alg_consing=True)
    x, y = arena.var(0), arena.var(1)
    two = arena.const(2)
    e1 = two * (x + y)
    e2 = two * x + two * y
    assert e1.ref == e2.ref


# -- Sym wrapper --------------------------------------------------------------------


def test_sym_pow_routing():
    arena = ExprArena()
    x = arena.var(0)
    assert arena.op((x**2).ref) == OpKind.POW
    assert (x**1).ref == x.ref
    assert arena.op((x**0.5).ref) == OpKind.EXP
    v = eval_numeric(arena, [(x**-2).ref], {0: 2.0})[0]
    assert v == pytest.approx(0.25)


def test_to_str_round_readability():
    arena = ExprArena()
    a, b = arena.make_var(0), arena.make_var(1)
    s = arena.apply(OpKind.ADD, (a, b), sort=False)
    m = arena.apply(OpKind.MUL, (a, s), sort=False)
    assert to_str(arena, m) == "v0*(v0 + v1)"


def test_stats_shape():
    arena = ExprArena()
    build_h(arena)
    s = arena.stats()
    assert s["nodes"] == 5
    assert s["per_op"]["VAR"] == 2

# Tracing arithmetic into an expression DAG.
#
# Running ordinary-looking code with Sym scalars records every operation in
# an arena. Identical subexpressions are stored once (hash consing), and each
# node carries a structural hash (same for trees differing only in leaves)
# and an algebraic hash (same for expressions that provably evaluate alike).

from sparsegen import ExprArena, eval_numeric, sym_sqrt, to_str, traverse

arena = ExprArena()
a, b = arena.var(0), arena.var(1)

# the classic shared-subexpression example: x appears twice, stored once
x = a * (a + b)
h = x * x
print("h(a, b)      =", to_str(arena, h.ref, {0: "a", 1: "b"}))
print("arena nodes  =", len(arena), "(a tree would need 11)")

# a memoized post-order walk visits each unique node exactly once
visits = traverse(arena, [h.ref], order="post")
print("DAG visits   =", visits)

# evaluation is the ground-truth oracle every later stage is compared against
print("h(2, 1)      =", eval_numeric(arena, [h.ref], {0: 2.0, 1: 1.0})[0])

# structural hashes ignore leaf payloads ...
c, d = arena.var(7), arena.var(8)
x2 = c * (c + d)
print("\nsame shape, different leaves -> equal structural hash:",
      arena.struct_hash[x.ref] == arena.struct_hash[x2.ref])

# ... while algebraic hashes identify rewritten-but-equal expressions
lhs = 2.0 * (a + b) * (c + d)
rhs = 2.0 * a * c + (2.0 * c + 2.0 * d) * b + a * d + d * a
print("expanded form keeps the algebraic hash:",
      arena.alg_hash[lhs.ref] == arena.alg_hash[rhs.ref])

# square roots and friends trace the same way
r = sym_sqrt(a * a + b * b)
print("\ncomplexity of sqrt(a*a + b*b) =", arena.complexity[r.ref], "cost units")

# Reverse-mode differentiation producing expressions, not numbers.
#
# Derivatives join the same arena as the primal computation, so shared
# subexpressions (the stretched length below, for instance) exist once no
# matter how many partials mention them. Finite differences of the evaluated
# energy confirm every entry.

import numpy as np

from sparsegen import ExprArena, eval_numeric, gradient, hessian, sym_sqrt, to_str

arena = ExprArena()
p1 = [arena.var(0), arena.var(1)]
p2 = [arena.var(2), arena.var(3)]


def stretch(p, q, rest):
    d = [b - a for a, b in zip(p, q)]
    return (sym_sqrt(d[0] * d[0] + d[1] * d[1]) - rest) ** 2


zero = [arena.const(0.0), arena.const(0.0)]
energy = stretch(zero, p1, 1.0) + stretch(p1, p2, 1.0)
primal_nodes = len(arena)

g = gradient(arena, energy.ref, [0, 1, 2, 3])
h = hessian(arena, energy.ref, [0, 1, 2, 3])
print(f"primal {primal_nodes} nodes; +gradient+second derivatives -> {len(arena)} nodes")
print("gradient entry d/dv0:", to_str(arena, g.get(0))[:80], "...")

# mirrored second-derivative entries are literally the same node
print("H[0,2] is H[2,0]:", h[(0, 2)] == h[(2, 0)])

point = {0: 1.1, 1: 0.2, 2: 2.05, 3: -0.1}


def f(bind):
    return eval_numeric(arena, [energy.ref], bind)[0]


print("\n  var   symbolic        finite difference")
for v in range(4):
    step = 1e-5
    hi, lo = dict(point), dict(point)
    hi[v] += step
    lo[v] -= step
    fd = (f(hi) - f(lo)) / (2 * step)
    sym = eval_numeric(arena, [g.get(v)], point)[0]
    print(f"   v{v}   {sym:+.9f}   {fd:+.9f}")

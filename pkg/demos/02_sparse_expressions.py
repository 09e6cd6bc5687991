# Sparse matrices over symbolic scalars.
#
# A matrix input gets one fresh variable per stored entry; products, sums and
# transposes then run entry by entry, building expressions whose sparsity
# pattern is exact. Structured patterns produce only a handful of distinct
# expression shapes, which is what later lets a few kernels cover thousands
# of entries.

from collections import Counter

import numpy as np

from sparsegen import (
    ExprArena,
    OpKind,
    eval_numeric,
    grid_laplacian_pattern,
    sp_mul,
    sp_transpose,
    symbolic_matrix,
    to_str,
)

arena = ExprArena()
pattern = grid_laplacian_pattern(5, 5)
L, _ = symbolic_matrix(arena, 25, 25, pattern)
print(f"grid operator: 25x25, {L.nnz} stored entries, {len(arena)} nodes")

M = sp_mul(sp_transpose(L), L)
print(f"L^T L: {M.nnz} entries, {len(arena)} nodes after the product")

# every entry is an inner product; its length depends only on how the two
# column patterns overlap, so the lengths bunch into a few classes
lengths = Counter(
    len(arena.args[v]) if arena.op(v) == OpKind.ADD else 1
    for v in dict.fromkeys(M.values)
)
print("inner-product lengths -> entry counts:", dict(sorted(lengths.items())))

# one sample entry, readable
sample = M.entry(12, 12)
print("\nentry (12,12) =", to_str(arena, sample)[:100], "...")

# the numeric oracle agrees with an independent CSR implementation
import scipy.sparse as sps

rng = np.random.default_rng(0)
vals = rng.uniform(0.5, 2.0, arena.var_count)
Ln = sps.csr_matrix((vals[: L.nnz], np.array(L.col_idx), np.array(L.row_ptr)), shape=(25, 25))
ref = (Ln.T @ Ln).toarray()
sym = np.zeros((25, 25))
numbers = eval_numeric(arena, M.values, list(vals))
for i in range(25):
    cols, _ = M.row(i)
    for k, j in enumerate(cols):
        sym[i, j] = numbers[M.row_ptr[i] + k]
print("matches scipy to 1e-13:", np.allclose(sym, ref, rtol=1e-13))

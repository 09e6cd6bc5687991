import numpy as np
import pytest
import scipy.sparse as sps

from sparsegen.expr import ExprArena, OpKind, eval_numeric
from sparsegen.sparse import (
    GridMesh,
    MeshLaplacianSpec,
    build_operator,
    from_triplets,
    grid_laplacian_pattern,
    random_pattern,
    read_matrix_market_pattern,
    sp_add,
    sp_mul,
    sp_scale,
    sp_transpose,
    symbolic_matrix,
    write_matrix_market_pattern,
)


def _to_scipy(mat, vals):
    """Numeric CSR with the same pattern, entries taken from vals per stored slot."""
    return sps.csr_matrix(
        (vals, np.array(mat.col_idx), np.array(mat.row_ptr)), shape=(mat.nrows, mat.ncols)
    )


def _numeric(arena, mat, bindings):
    ev = eval_numeric(arena, mat.values, bindings)
    return _to_scipy(mat, np.array(ev))


def _random_inputs(arena, seed=0):
    rng = np.random.default_rng(seed)
    return {i: v for i, v in enumerate(rng.uniform(0.5, 2.0, arena.var_count))}


# -- assembly -------------------------------------------------------------------


def test_duplicate_triplets_accumulate():
    arena = ExprArena()
    a, b = arena.make_var(0), arena.make_var(1)
    m = from_triplets(arena, 1, 1, [(0, 0, a), (0, 0, b)])
    assert m.nnz == 1
    assert m.entry(0, 0) == arena.apply(OpKind.ADD, (a, b))


def test_empty_triplets_give_empty_pattern():
    arena = ExprArena()
    m = from_triplets(arena, 3, 4, [])
    assert m.nnz == 0 and m.row_ptr == [0, 0, 0, 0]


def test_triplet_out_of_range_rejected():
    arena = ExprArena()
    with pytest.raises(ValueError):
        from_triplets(arena, 2, 2, [(2, 0, arena.make_var(0))])


def test_two_face_assembly_gives_two_term_interior_edge():
    # 2x2 grid has one interior (diagonal) edge shared by both faces
    arena = ExprArena()
    spec = MeshLaplacianSpec(builder="grid", w=2, h=2, weighting="cotan")
    lap = build_operator(arena, spec)
    # the diagonal edge (0, 3) belongs to both faces
    e = lap.entry(0, 3)
    assert arena.op(e) == OpKind.ADD and len(arena.children(e)) == 2
    # boundary edge (0, 1) belongs to one face only: a single negated weight
    e01 = lap.entry(0, 1)
    assert arena.op(e01) == OpKind.NEG


# -- products -------------------------------------------------------------------


def test_dense_2x2_product_entry():
    arena = ExprArena()
    pat = [(0, 0), (0, 1), (1, 0), (1, 1)]
    A, nxt = symbolic_matrix(arena, 2, 2, pat)
    B, _ = symbolic_matrix(arena, 2, 2, pat, first_var=nxt)
    C = sp_mul(A, B)
    a00, a01 = A.entry(0, 0), A.entry(0, 1)
    b00, b10 = B.entry(0, 0), B.entry(1, 0)
    expected = arena.apply(
        OpKind.ADD,
        (arena.apply(OpKind.MUL, (a00, b00)), arena.apply(OpKind.MUL, (a01, b10))),
    )
    assert C.entry(0, 0) == expected


def test_identity_pattern_product_wraps_with_one():
    arena = ExprArena()
    I, nxt = symbolic_matrix(arena, 3, 3, [(i, i) for i in range(3)])
    B, _ = symbolic_matrix(arena, 3, 3, [(i, j) for i in range(3) for j in range(3)],
                           first_var=nxt)
    C = sp_mul(I, B)
    assert C.pattern() == B.pattern()
    # entries are single products of the diagonal entry and the B entry
    assert all(arena.op(v) == OpKind.MUL for v in C.values)


def test_product_pattern_matches_boolean_oracle():
    arena = ExprArena()
    pat_a = random_pattern(30, 4, seed=1)
    pat_b = random_pattern(30, 4, seed=2)
    A, nxt = symbolic_matrix(arena, 30, 30, pat_a)
    B, _ = symbolic_matrix(arena, 30, 30, pat_b, first_var=nxt)
    C = sp_mul(A, B)
    Ab = sps.csr_matrix((np.ones(len(pat_a)), np.array(pat_a).T), shape=(30, 30))
    Bb = sps.csr_matrix((np.ones(len(pat_b)), np.array(pat_b).T), shape=(30, 30))
    Cb = (Ab @ Bb).tocsr()
    Cb.sort_indices()
    assert C.pattern() == sorted(zip(*Cb.nonzero()))


def test_product_numeric_fidelity_vs_scipy():
    arena = ExprArena()
    A, nxt = symbolic_matrix(arena, 25, 25, random_pattern(25, 5, seed=3))
    B, _ = symbolic_matrix(arena, 25, 25, random_pattern(25, 5, seed=4), first_var=nxt)
    C = sp_mul(A, B)
    bind = _random_inputs(arena)
    Cn = (_numeric(arena, A, bind) @ _numeric(arena, B, bind)).toarray()
    Cs = _numeric(arena, C, bind).toarray()
    assert np.allclose(Cs, Cn, rtol=1e-13, atol=0)


def test_transpose_is_involution_preserving_refs():
    arena = ExprArena()
    A, _ = symbolic_matrix(arena, 10, 6, [(i, (i * 3) % 6) for i in range(10)])
    T2 = sp_transpose(sp_transpose(A))
    assert T2.pattern() == A.pattern()
    assert T2.values == A.values


def test_add_merges_and_sums_overlap():
    arena = ExprArena()
    A, _ = symbolic_matrix(arena, 2, 2, [(0, 0), (1, 1)])
    S = sp_add(A, A)
    a = A.entry(0, 0)
    assert S.entry(0, 0) == arena.apply(OpKind.ADD, (a, a))


def test_scale_wraps_in_product():
    arena = ExprArena()
    A, nxt = symbolic_matrix(arena, 2, 2, [(0, 1)])
    s = arena.make_var(nxt)
    S = sp_scale(A, s)
    assert arena.op(S.entry(0, 1)) == OpKind.MUL


def test_dimension_mismatch_errors():
    arena = ExprArena()
    A, _ = symbolic_matrix(arena, 2, 3, [(0, 0)])
    B, _ = symbolic_matrix(arena, 2, 3, [(0, 0)])
    with pytest.raises(ValueError):
        sp_mul(A, B)
    C, _ = symbolic_matrix(arena, 3, 2, [(0, 0)])
    with pytest.raises(ValueError):
        sp_add(A, C)


def test_compound_expression_shares_scalar_leaves():
    # (alpha*A + B)^T (beta*B^T + C) references alpha and beta as shared leaves
    arena = ExprArena()
    n = 12
    A, nxt = symbolic_matrix(arena, n, n, random_pattern(n, 3, seed=5))
    B, nxt = symbolic_matrix(arena, n, n, random_pattern(n, 3, seed=6), first_var=nxt)
    C, nxt = symbolic_matrix(arena, n, n, random_pattern(n, 3, seed=7), first_var=nxt)
    alpha, beta = arena.make_var(nxt), arena.make_var(nxt + 1)
    out = sp_mul(sp_transpose(sp_add(sp_scale(A, alpha), B)),
                 sp_add(sp_scale(sp_transpose(B), beta), C))
    bind = _random_inputs(arena, seed=8)
    An, Bn, Cn = (_numeric(arena, M, bind) for M in (A, B, C))
    ref = ((bind[arena.payload[alpha]] * An + Bn).T
           @ (bind[arena.payload[beta]] * Bn.T + Cn)).toarray()
    got = _numeric(arena, out, bind).toarray()
    assert np.allclose(got, ref, rtol=1e-13, atol=1e-300)


def test_lt_l_term_counts_take_few_values():
    arena = ExprArena()
    pat = grid_laplacian_pattern(5, 5)
    L, _ = symbolic_matrix(arena, 25, 25, pat)
    M = sp_mul(sp_transpose(L), L)
    lengths = set()
    for v in M.values:
        lengths.add(len(arena.children(v)) if arena.op(v) == OpKind.ADD else 1)
    assert 1 < len(lengths) <= 8


def test_consing_keeps_product_trace_compact():
    arena = ExprArena()
    pat = grid_laplacian_pattern(6, 6)
    L, _ = symbolic_matrix(arena, 36, 36, pat)
    before = len(arena)
    L2 = sp_mul(L, L)
    terms = sum(len(arena.children(v)) if arena.op(v) == OpKind.ADD else 1 for v in L2.values)
    # at most one Mul per term plus one Add per entry
    assert len(arena) - before <= terms + L2.nnz


# -- operators -------------------------------------------------------------------


def test_grid_uniform_interior_row():
    arena = ExprArena()
    lap = build_operator(arena, MeshLaplacianSpec(builder="grid", w=3, h=3))
    cols, _ = lap.row(4)  # center vertex of a 3x3 grid
    assert list(cols) == [1, 3, 4, 5, 7]


def test_random_spec_has_exact_nnz():
    arena = ExprArena()
    spec = MeshLaplacianSpec(builder="random", n=100, nnz_per_row=6, seed=11)
    mat = build_operator(arena, spec)
    assert mat.nnz == 600


def test_degenerate_grid_rejected():
    arena = ExprArena()
    with pytest.raises(ValueError):
        build_operator(arena, MeshLaplacianSpec(builder="grid", w=1, h=5))


def test_cotan_operator_matches_direct_formula():
    # oracle: evaluate the same per-face formula numerically with plain floats
    arena = ExprArena()
    spec = MeshLaplacianSpec(builder="grid", w=3, h=2, weighting="cotan")
    lap, mass = build_operator(arena, spec, with_mass=True)
    mesh = GridMesh(3, 2)
    rng = np.random.default_rng(21)
    coords = rng.uniform(0.5, 2.0, (mesh.nverts, 3))
    bind = {3 * v + c: coords[v, c] for v in range(mesh.nverts) for c in range(3)}

    n = mesh.nverts
    Lref = np.zeros((n, n))
    Mref = np.zeros((n, n))
    for i, j, k in mesh.faces:
        pi, pj, pk = coords[i], coords[j], coords[k]
        u = pj - pi
        v = pk - pi
        dbl_area = np.sqrt((u @ u) * (v @ v) - (u @ v) ** 2)
        ws = {
            (j, k): 0.5 * ((pi - pj) @ (pi - pk)) / dbl_area,
            (k, i): 0.5 * ((pj - pk) @ (pj - pi)) / dbl_area,
            (i, j): 0.5 * ((pk - pi) @ (pk - pj)) / dbl_area,
        }
        for (a, b), w in ws.items():
            Lref[a, b] -= w
            Lref[b, a] -= w
            Lref[a, a] += w
            Lref[b, b] += w
        for v_ in (i, j, k):
            Mref[v_, v_] += dbl_area / 6.0
    got_l = _numeric(arena, lap, bind).toarray()
    got_m = _numeric(arena, mass, bind).toarray()
    assert np.allclose(got_l, Lref, rtol=1e-12, atol=1e-14)
    assert np.allclose(got_m, Mref, rtol=1e-12, atol=1e-14)


def test_cotan_offdiagonal_has_div_and_sum_structure():
    arena = ExprArena()
    lap = build_operator(arena, MeshLaplacianSpec(builder="grid", w=2, h=2, weighting="cotan"))
    interior = lap.entry(0, 3)
    ops = set()
    stack = [interior]
    seen = set()
    while stack:
        r = stack.pop()
        if r in seen:
            continue
        seen.add(r)
        ops.add(arena.op(r))
        stack.extend(arena.children(r))
    assert OpKind.DIV in ops and OpKind.ADD in ops and OpKind.SQRT in ops


# -- matrix market ----------------------------------------------------------------


def test_matrix_market_round_trip(tmp_path):
    path = str(tmp_path / "pat.mtx")
    pattern = random_pattern(12, 3, seed=13)
    write_matrix_market_pattern(path, 12, 12, pattern)
    nrows, ncols, got = read_matrix_market_pattern(path)
    assert (nrows, ncols) == (12, 12)
    assert got == sorted(pattern)


def test_matrix_market_real_general(tmp_path):
    path = tmp_path / "m.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n%comment\n2 2 2\n1 1 3.5\n2 1 -1.0\n"
    )
    nrows, ncols, cells = read_matrix_market_pattern(str(path))
    assert cells == [(0, 0), (1, 0)]


def test_matrix_market_rejects_garbage(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("hello\n")
    with pytest.raises(ValueError):
        read_matrix_market_pattern(str(path))

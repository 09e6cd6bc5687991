"""Sparse matrices over symbolic scalars.

Matrices are CSR with one expression reference per stored entry.  The
sparsity pattern is part of the value: products and sums compute the exact
structural pattern (no numeric pruning), and duplicate assembly entries are
combined with symbolic sums, so the traced expressions mirror what a numeric
CSR implementation would compute entry by entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .expr import ExprArena, ExprRef, OpKind, Sym, sym_sqrt


@dataclass(frozen=True)
class Triplet:
    row: int
    col: int
    value: ExprRef


class SymbolicSparseMatrix:
    """CSR matrix whose stored values are arena references."""

    def __init__(self, arena, nrows, ncols, row_ptr, col_idx, values):
        self.arena = arena
        self.nrows = nrows
        self.ncols = ncols
        self.row_ptr = row_ptr
        self.col_idx = col_idx
        self.values = values

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row(self, i: int) -> tuple[Sequence[int], Sequence[ExprRef]]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def entry(self, i: int, j: int) -> ExprRef | None:
        cols, vals = self.row(i)
        for c, v in zip(cols, vals):
            if c == j:
                return v
        return None

    def pattern(self) -> list[tuple[int, int]]:
        out = []
        for i in range(self.nrows):
            for k in range(self.row_ptr[i], self.row_ptr[i + 1]):
                out.append((i, self.col_idx[k]))
        return out

    def __matmul__(self, other):
        return sp_mul(self, other)

    def __add__(self, other):
        return sp_add(self, other)

    def transpose(self):
        return sp_transpose(self)

    def scale(self, s: ExprRef):
        return sp_scale(self, s)


def from_triplets(arena: ExprArena, nrows: int, ncols: int,
                  triplets: Iterable[Triplet | tuple]) -> SymbolicSparseMatrix:
    """Assemble CSR from (row, col, value) entries.

    Entries that land on the same position are combined into one n-ary
    symbolic sum in canonical order.
    """
    per_cell: dict[tuple[int, int], list[ExprRef]] = {}
    for t in triplets:
        r, c, v = (t.row, t.col, t.value) if isinstance(t, Triplet) else t
        if not (0 <= r < nrows and 0 <= c < ncols):
            raise ValueError(f"triplet ({r}, {c}) outside a {nrows}x{ncols} matrix")
        per_cell.setdefault((r, c), []).append(v)
    row_ptr = [0]
    col_idx: list[int] = []
    values: list[ExprRef] = []
    cells = sorted(per_cell)
    k = 0
    for i in range(nrows):
        while k < len(cells) and cells[k][0] == i:
            r, c = cells[k]
            vs = per_cell[(r, c)]
            col_idx.append(c)
            values.append(vs[0] if len(vs) == 1 else arena.apply(OpKind.ADD, vs))
            k += 1
        row_ptr.append(len(col_idx))
    return SymbolicSparseMatrix(arena, nrows, ncols, row_ptr, col_idx, values)


def sp_mul(a: SymbolicSparseMatrix, b: SymbolicSparseMatrix) -> SymbolicSparseMatrix:
    """Symbolic matrix product with the exact structural result pattern.

    Each output entry is an n-ary sum of two-factor products; terms are
    accumulated along ascending columns of the left factor and then put into
    canonical order by construction, so the result does not depend on the
    accumulation order.
    """
    if a.ncols != b.nrows:
        raise ValueError(f"cannot multiply {a.nrows}x{a.ncols} by {b.nrows}x{b.ncols}")
    arena = a.arena
    apply = arena.apply
    mul2 = arena.mul2
    ADD = OpKind.ADD
    arp, aci, av = a.row_ptr, a.col_idx, a.values
    brp, bci, bv = b.row_ptr, b.col_idx, b.values
    row_ptr = [0]
    col_idx: list[int] = []
    values: list[ExprRef] = []
    for i in range(a.nrows):
        terms: dict[int, list[ExprRef]] = {}
        for ka in range(arp[i], arp[i + 1]):
            k = aci[ka]
            left = av[ka]
            for kb in range(brp[k], brp[k + 1]):
                t = mul2(left, bv[kb])
                j = bci[kb]
                acc = terms.get(j)
                if acc is None:
                    terms[j] = [t]
                else:
                    acc.append(t)
        for j in sorted(terms):
            ts = terms[j]
            col_idx.append(j)
            values.append(ts[0] if len(ts) == 1 else apply(ADD, ts))
        row_ptr.append(len(col_idx))
    return SymbolicSparseMatrix(arena, a.nrows, b.ncols, row_ptr, col_idx, values)


def sp_add(a: SymbolicSparseMatrix, b: SymbolicSparseMatrix) -> SymbolicSparseMatrix:
    if a.nrows != b.nrows or a.ncols != b.ncols:
        raise ValueError(f"cannot add {a.nrows}x{a.ncols} and {b.nrows}x{b.ncols}")
    arena = a.arena
    row_ptr = [0]
    col_idx: list[int] = []
    values: list[ExprRef] = []
    for i in range(a.nrows):
        ca, va = a.row(i)
        cb, vb = b.row(i)
        ia = ib = 0
        while ia < len(ca) or ib < len(cb):
            if ib >= len(cb) or (ia < len(ca) and ca[ia] < cb[ib]):
                col_idx.append(ca[ia])
                values.append(va[ia])
                ia += 1
            elif ia >= len(ca) or cb[ib] < ca[ia]:
                col_idx.append(cb[ib])
                values.append(vb[ib])
                ib += 1
            else:
                col_idx.append(ca[ia])
                values.append(arena.apply(OpKind.ADD, (va[ia], vb[ib])))
                ia += 1
                ib += 1
        row_ptr.append(len(col_idx))
    return SymbolicSparseMatrix(arena, a.nrows, a.ncols, row_ptr, col_idx, values)


def sp_scale(a: SymbolicSparseMatrix, s: ExprRef) -> SymbolicSparseMatrix:
    arena = a.arena
    values = [arena.apply(OpKind.MUL, (s, v)) for v in a.values]
    return SymbolicSparseMatrix(arena, a.nrows, a.ncols, list(a.row_ptr), list(a.col_idx), values)


def sp_transpose(a: SymbolicSparseMatrix) -> SymbolicSparseMatrix:
    """CSR transpose; expression references are carried over, not copied."""
    counts = [0] * (a.ncols + 1)
    for c in a.col_idx:
        counts[c + 1] += 1
    row_ptr = list(np.cumsum(counts))
    fill = list(row_ptr)
    col_idx = [0] * a.nnz
    values: list[ExprRef] = [0] * a.nnz
    for i in range(a.nrows):
        for k in range(a.row_ptr[i], a.row_ptr[i + 1]):
            c = a.col_idx[k]
            pos = fill[c]
            fill[c] += 1
            col_idx[pos] = i
            values[pos] = a.values[k]
    return SymbolicSparseMatrix(a.arena, a.ncols, a.nrows, row_ptr, col_idx, values)


# -- patterns and symbolic inputs ----------------------------------------------


def random_pattern(n: int, nnz_per_row: int, seed: int) -> list[tuple[int, int]]:
    """n x n pattern with exactly nnz_per_row entries per row."""
    if nnz_per_row > n:
        raise ValueError("nnz_per_row cannot exceed the matrix dimension")
    rng = np.random.default_rng(seed)
    cells = []
    for i in range(n):
        for j in sorted(rng.choice(n, size=nnz_per_row, replace=False).tolist()):
            cells.append((i, j))
    return cells


def grid_laplacian_pattern(w: int, h: int) -> list[tuple[int, int]]:
    """Symmetric 5-point stencil pattern of a w x h grid graph."""
    if w < 2 or h < 2:
        raise ValueError("grid needs w >= 2 and h >= 2")
    cells = []
    for y in range(h):
        for x in range(w):
            i = y * w + x
            cols = [i]
            if x > 0:
                cols.append(i - 1)
            if x < w - 1:
                cols.append(i + 1)
            if y > 0:
                cols.append(i - w)
            if y < h - 1:
                cols.append(i + w)
            for j in sorted(cols):
                cells.append((i, j))
    return cells


def symbolic_matrix(arena: ExprArena, nrows: int, ncols: int,
                    pattern: Sequence[tuple[int, int]],
                    first_var: int | None = None) -> tuple[SymbolicSparseMatrix, int]:
    """Matrix with the given pattern and one fresh input variable per entry.

    Returns the matrix and the next free variable id.  Entries are numbered
    in pattern order, so an input vector laid out the same way binds them
    directly.
    """
    base = arena.var_count if first_var is None else first_var
    trips = []
    for k, (i, j) in enumerate(pattern):
        trips.append((i, j, arena.make_var(base + k)))
    return from_triplets(arena, nrows, ncols, trips), base + len(pattern)


# -- mesh operators -------------------------------------------------------------


@dataclass
class GridMesh:
    """Triangulated w x h vertex grid; each quad split into two faces."""

    w: int
    h: int

    def __post_init__(self):
        if self.w < 2 or self.h < 2:
            raise ValueError("grid needs w >= 2 and h >= 2")

    @property
    def nverts(self) -> int:
        return self.w * self.h

    @property
    def faces(self) -> list[tuple[int, int, int]]:
        out = []
        w = self.w
        for y in range(self.h - 1):
            for x in range(self.w - 1):
                v00 = y * w + x
                v10 = v00 + 1
                v01 = v00 + w
                v11 = v01 + 1
                out.append((v00, v10, v11))
                out.append((v00, v11, v01))
        return out

    @property
    def edges(self) -> list[tuple[int, int]]:
        seen = set()
        for f in self.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                seen.add((min(a, b), max(a, b)))
        return sorted(seen)


@dataclass
class MeshLaplacianSpec:
    """How to build an operator: grid or random pattern, uniform or edge-weighted."""

    builder: str  # "grid" or "random"
    w: int = 0
    h: int = 0
    n: int = 0
    nnz_per_row: int = 0
    seed: int = 0
    weighting: str = "uniform"  # "uniform" or "cotan"


def vertex_coordinate_vars(arena: ExprArena, nverts: int, dim: int = 3) -> list[list[Sym]]:
    """Interleaved per-vertex coordinates: vertex v uses vars dim*v .. dim*v+dim-1."""
    return [[arena.var(dim * v + c) for c in range(dim)] for v in range(nverts)]


def _dot(u: Sequence[Sym], v: Sequence[Sym]) -> Sym:
    acc = u[0] * v[0]
    for a, b in zip(u[1:], v[1:]):
        acc = acc + a * b
    return acc


def _edge(p: Sequence[Sym], q: Sequence[Sym]) -> list[Sym]:
    return [b - a for a, b in zip(p, q)]


def face_operator_terms(coords: Sequence[Sequence[Sym]], face: tuple[int, int, int]):
    """Per-face edge weights and the barycentric area share.

    For each corner the weight of the opposite edge is half the ratio of the
    adjacent edge dot product to twice the face area; the area comes from the
    Gram determinant, one square root per face.
    """
    i, j, k = face
    pi, pj, pk = coords[i], coords[j], coords[k]
    eij, ejk, eki = _edge(pi, pj), _edge(pj, pk), _edge(pk, pi)
    # twice the area: sqrt(|u|^2 |v|^2 - (u.v)^2) with u, v two face edges
    u, v = eij, [-c for c in eki]
    dbl_area = sym_sqrt(_dot(u, u) * _dot(v, v) - _dot(u, v) * _dot(u, v))
    half = 0.5
    weights = {
        # edge (j, k) is opposite corner i, and so on
        (j, k): half * _dot([-c for c in eij], eki) / dbl_area,
        (k, i): half * _dot([-c for c in ejk], eij) / dbl_area,
        (i, j): half * _dot([-c for c in eki], ejk) / dbl_area,
    }
    area_share = dbl_area * (1.0 / 6.0)
    return weights, area_share


def build_operator(arena: ExprArena, spec: MeshLaplacianSpec,
                   vertex_vars: Sequence[Sequence[Sym]] | None = None,
                   with_mass: bool = False):
    """Assemble the operator described by ``spec`` from per-face contributions.

    Uniform weighting gives the combinatorial grid Laplacian with constant
    weights; cotan-style weighting builds symbolic edge weights from vertex
    coordinates.  With ``with_mass`` a barycentric lumped mass matrix built
    from the same face areas is returned alongside.
    """
    if spec.builder == "random":
        pattern = random_pattern(spec.n, spec.nnz_per_row, spec.seed)
        mat, _ = symbolic_matrix(arena, spec.n, spec.n, pattern)
        return (mat, None) if with_mass else mat
    if spec.builder != "grid":
        raise ValueError(f"unknown builder {spec.builder!r}")
    mesh = GridMesh(spec.w, spec.h)
    n = mesh.nverts
    if spec.weighting == "uniform":
        # combinatorial Laplacian of the 4-neighbor grid graph
        trips = []
        mone = arena.make_const(-1.0)
        one = arena.make_const(1.0)
        for y in range(spec.h):
            for x in range(spec.w):
                a = y * spec.w + x
                for b in ((a + 1) if x < spec.w - 1 else None,
                          (a + spec.w) if y < spec.h - 1 else None):
                    if b is None:
                        continue
                    trips += [(a, b, mone), (b, a, mone), (a, a, one), (b, b, one)]
        lap = from_triplets(arena, n, n, trips)
        if not with_mass:
            return lap
        mass = from_triplets(arena, n, n, [(v, v, arena.make_const(1.0)) for v in range(n)])
        return lap, mass
    if spec.weighting != "cotan":
        raise ValueError(f"unknown weighting {spec.weighting!r}")
    coords = vertex_vars if vertex_vars is not None else vertex_coordinate_vars(arena, n)
    lap_trips: list[tuple[int, int, ExprRef]] = []
    mass_trips: list[tuple[int, int, ExprRef]] = []
    for face in mesh.faces:
        weights, area_share = face_operator_terms(coords, face)
        for (a, b), wexpr in weights.items():
            wref = wexpr.ref
            nref = arena.apply(OpKind.NEG, (wref,))
            lap_trips += [(a, b, nref), (b, a, nref), (a, a, wref), (b, b, wref)]
        for v in face:
            mass_trips.append((v, v, area_share.ref))
    lap = from_triplets(arena, n, n, lap_trips)
    if not with_mass:
        return lap
    return lap, from_triplets(arena, n, n, mass_trips)


# -- Matrix Market ingestion -----------------------------------------------------


def read_matrix_market_pattern(path: str) -> tuple[int, int, list[tuple[int, int]]]:
    """Read a coordinate-format .mtx file, returning dims and the pattern.

    Supports 'matrix coordinate real/integer/pattern general' plus symmetric
    storage (mirrored on read).  Values are ignored: only the pattern feeds
    the tracer, entries become input variables.
    """
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ValueError(f"{path}: not a Matrix Market file")
        fields = header.lower().split()
        if "coordinate" not in fields:
            raise ValueError(f"{path}: only coordinate format is supported")
        symmetric = "symmetric" in fields
        is_pattern = "pattern" in fields
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        nrows, ncols, nnz = (int(t) for t in line.split())
        cells = set()
        for _ in range(nnz):
            parts = fh.readline().split()
            i, j = int(parts[0]) - 1, int(parts[1]) - 1
            if is_pattern and len(parts) > 2 or not is_pattern and len(parts) < 3:
                raise ValueError(f"{path}: malformed entry line")
            if not (0 <= i < nrows and 0 <= j < ncols):
                raise ValueError(f"{path}: entry ({i + 1}, {j + 1}) out of bounds")
            cells.add((i, j))
            if symmetric and i != j:
                cells.add((j, i))
    return nrows, ncols, sorted(cells)


def write_matrix_market_pattern(path: str, nrows: int, ncols: int,
                                pattern: Sequence[tuple[int, int]]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate pattern general\n")
        fh.write(f"{nrows} {ncols} {len(pattern)}\n")
        for i, j in sorted(pattern):
            fh.write(f"{i + 1} {j + 1}\n")

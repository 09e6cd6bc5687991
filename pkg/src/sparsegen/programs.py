"""Built-in demo programs the command line can trace.

Each program builds symbolic inputs from a pattern source, runs the actual
computation with symbolic scalars, and registers every output value with a
trace session.  Pattern sources: ``random:n,nnz,seed`` (exactly nnz entries
per row), ``grid:WxH`` (grid-graph stencil or mesh, depending on the
program), and ``mtx:path`` (Matrix Market coordinate file).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .autodiff import gradient, hessian
from .decompose import TraceSession
from .expr import ExprArena, OpKind, Sym, sym_sqrt
from .sparse import (
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
    vertex_coordinate_vars,
)

PROGRAM_NAMES = (
    "expr1",
    "expr2",
    "expr3",
    "lpow2",
    "lpow3",
    "lpow4",
    "cotan",
    "energy-hessian",
)


@dataclass
class ProgramSpec:
    name: str
    pattern: str
    seed: int = 0
    tag: bool = True

    def __post_init__(self):
        if self.name not in PROGRAM_NAMES:
            raise ValueError(f"unknown program {self.name!r}; choose from {PROGRAM_NAMES}")


@dataclass
class TracedProgram:
    session: TraceSession
    meta: dict
    detail: dict = field(default_factory=dict)  # in-memory extras for tests/demos

    @property
    def arena(self) -> ExprArena:
        return self.session.arena

    @property
    def outputs(self):
        return self.session.outputs


def parse_pattern(text: str):
    kind, _, rest = text.partition(":")
    if kind == "random":
        try:
            n, nnz, seed = (int(t) for t in rest.split(","))
        except Exception:
            raise ValueError(f"bad random pattern {text!r}, expected random:n,nnz,seed") from None
        return ("random", n, nnz, seed)
    if kind == "grid":
        try:
            w, h = (int(t) for t in rest.lower().split("x"))
        except Exception:
            raise ValueError(f"bad grid pattern {text!r}, expected grid:WxH") from None
        return ("grid", w, h)
    if kind == "mtx":
        if not rest:
            raise ValueError(f"bad mtx pattern {text!r}, expected mtx:path")
        return ("mtx", rest)
    raise ValueError(f"unknown pattern source {text!r}")


def _input_pattern(parsed, which: int = 0):
    """Pattern cells for one input matrix; random sources vary by index."""
    if parsed[0] == "random":
        _, n, nnz, seed = parsed
        return n, n, random_pattern(n, nnz, seed + which)
    if parsed[0] == "grid":
        _, w, h = parsed
        return w * h, w * h, grid_laplacian_pattern(w, h)
    _, path = parsed
    return read_matrix_market_pattern(path)


def trace_program(spec: ProgramSpec) -> TracedProgram:
    parsed = parse_pattern(spec.pattern)
    arena = ExprArena()
    session = TraceSession(arena)
    meta = {"program": spec.name, "pattern": spec.pattern, "seed": spec.seed, "tag": spec.tag}
    detail: dict = {}

    if spec.name in ("expr1", "expr2", "expr3"):
        mats = []
        nxt = 0
        for which in range(3):
            nr, nc, cells = _input_pattern(parsed, which)
            m, nxt = symbolic_matrix(arena, nr, nc, cells, first_var=nxt)
            mats.append(m)
        A, B, C = mats
        if spec.name == "expr1":
            alpha = arena.make_var(nxt)
            beta = arena.make_var(nxt + 1)
            out = sp_mul(
                sp_transpose(sp_add(sp_scale(A, alpha), B)),
                sp_add(sp_scale(sp_transpose(B), beta), C),
            )
            detail["scalars"] = (alpha, beta)
        elif spec.name == "expr2":
            out = sp_mul(sp_mul(A, B), C)
        else:
            out = sp_mul(sp_add(A, B), sp_add(sp_mul(A, B), C))
        session.add_outputs(out.values)
        detail["result"] = out
        meta["outputs"] = len(session.outputs)
        return TracedProgram(session, meta, detail)

    if spec.name.startswith("lpow"):
        k = int(spec.name[4:])
        nr, nc, cells = _input_pattern(parsed)
        L, _ = symbolic_matrix(arena, nr, nc, cells)
        acc = L
        for _ in range(k - 1):
            acc = sp_mul(acc, L)
        session.add_outputs(acc.values)
        detail["result"] = acc
        meta["outputs"] = len(session.outputs)
        return TracedProgram(session, meta, detail)

    if spec.name == "cotan":
        if parsed[0] != "grid":
            raise ValueError("the cotan program needs a grid pattern (grid:WxH)")
        _, w, h = parsed
        mesh = GridMesh(w, h)
        coords = vertex_coordinate_vars(arena, mesh.nverts, dim=3)
        mspec = MeshLaplacianSpec(builder="grid", w=w, h=h, weighting="cotan")
        if spec.tag:
            lap, mass = _trace_cotan_tagged(arena, session, mesh, coords)
        else:
            lap, mass = build_operator(arena, mspec, vertex_vars=coords, with_mass=True)
        session.add_outputs(lap.values)
        session.add_outputs(mass.values)
        detail["laplacian"] = lap
        detail["mass"] = mass
        detail["mesh"] = mesh
        meta["outputs"] = len(session.outputs)
        return TracedProgram(session, meta, detail)

    # energy-hessian: mass-spring stretch plus a per-face deformation term
    if parsed[0] != "grid":
        raise ValueError("the energy-hessian program needs a grid pattern (grid:WxH)")
    _, w, h = parsed
    return _trace_energy_hessian(arena, session, meta, detail, w, h, spec.tag)


def _trace_cotan_tagged(arena, session, mesh, coords):
    """Operator construction with each face's quantities tagged as one block."""
    from .sparse import face_operator_terms

    lap_trips = []
    mass_trips = []
    for fid, face in enumerate(mesh.faces):
        weights, area_share = face_operator_terms(coords, face)
        block = [wexpr.ref for wexpr in weights.values()] + [area_share.ref]
        session.tag_block(block, block_id=fid)
        for (a, b), wexpr in weights.items():
            wref = wexpr.ref
            nref = arena.apply(OpKind.NEG, (wref,))
            lap_trips += [(a, b, nref), (b, a, nref), (a, a, wref), (b, b, wref)]
        for v in face:
            mass_trips.append((v, v, area_share.ref))
    n = mesh.nverts
    return from_triplets(arena, n, n, lap_trips), from_triplets(arena, n, n, mass_trips)


def _spring_energy(p, q, rest: float) -> Sym:
    d = [b - a for a, b in zip(p, q)]
    acc = d[0] * d[0]
    for c in d[1:]:
        acc = acc + c * c
    return (sym_sqrt(acc) - rest) ** 2


def _face_deformation_energy(arena, p0, p1, p2, d0_inv) -> Sym:
    """Squared Frobenius norm of F plus its inverse, F = D * D0^-1 (2d)."""
    d00, d01 = p1[0] - p0[0], p2[0] - p0[0]
    d10, d11 = p1[1] - p0[1], p2[1] - p0[1]
    a, b, c, d = d0_inv
    f00 = d00 * a + d01 * c
    f01 = d00 * b + d01 * d
    f10 = d10 * a + d11 * c
    f11 = d10 * b + d11 * d
    frob = f00 * f00 + f01 * f01 + f10 * f10 + f11 * f11
    det = f00 * f11 - f01 * f10
    return frob + frob / (det * det)


def _trace_energy_hessian(arena, session, meta, detail, w, h, tag):
    mesh = GridMesh(w, h)
    n = mesh.nverts
    coords = [[arena.var(2 * v + c) for c in range(2)] for v in range(n)]
    rest_xy = [(v % w, v // w) for v in range(n)]

    energy_terms = []
    grad_cells: dict[int, list] = {}
    hess_trips = []
    block_id = 0
    for a, b in mesh.edges:
        ra = rest_xy[a]
        rb = rest_xy[b]
        rest = math.hypot(ra[0] - rb[0], ra[1] - rb[1])
        e = _spring_energy(coords[a], coords[b], rest)
        energy_terms.append(e)
        block_id = _element_derivatives(
            arena, session, e, [2 * a, 2 * a + 1, 2 * b, 2 * b + 1], grad_cells,
            hess_trips, tag, block_id,
        )
    for face in mesh.faces:
        i, j, k = face
        # rest-shape inverse for the undeformed grid triangle
        r0, r1, r2 = rest_xy[i], rest_xy[j], rest_xy[k]
        m00, m01 = r1[0] - r0[0], r2[0] - r0[0]
        m10, m11 = r1[1] - r0[1], r2[1] - r0[1]
        det = m00 * m11 - m01 * m10
        d0_inv = (m11 / det, -m01 / det, -m10 / det, m00 / det)
        e = _face_deformation_energy(arena, coords[i], coords[j], coords[k], d0_inv)
        energy_terms.append(e)
        ids = [2 * i, 2 * i + 1, 2 * j, 2 * j + 1, 2 * k, 2 * k + 1]
        block_id = _element_derivatives(
            arena, session, e, ids, grad_cells, hess_trips, tag, block_id
        )

    total = energy_terms[0]
    for t in energy_terms[1:]:
        total = total + t
    session.outputs.insert(0, total.ref)

    grad_vals = []
    for vid in sorted(grad_cells):
        parts = grad_cells[vid]
        ref = parts[0] if len(parts) == 1 else arena.apply(OpKind.ADD, parts)
        grad_vals.append((vid, ref))
    hess = from_triplets(arena, 2 * n, 2 * n, hess_trips)
    session.add_outputs([r for _, r in grad_vals])
    session.add_outputs(hess.values)

    detail["mesh"] = mesh
    detail["gradient"] = grad_vals
    detail["hessian"] = hess
    detail["energy"] = total.ref
    meta["outputs"] = len(session.outputs)
    return TracedProgram(session, meta, detail)


def _element_derivatives(arena, session, energy, ids, grad_cells, hess_trips, tag, block_id):
    g = gradient(arena, energy.ref, ids)
    hs = hessian(arena, energy.ref, ids)
    block = []
    for vid, ref in g:
        grad_cells.setdefault(vid, []).append(ref)
        block.append(ref)
    for (i, j), ref in hs.items():
        if i <= j:
            hess_trips.append((i, j, ref))
            block.append(ref)
            if i != j:
                hess_trips.append((j, i, ref))
    if tag:
        # one value may be shared between elements; only tag fresh ones
        fresh = [r for r in dict.fromkeys(block) if r not in session._tagged]
        if fresh:
            session.tag_block(fresh, block_id=block_id)
            block_id += 1
    return block_id

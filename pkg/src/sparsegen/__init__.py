"""Sparsity-specific kernel generation from symbolically traced programs.

Typical flow: trace a program over symbolic scalars (`expr`, `sparse`),
optionally differentiate it (`autodiff`), decompose shared work
(`decompose`), group structurally equal expressions into kernels
(`grouping`, `simplify`), then plan memory and execute or emit source
(`codegen`, `emit`).  `programs` holds the built-in demo programs the
command line drives.
"""

from .autodiff import Gradient, gradient, hessian
from .codegen import (
    ExecutionPlan,
    InterpretResult,
    KernelPlan,
    PlanConfig,
    build_plan,
    coalesce_layout,
    de_coalesce_layout,
    detect_offset_coherence,
    evaluate_outputs_individually,
    interpret_plan,
    load_plan,
    plan_memory,
    save_plan,
)
from .decompose import (
    DecomposeConfig,
    DependencyGraph,
    IntermediateSet,
    TraceSession,
    count_references,
    global_decompose,
    local_decompose,
    tag_block,
)
from .emit import compile_plan, emit_kernel_source
from .expr import (
    ExprArena,
    ExprRef,
    OpKind,
    Sym,
    check_hash_collisions,
    complexity,
    eval_numeric,
    eval_tree,
    structurally_equal,
    sym_cos,
    sym_exp,
    sym_log,
    sym_select,
    sym_sin,
    sym_sqrt,
    to_str,
    traverse,
)
from .grouping import (
    KernelGroup,
    LeafTable,
    build_template,
    group_expressions,
    harvest_leaves,
)
from .simplify import (
    SimplifyConfig,
    SimplifyStats,
    eliminate_summands,
    factorize,
    fold_constants,
    reduce_fractions,
    simplify,
)
from .sparse import (
    GridMesh,
    MeshLaplacianSpec,
    SymbolicSparseMatrix,
    Triplet,
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

__version__ = "0.1.0"

"""Sparse tensor completion via CP factorization.

Multi-tensor kernels (MTTKRP, TTTP/SDDMM, per-row factor solves), hypersparse
CCSR operations with a simulated butterfly reduce-scatter, and four solvers
(alternating, coordinate, stochastic gradient, Gauss-Newton/Newton with
implicit preconditioned CG) for pluggable elementwise losses.
"""

from .core import (
    RngState,
    SparseTensor,
    build_tensor,
    counting_sort_by_mode,
    delinearize,
    delinearize_many,
    from_coords,
    gen_function_tensor,
    gen_low_rank,
    linearize,
    linearize_many,
    model_values,
)
from .estimator import CPCompletion
from .exceptions import DataError, NumericalError
from .hypersparse import (
    CcsrMatrix,
    SemiSparseTensor,
    butterfly_gather,
    butterfly_reduce_scatter,
    ccsr_sum,
    ccsr_times_dense,
    matricize_to_ccsr,
    pairwise_mttkrp,
    pairwise_tttp,
    row_block_bounds,
    ttm,
)
from .kernels import gram_blocks, mttkrp, sddmm, solve_factor, tttp
from .losses import (
    LossFunction,
    derivative_tensors,
    fast_ls_loss,
    get_loss,
    least_squares,
    model_at_observed,
    objective,
    poisson_log_link,
    register_loss,
    registered_losses,
    rmse,
)
from .optim import (
    BlockDiagPreconditioner,
    CompletionState,
    SolverConfig,
    als_sweep,
    ccd_sweep,
    gn_step,
    gradient_blocks,
    hessian_matvec,
    init_state,
    pcg_solve,
    run,
    sgd_sweep,
)
from .tensor_io import (
    parse_tns,
    read_factors,
    read_trace,
    write_factors,
    write_tns,
    write_trace,
)
from .trace import RunTrace, TraceRecord

__version__ = "0.1.0"

__all__ = [
    "CPCompletion",
    "CcsrMatrix",
    "CompletionState",
    "DataError",
    "LossFunction",
    "NumericalError",
    "RngState",
    "RunTrace",
    "SemiSparseTensor",
    "SolverConfig",
    "SparseTensor",
    "TraceRecord",
    "BlockDiagPreconditioner",
    "als_sweep",
    "build_tensor",
    "butterfly_gather",
    "butterfly_reduce_scatter",
    "ccd_sweep",
    "ccsr_sum",
    "ccsr_times_dense",
    "counting_sort_by_mode",
    "delinearize",
    "delinearize_many",
    "derivative_tensors",
    "fast_ls_loss",
    "from_coords",
    "gen_function_tensor",
    "gen_low_rank",
    "get_loss",
    "gn_step",
    "gradient_blocks",
    "gram_blocks",
    "hessian_matvec",
    "init_state",
    "least_squares",
    "linearize",
    "linearize_many",
    "matricize_to_ccsr",
    "model_at_observed",
    "model_values",
    "mttkrp",
    "objective",
    "pairwise_mttkrp",
    "pairwise_tttp",
    "parse_tns",
    "pcg_solve",
    "poisson_log_link",
    "read_factors",
    "read_trace",
    "register_loss",
    "registered_losses",
    "rmse",
    "row_block_bounds",
    "run",
    "sddmm",
    "sgd_sweep",
    "solve_factor",
    "tttp",
    "ttm",
    "write_factors",
    "write_tns",
    "write_trace",
]

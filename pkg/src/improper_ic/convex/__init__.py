"""Convex precoder subproblems and the barrier solver behind them."""

from .barrier import BarrierResult, ConvexProgram, barrier_solve, find_interior, kkt_components
from .subproblems import (
    Ps1Solution,
    Ps2Solution,
    SubproblemPs1,
    SubproblemPs2,
    build_rows,
    kkt_residual,
    solve_ps1,
    solve_ps2,
    write_trace_csv,
)

__all__ = [
    "BarrierResult",
    "ConvexProgram",
    "Ps1Solution",
    "Ps2Solution",
    "SubproblemPs1",
    "SubproblemPs2",
    "barrier_solve",
    "build_rows",
    "find_interior",
    "kkt_components",
    "kkt_residual",
    "solve_ps1",
    "solve_ps2",
    "write_trace_csv",
]

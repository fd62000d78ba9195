"""Inexact entropic proximal point solver for partition-structured LPs."""

from .constraints import Instance, PartitionBlock, cmot_marginal_blocks, tomo_block
from .eppa import EppaParams, SolveReport, kkt_residuals, round_to_feasible, solve_ieppa

__all__ = [
    "EppaParams",
    "Instance",
    "PartitionBlock",
    "SolveReport",
    "cmot_marginal_blocks",
    "kkt_residuals",
    "round_to_feasible",
    "solve_ieppa",
    "tomo_block",
]

__version__ = "0.1.0"

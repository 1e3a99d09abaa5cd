"""Capacitated spanning-forest surrogate: exact solvers, heuristics and local search."""

from .exact import (DEFAULT_CAP, CapExceededError, ExactCmstSolver, PartitionEnumerator, connected_subsets,
                    exact_cmst, exact_districting)
from .heuristics import StructureError, greedy_merge, initial_solution, modified_kruskal, repair
from .ils import cmst_cost_oracle, ils, local_search, penalty_weight, solution_cost
from .solution import (CmstSolution, DistrictingSolution, InfeasibleError, check_districting,
                       cmst_from_districts, decode, max_spanning_tree)

__all__ = [
    "DEFAULT_CAP", "CapExceededError", "CmstSolution", "DistrictingSolution", "ExactCmstSolver", "InfeasibleError",
    "PartitionEnumerator", "StructureError", "check_districting", "cmst_cost_oracle", "cmst_from_districts",
    "connected_subsets", "decode", "exact_cmst", "exact_districting", "greedy_merge", "ils",
    "initial_solution", "local_search", "max_spanning_tree", "modified_kruskal", "penalty_weight",
    "repair", "solution_cost",
]

"""Instance-dependent error estimates and early stopping for tabular RL."""
from .tabular import Mdp, Mrp, solve_q_exact, solve_value_exact
from .sampling import Dataset, GenerativeSampler, RewardModel, make_rng, sample_dataset
from .solvers import VrqlSolver, vrql_guarantee
from .protocol import EmpireResult, empire_pe, empire_q

__all__ = [
    "Dataset",
    "EmpireResult",
    "GenerativeSampler",
    "Mdp",
    "Mrp",
    "RewardModel",
    "VrqlSolver",
    "empire_pe",
    "empire_q",
    "make_rng",
    "sample_dataset",
    "solve_q_exact",
    "solve_value_exact",
    "vrql_guarantee",
]

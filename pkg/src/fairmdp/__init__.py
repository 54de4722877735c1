"""Fairness-constrained policies for tabular and simulated MDPs."""
from fairmdp.mdp import ContractError, FairnessSpec, TabularMdp, evaluate, load_fixture
from fairmdp.model_based import solve_conservative, solve_fair

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "FairnessSpec",
    "TabularMdp",
    "evaluate",
    "load_fixture",
    "solve_conservative",
    "solve_fair",
]

"""Mixed stochastic control / generalized Dynkin games under BSDE-defined
nonlinear expectations: lattice solver, HJB variational inequality solver and
brute-force oracles."""
from .model import ProblemSpec, SpecError, load_spec, validate
from .chain import TimeStateGrid, build_chain, simulate_paths
from .bsde import solve_bsde, solve_drbsde, solve_rbsde_lower, solve_rbsde_upper
from .game import dynkin_value, mixed_value, dpp_residual
from . import _backend

backend = _backend.name

__version__ = "0.1.0"

"""Loss rate, cumulative loss and transition density of a mean-field
diffusion absorbed at a boundary, with the drift fed back from the absorbed
mass through a pair of singular Volterra equations.
"""

__version__ = "0.1.0"

from .kernels import GridSpec, heat_kernel, normal_cdf, xi_kernel
from .closed_form import ZeroDriftSolution
from .heat_potential import DriftSpec, HeatPotentialSolution
from .mckv import BlowUpReport, NewtonDivergenceError, ProblemSpec, SolutionPath, solve
from .particles import ParticleRun, simulate
from .perturbation import PerturbationSolution, assemble
from .analysis import BankSystemParams, MomentsResult, alpha_from_bank_params

__all__ = [
    "GridSpec",
    "ZeroDriftSolution",
    "DriftSpec",
    "HeatPotentialSolution",
    "ProblemSpec",
    "SolutionPath",
    "BlowUpReport",
    "NewtonDivergenceError",
    "ParticleRun",
    "PerturbationSolution",
    "BankSystemParams",
    "MomentsResult",
    "normal_cdf",
    "heat_kernel",
    "xi_kernel",
    "solve",
    "simulate",
    "assemble",
    "alpha_from_bank_params",
]

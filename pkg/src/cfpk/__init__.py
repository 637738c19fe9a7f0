"""Numerical toolkit for the moment-constrained nonlocal Fokker-Planck
equation: constrained minimizing-movement stepping, a direct finite-volume
solver, constrained Gibbs equilibria, and the long-time verification suite.
"""

from .core import (
    ConstraintPath,
    Density,
    Grid,
    ModelParams,
    Potential,
    constant_path,
    doublewell_potential,
    exp_decay_path,
    gaussian_density,
    integrate,
    moments,
    normalize,
    polynomial_potential,
    quadratic_potential,
    tanh_ramp_path,
)
from .equilibrium import GibbsState, LandscapeReport, gibbs, lambda_of_ell, landscape, lsi_constant
from .fpsolver import SolverConfig, sigma_of_state, step
from .functionals import (
    EnergyBreakdown,
    ckp_l1_bound,
    dissipation,
    free_energy,
    relative_entropy,
    weighted_ckp,
)
from .transport import JkoStepResult, QuantileRep, jko_run, jko_step, to_quantile, w2

__version__ = "0.1.0"

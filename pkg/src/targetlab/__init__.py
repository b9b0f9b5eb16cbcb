"""Numerical laboratory for stochastic target problems with controlled jumps.

Modules by concern:

    model        problem descriptions, controls, marks, validation
    sde          Euler path engine, policies, exponential rescaling
    operators    HJB operator algebra, semi-limit surrogates, boundary gap
    pde          monotone finite-difference sweeps and the terminal layer
    tree         exact scenario trees, target recursion, representation
    certify      stochastic super/sub-solution certificates, sandwich check
    embed        expectation problems rewritten as target problems
    problemfile  INI problem and experiment files
    cli          experiment runner (also the `targetlab` console script)
"""

from .model import (
    Coefficients,
    ControlGrid,
    ControlValue,
    MarkSpace,
    ProblemSpec,
    affine_coefficient,
    constant_coefficient,
    control_norm,
    make_payoff,
    table_coefficient,
    validate_problem,
)
from .operators import OperatorPoint, RelaxationSchedule, TestFunction
from .problemfile import load_experiment, load_problem

__version__ = "0.1.0"

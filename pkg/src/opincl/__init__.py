"""opincl: successive approximation for operator inclusions u(t) in F(t, (Au)(t)).

Submodules:

* ``setval``           compact sets, projections, Hausdorff distance
* ``gridfn``           grids, grid functions, quadrature and norms
* ``operators``        Volterra and Fredholm kernel operators
* ``inclusion_solver`` successive approximation with a-priori bounds
* ``second_order``     second-order directional derivative estimators
* ``penalty``          exact penalty minimization and certificates
* ``discrete_oc``      adjoint gradients for discrete-time control
* ``cli``              config-driven runner
"""
from ._backend import BACKEND
from .errors import (ConvergenceError, EvaluationError, InputError, OpinclError,
                     PreconditionError)
from .gridfn import Grid, GridFunction
from .inclusion_solver import MultiMap, solve_fredholm, solve_volterra
from .operators import KernelOperator
from .setval import CompactSet

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CompactSet", "ConvergenceError", "EvaluationError", "Grid", "GridFunction",
    "InputError", "KernelOperator", "MultiMap", "OpinclError", "PreconditionError",
    "solve_fredholm", "solve_volterra", "__version__",
]

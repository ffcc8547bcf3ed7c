"""Phase-field tumour growth with chemotaxis and identification of ``(P, chi, C)``.

The modules build on each other: :mod:`mesh` and :mod:`fem` provide P1
triangles, :mod:`model` the constitutive functions, :mod:`forward` the time
stepping, :mod:`linearized` exact derivatives, :mod:`objective` and
:mod:`optimizer` the trust-region Gauss-Newton fit.
"""
from .forward import AdmissibleBox, Params, SolverConfig, SolverError, initial_fields, simulate
from .mesh import NodalField, build_uniform
from .model import ModelConfig
from .objective import DesiredStates, ObjectiveWeights, evaluate_objective
from .optimizer import TRConfig, identify, solve_box_tr_subproblem

__all__ = [
    "AdmissibleBox", "Params", "SolverConfig", "SolverError", "initial_fields", "simulate",
    "NodalField", "build_uniform", "ModelConfig", "DesiredStates", "ObjectiveWeights",
    "evaluate_objective", "TRConfig", "identify", "solve_box_tr_subproblem",
]

__version__ = "0.1.0"

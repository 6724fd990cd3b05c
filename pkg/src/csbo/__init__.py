"""Contextual stochastic bilevel optimization with multilevel Monte Carlo hypergradients."""
from ._backend import set_backend
from .ledger import CostLedger, DivergenceError
from .oracles import (ProblemConstants, ProblemOracle, make_cso_instance,
                      make_meta_instance, make_problem, make_quadratic_instance,
                      make_wdro_si_instance)

__version__ = "0.1.0"


def backend():
    """Name of the active kernel backend: ``"cython"`` or ``"python"``."""
    from . import _backend
    return _backend.BACKEND


__all__ = [
    "CostLedger", "DivergenceError", "ProblemConstants", "ProblemOracle",
    "__version__", "backend", "make_cso_instance", "make_meta_instance",
    "make_problem", "make_quadratic_instance", "make_wdro_si_instance",
    "set_backend",
]

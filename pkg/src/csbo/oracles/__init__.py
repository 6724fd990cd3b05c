"""Problem contract and built-in instances."""
from .base import ProblemConstants, ProblemOracle
from .cso import CsoProblem, make_cso_instance
from .meta import MetaLearningProblem, make_meta_instance
from .quadratic import QuadraticProblem, make_quadratic_instance
from .wdro import (RadiusExceededError, WdroSiProblem, make_wdro_si_instance,
                   newsvendor_cost, smoothed_newsvendor, smoothed_newsvendor_derivs)

PROBLEMS = {
    "quadratic": make_quadratic_instance,
    "cso": make_cso_instance,
    "meta": make_meta_instance,
    "wdro_si": make_wdro_si_instance,
}


def make_problem(name, **params):
    """Build a built-in instance by name from keyword parameters."""
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**params)


__all__ = [
    "CsoProblem", "MetaLearningProblem", "PROBLEMS", "ProblemConstants",
    "ProblemOracle", "QuadraticProblem", "RadiusExceededError", "WdroSiProblem",
    "make_cso_instance", "make_meta_instance", "make_problem",
    "make_quadratic_instance", "make_wdro_si_instance", "newsvendor_cost",
    "smoothed_newsvendor", "smoothed_newsvendor_derivs",
]

import functools

import numpy as np
import pytest

from csbo import _backend
from csbo.oracles import (ProblemConstants, ProblemOracle, make_cso_instance,
                          make_meta_instance, make_quadratic_instance,
                          make_wdro_si_instance)

INSTANCE_NAMES = ("quadratic", "cso", "meta", "wdro_si")


@functools.lru_cache(maxsize=None)
def small_instance(name):
    """Small seeded instances, cached because construction draws held-out data."""
    if name == "quadratic":
        return make_quadratic_instance(4, 3, 2, seed=1)
    if name == "cso":
        return make_cso_instance(3, 4, seed=1)
    if name == "meta":
        return make_meta_instance(M=4, d=6, C=3, seed=1, n_adapt=10, n_test=20)
    if name == "wdro_si":
        return make_wdro_si_instance(d_xi=3, lam=10.0, seed=1, n_contexts=10,
                                     n_per_context=20, n_test=500)
    raise KeyError(name)


def random_point(problem, rng):
    """A random (x, y, xi, eta) inside the region where the instance's constants hold."""
    c = problem.constants()
    x = rng.standard_normal(c.d_x)
    if problem.name == "wdro_si":
        x *= 0.8 * problem.radius / np.linalg.norm(x)
    xi = problem.sample_context(rng)
    eta = problem.sample_noise(xi, rng)
    y = rng.standard_normal(c.d_y)
    return x, y, xi, eta


@pytest.fixture(params=INSTANCE_NAMES)
def instance(request):
    return small_instance(request.param)


@pytest.fixture(params=["cython", "python"])
def each_backend(request):
    try:
        _backend.load(request.param)
    except ImportError:
        pytest.skip(f"{request.param} backend unavailable")
    old = _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(old)


class ScalarQuadratic(ProblemOracle):
    """One-dimensional ``g = mu/2 y^2 - eta y`` with a configurable noise law.

    ``noise_value`` fixes every draw (deterministic problem); otherwise draws
    are ``N(center, 1)``. ``f = 1/2 (y - target)^2 + x . grad1``.
    """

    name = "scalar"

    def __init__(self, mu=1.0, L=None, noise_value=None, center=1.0, target=0.0,
                 grad1=0.0, grad2_f_zero=False, grad2_g_zero=False):
        self.mu, self.L = mu, mu if L is None else L
        self.noise_value, self.center = noise_value, center
        self.target, self.grad1 = target, grad1
        self.grad2_f_zero, self.grad2_g_zero = grad2_f_zero, grad2_g_zero

    def sample_context(self, rng):
        return 0.0

    def sample_noise_batch(self, xi, n, rng):
        if self.noise_value is not None:
            return np.full(n, float(self.noise_value))
        return self.center + rng.standard_normal(n)

    def grad1_f(self, x, y, eta, xi):
        return np.full(np.shape(x), self.grad1, dtype=float)

    def grad2_f(self, x, y, eta, xi):
        if self.grad2_f_zero:
            return np.zeros(1)
        return np.asarray(y, dtype=float) - self.target

    def grad2_g(self, x, y, eta, xi):
        if self.grad2_g_zero:
            return np.zeros(1)
        return self.mu * np.asarray(y, dtype=float) - eta

    def hvp22_g(self, x, y, eta, xi, v):
        return self.mu * np.asarray(v, dtype=float)

    def hvp12_g(self, x, y, eta, xi, v):
        return -np.full(1, float(np.sum(v)))

    def constants(self):
        return ProblemConstants(mu_g=self.mu, L_g0=1.0, L_g1=self.L, d_x=1, d_y=1)

import math

import numpy as np

from .. import _backend
from .base import ProblemConstants, ProblemOracle


def _tanh_moments(n_nodes=80):
    """E[z tanh z] and E[tanh^2 z] for z ~ N(0, 1) by Gauss-Hermite."""
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / math.sqrt(2.0 * math.pi)
    t = np.tanh(z)
    return float(w @ (z * t)), float(w @ (t * t))


class CsoProblem(ProblemOracle):
    """Conditional stochastic optimization posed as a bilevel problem.

    The inner problem estimates the conditional mean
    ``E[h(x; eta, xi) | xi]`` of ``h = Wx + xi + eta`` through the quadratic
    ``g = ||y - h||^2``; the outer loss is ``f = 1/2 ||y - D xi||^2 +
    gamma/2 ||x||^2``. With ``eta | xi ~ N(shift * tanh(xi), sigma^2 I)`` the
    conditional mean is nonlinear in ``xi`` yet the objective and its gradient
    stay in closed form.
    """

    name = "cso"
    has_grad_F = True

    def __init__(self, d_x, d_y, seed=0, gamma=0.1, sigma=0.5, shift=1.0,
                 region_radius=5.0):
        self.d_x, self.d_y = d_x, d_y
        self.gamma, self.sigma, self.shift = float(gamma), float(sigma), float(shift)
        self.region_radius = float(region_radius)
        rng = np.random.default_rng(seed)
        self.W = rng.standard_normal((d_y, d_x)) / math.sqrt(d_x)
        self.D = rng.standard_normal((d_y, d_y)) / math.sqrt(d_y)
        self._two_eye = 2.0 * np.eye(d_y)
        resid = np.eye(d_y) - self.D
        m1, m2 = _tanh_moments()
        self._F_const = 0.5 * (np.sum(resid ** 2)
                               + 2.0 * self.shift * m1 * np.trace(resid)
                               + self.shift ** 2 * d_y * m2)
        self._hess_F = self.gamma * np.eye(d_x) + self.W.T @ self.W

    def sample_context(self, rng):
        return rng.standard_normal(self.d_y)

    def sample_noise_batch(self, xi, n, rng):
        return self.shift * np.tanh(xi) + self.sigma * rng.standard_normal((n, self.d_y))

    def grad1_f(self, x, y, eta, xi):
        return self.gamma * np.asarray(x, dtype=float)

    def grad2_f(self, x, y, eta, xi):
        return y - self.D @ xi

    def grad2_g(self, x, y, eta, xi):
        return 2.0 * (y - self.W @ x - xi - eta)

    def hvp22_g(self, x, y, eta, xi, v):
        return 2.0 * np.asarray(v, dtype=float)

    def hvp12_g(self, x, y, eta, xi, v):
        return -2.0 * self.W.T @ v

    def constants(self):
        r = self.region_radius
        return ProblemConstants(
            mu_g=2.0, L_g0=2.0 * math.sqrt(r ** 2 + self.sigma ** 2 * self.d_y),
            L_g1=2.0, d_x=self.d_x, d_y=self.d_y, L_f1=max(1.0, self.gamma))

    def y_star(self, x, xi):
        return self.W @ x + xi + self.shift * np.tanh(xi)

    def grad_F(self, x):
        return self._hess_F @ x

    def F_eval(self, x):
        wx = self.W @ x
        return 0.5 * (wx @ wx + self.gamma * (x @ x)) + self._F_const

    def initial_x(self):
        return np.ones(self.d_x)

    def sgd_epoch(self, x, xi, y, noises, step):
        c = 2.0 * (self.W @ x + xi)
        return _backend.kernels.linear_epoch(
            self._two_eye, c, np.ascontiguousarray(noises), 2.0,
            np.asarray(y, dtype=float), step)

    def neumann_chain(self, x, y, xi, r, noises, scale):
        return _backend.kernels.linear_neumann(
            self._two_eye, np.asarray(r, dtype=float), len(noises), scale)


def make_cso_instance(d_x, d_y, seed=0, **params):
    return CsoProblem(d_x, d_y, seed=seed, **params)

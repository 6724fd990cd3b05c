import math

import numpy as np

from .. import _backend
from .base import ProblemConstants, ProblemOracle, spd_matrix


class QuadraticProblem(ProblemOracle):
    """Linear-quadratic instance with closed-form ground truth.

    g(x, y; eta, xi) = 1/2 y'Ay - y'(Bx + C xi + eta)
    f(x, y; eta, xi) = 1/2 ||y - D xi||^2 + gamma/2 ||x||^2
    xi ~ N(0, I), eta | xi ~ N(M xi, sigma^2 I)

    so that y*(x; xi) = A^{-1}(Bx + (C + M) xi) and
    grad F(x) = gamma x + B'A^{-2}B x.

    ``coupling`` scales B; ``coupling=0`` decouples the two levels.
    ``context_scale`` scales C, D and M, i.e. how much the context moves the
    inner solution and the outer target.
    ``region_radius`` bounds ||y - y*|| on the region where the declared
    L_g0 is valid (the quadratic is not globally Lipschitz).
    """

    name = "quadratic"
    has_grad_F = True

    def __init__(self, d_x, d_y, d_xi, seed=0, mu_g=1.0, L_g1=4.0, gamma=0.1,
                 sigma=0.5, coupling=1.0, context_scale=1.0,
                 region_radius=5.0):
        if min(d_x, d_y, d_xi) < 1:
            raise ValueError("dimensions must be >= 1")
        if not 0 < mu_g <= L_g1:
            raise ValueError("need 0 < mu_g <= L_g1")
        self.d_x, self.d_y, self.d_xi = d_x, d_y, d_xi
        self.mu_g, self.L_g1 = float(mu_g), float(L_g1)
        self.gamma, self.sigma = float(gamma), float(sigma)
        self.region_radius = float(region_radius)
        rng = np.random.default_rng(seed)
        self.A, self.eigenvalues = spd_matrix(rng, d_y, mu_g, L_g1)
        self.B = coupling * rng.standard_normal((d_y, d_x)) / math.sqrt(d_x)
        self.C = context_scale * rng.standard_normal((d_y, d_xi)) / math.sqrt(d_xi)
        self.D = context_scale * rng.standard_normal((d_y, d_xi)) / math.sqrt(d_xi)
        self.M = context_scale * rng.standard_normal((d_y, d_xi)) / math.sqrt(d_xi)
        self.A_inv = np.linalg.inv(self.A)
        self._P = self.A_inv @ self.B
        self._Q = self.A_inv @ (self.C + self.M) - self.D
        self._hess_F = gamma * np.eye(d_x) + self._P.T @ self._P

    def sample_context(self, rng):
        return rng.standard_normal(self.d_xi)

    def sample_noise_batch(self, xi, n, rng):
        return self.M @ xi + self.sigma * rng.standard_normal((n, self.d_y))

    def grad1_f(self, x, y, eta, xi):
        return self.gamma * np.asarray(x, dtype=float)

    def grad2_f(self, x, y, eta, xi):
        return y - self.D @ xi

    def grad2_g(self, x, y, eta, xi):
        return self.A @ y - (self.B @ x + self.C @ xi + eta)

    def hvp22_g(self, x, y, eta, xi, v):
        return self.A @ v

    def hvp12_g(self, x, y, eta, xi, v):
        return -self.B.T @ v

    def lipschitz_g0(self, radius):
        """Bound on sqrt(E||grad2_g||^2) over ||y - y*|| <= radius."""
        return math.sqrt(self.L_g1 ** 2 * radius ** 2 + self.sigma ** 2 * self.d_y)

    def constants(self):
        return ProblemConstants(
            mu_g=self.mu_g, L_g0=self.lipschitz_g0(self.region_radius),
            L_g1=self.L_g1, d_x=self.d_x, d_y=self.d_y, L_f1=max(1.0, self.gamma))

    def y_star(self, x, xi):
        return self.A_inv @ (self.B @ x + (self.C + self.M) @ xi)

    def grad_F(self, x):
        return self._hess_F @ x

    def F_eval(self, x):
        px = self._P @ x
        return 0.5 * (px @ px + np.sum(self._Q ** 2) + self.gamma * (x @ x))

    def hypergrad_at(self, x, xi, eta=None):
        """Exact per-context hypergradient grad1_f + (dy*/dx)' grad2_f at y*."""
        y = self.y_star(x, xi)
        return self.gamma * x + self._P.T @ (y - self.D @ xi)

    def initial_x(self):
        return np.ones(self.d_x)

    def sgd_epoch(self, x, xi, y, noises, step):
        c = self.B @ x + self.C @ xi
        return _backend.kernels.linear_epoch(
            self.A, c, np.ascontiguousarray(noises), 1.0,
            np.asarray(y, dtype=float), step)

    def neumann_chain(self, x, y, xi, r, noises, scale):
        return _backend.kernels.linear_neumann(
            self.A, np.asarray(r, dtype=float), len(noises), scale)


def make_quadratic_instance(d_x, d_y, d_xi, seed=0, **params):
    return QuadraticProblem(d_x, d_y, d_xi, seed=seed, **params)

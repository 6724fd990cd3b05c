"""The problem contract shared by every bilevel instance.

A problem is ``min_x E[f(x, y*(x; xi); eta, xi)]`` with
``y*(x; xi) = argmin_y E[g(x, y; eta, xi) | xi]``. Implementations supply
samplers and first-order / Hessian-vector oracles; the solvers never touch
problem internals beyond this surface.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ProblemConstants:
    mu_g: float
    L_g0: float
    L_g1: float
    d_x: int
    d_y: int
    L_f0: Optional[float] = None
    L_f1: Optional[float] = None
    L_g2: Optional[float] = None

    def __post_init__(self):
        for name in ("mu_g", "L_g0", "L_g1", "L_f0", "L_f1", "L_g2"):
            val = getattr(self, name)
            if val is None:
                continue
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and positive, got {val}")
        if self.mu_g > self.L_g1:
            raise ValueError(f"mu_g={self.mu_g} exceeds L_g1={self.L_g1}")
        if self.d_x < 1 or self.d_y < 1:
            raise ValueError("dimensions must be >= 1")


class ProblemOracle:
    """Base class for bilevel problem instances.

    Subclasses must implement the samplers, ``grad1_f``, ``grad2_f``,
    ``grad2_g``, ``hvp22_g``, ``hvp12_g`` and ``constants``. The
    ``sgd_epoch`` and ``neumann_chain`` fast paths have generic
    implementations in terms of those oracles; built-in problems override
    them with compiled kernels.

    Ground-truth methods (``y_star``, ``grad_F``, ``F_eval``) raise
    ``NotImplementedError`` unless the instance has a closed form;
    ``has_grad_F`` reports availability.
    """

    name = "problem"
    has_grad_F = False

    # -- samplers ---------------------------------------------------------
    def sample_context(self, rng):
        raise NotImplementedError

    def sample_noise_batch(self, xi, n, rng):
        """Draw ``n`` i.i.d. noise samples conditional on ``xi``."""
        return [self.sample_noise(xi, rng) for _ in range(n)]

    def sample_noise(self, xi, rng):
        return self.noise_item(self.sample_noise_batch(xi, 1, rng), 0)

    def noise_item(self, batch, j):
        return batch[j]

    def iter_noise(self, batch):
        return iter(batch)

    def noise_count(self, batch):
        return len(batch)

    # -- first- and second-order oracles ----------------------------------
    def grad1_f(self, x, y, eta, xi):
        raise NotImplementedError

    def grad2_f(self, x, y, eta, xi):
        raise NotImplementedError

    def grad2_g(self, x, y, eta, xi):
        raise NotImplementedError

    def hvp22_g(self, x, y, eta, xi, v):
        raise NotImplementedError

    def hvp12_g(self, x, y, eta, xi, v):
        raise NotImplementedError

    def constants(self):
        raise NotImplementedError

    # -- ground truth -----------------------------------------------------
    def y_star(self, x, xi):
        raise NotImplementedError(f"{self.name} has no closed-form y*")

    def grad_F(self, x):
        raise NotImplementedError(f"{self.name} has no closed-form gradient")

    def F_eval(self, x):
        raise NotImplementedError(f"{self.name} has no closed-form objective")

    def test_loss(self, x, rng=None):
        raise NotImplementedError(f"{self.name} has no held-out loss")

    def initial_x(self):
        return np.zeros(self.constants().d_x)

    def inner_init(self, x, xi):
        """Starting point for the inner solver at context ``xi``."""
        return np.zeros(self.constants().d_y)

    # -- fast paths -------------------------------------------------------
    def sgd_epoch(self, x, xi, y, noises, step):
        """Run one SGD step per noise draw from ``y`` with a fixed stepsize.

        Returns the mean of the iterates visited *before* each update.
        Raises ``FloatingPointError(j)`` if step ``j`` produces a non-finite
        iterate.
        """
        y = np.array(y, dtype=np.float64)
        avg = np.zeros_like(y)
        n = 0
        for j, eta in enumerate(self.iter_noise(noises)):
            avg += y
            y = y - step * self.grad2_g(x, y, eta, xi)
            n += 1
            if not np.all(np.isfinite(y)):
                raise FloatingPointError(j)
        return avg / n if n else y

    def neumann_chain(self, x, y, xi, r, noises, scale):
        """Apply ``prod_j (I - scale * H_j)`` to ``r``, last factor first."""
        r = np.array(r, dtype=np.float64)
        for eta in reversed(list(self.iter_noise(noises))):
            r = r - scale * self.hvp22_g(x, y, eta, xi, r)
        return r

    def default_beta0(self):
        """Inner base stepsize used when the caller does not pass one.

        Each epoch integrates the inner gradient flow for time ``beta0``.
        At ``beta0 * mu_g = 0.75`` the running average shrinks the squared
        initial error of the slowest mode by ``((1 - e^-s) / s)^2 ~ 1/2``
        per epoch, matching the ``2^-k`` decay of the noise term. The value
        is capped at ``4/L_g1`` so the first epoch (stepsize ``beta0/2``)
        stays within the stability limit ``2/L_g1``.
        """
        c = self.constants()
        return min(0.75 / c.mu_g, 4.0 / c.L_g1)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def spd_matrix(rng, d, lo, hi):
    """Symmetric matrix with eigenvalues log-uniform in [lo, hi], endpoints pinned."""
    if d == 1:
        eig = np.array([lo])
    else:
        eig = np.exp(rng.uniform(np.log(lo), np.log(hi), size=d))
        eig[0], eig[-1] = lo, hi
    q = random_orthogonal(rng, d)
    a = (q * eig) @ q.T
    return 0.5 * (a + a.T), np.sort(eig)

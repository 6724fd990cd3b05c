import math

import numpy as np

from .. import _backend
from .base import ProblemConstants, ProblemOracle


class RadiusExceededError(ValueError):
    """The upper-level iterate left the ball where strong convexity is certified."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def smoothed_newsvendor(w, eta, h, b, beta):
    """Softplus-smoothed holding/backlog cost ``h (w-eta)_+ + b (eta-w)_+``."""
    z = beta * (np.asarray(w) - eta)
    return (h * np.logaddexp(0.0, z) + b * np.logaddexp(0.0, -z)) / beta


def smoothed_newsvendor_derivs(w, eta, h, b, beta):
    """First and second derivatives of :func:`smoothed_newsvendor` in ``w``."""
    s = _sigmoid(beta * (np.asarray(w) - eta))
    return h * s - b * (1.0 - s), beta * (h + b) * s * (1.0 - s)


def newsvendor_cost(w, eta, h, b):
    diff = np.asarray(w) - eta
    return h * np.maximum(diff, 0.0) + b * np.maximum(-diff, 0.0)


class WdroSiProblem(ProblemOracle):
    """Penalized dual of robust feature-based newsvendor with side information.

    The decision rule is linear, ``w = x0 + x1 . xi``. The inner variable
    ``y`` is the adversarial covariate; it maximizes the expected smoothed
    newsvendor cost minus ``lam ||y - xi||^2`` given the nominal covariate,
    i.e. it minimizes ``g = -l(w(y), eta) + lam ||xi - y||^2``. The upper
    level is ``f = l(w(y), eta) - lam ||y - xi||^2``.

    The inner problem is ``2 lam - (h+b) beta ||x1||^2 / 4`` strongly convex,
    so the instance is gated on ``lam > (h+b) beta R^2 / 8`` for a declared
    radius ``R`` and every oracle checks ``||x|| <= R``.

    Demand follows ``eta = level + amp * tanh(w_true . xi) + N(0, 1)`` with
    ``xi`` uniform on ``[-box, box]^d_xi``. With ``n_contexts`` set, the
    nominal distribution is an empirical sample of that many covariates with
    ``n_per_context`` demands each; with ``n_contexts=None`` it is the
    generator itself. ``test_loss`` scores the unsmoothed cost on fixed
    held-out samples whose covariate box is widened by ``test_box_scale``.
    """

    name = "wdro_si"

    def __init__(self, d_xi=5, lam=10.0, h=1.0, b=2.0, beta=5.0, seed=0,
                 radius=None, level=0.0, amp=1.0, box=1.0, n_contexts=50,
                 n_per_context=100, test_box_scale=3.0, n_test=20000):
        if d_xi < 1:
            raise ValueError("d_xi must be >= 1")
        if min(h, b, beta, lam) <= 0:
            raise ValueError("h, b, beta and lam must be positive")
        self.d_xi = int(d_xi)
        self.lam, self.h, self.b, self.beta = float(lam), float(h), float(b), float(beta)
        curv = (self.h + self.b) * self.beta
        if radius is None:
            radius = 0.9 * math.sqrt(8.0 * self.lam / curv)
        self.radius = float(radius)
        if not self.lam > curv * self.radius ** 2 / 8.0:
            raise ValueError(
                f"lam={lam} does not exceed (h+b)*beta*R^2/8="
                f"{curv * self.radius ** 2 / 8.0:.6g}; inner problem not strongly convex")
        self.level, self.amp, self.box = float(level), float(amp), float(box)
        ss = np.random.SeedSequence(seed)
        model_ss, data_ss, test_ss = ss.spawn(3)
        self.w_true = np.random.default_rng(model_ss).standard_normal(d_xi) / math.sqrt(d_xi)
        self.finite = n_contexts is not None
        if self.finite:
            rng = np.random.default_rng(data_ss)
            self.contexts = rng.uniform(-box, box, size=(n_contexts, d_xi))
            self.demands = (self.demand_mean(self.contexts)[:, None]
                            + rng.standard_normal((n_contexts, n_per_context)))
        rng = np.random.default_rng(test_ss)
        tb = box * test_box_scale
        self._held_out = {}
        for split in ("test", "validation"):
            xi = rng.uniform(-tb, tb, size=(n_test, d_xi))
            self._held_out[split] = (xi, self.demand_mean(xi) + rng.standard_normal(n_test))

    def demand_mean(self, xi):
        return self.level + self.amp * np.tanh(np.asarray(xi) @ self.w_true)

    def covariate(self, ctx):
        """Covariate vector for a context (an index in empirical mode)."""
        return self.contexts[ctx] if self.finite else np.asarray(ctx, dtype=float)

    def _check(self, x):
        nx = float(np.linalg.norm(x))
        if not nx <= self.radius:
            raise RadiusExceededError(
                f"||x|| = {nx:.6g} exceeds the certified radius {self.radius:.6g}")

    # -- samplers ---------------------------------------------------------
    def sample_context(self, rng):
        if self.finite:
            return int(rng.integers(len(self.contexts)))
        return rng.uniform(-self.box, self.box, size=self.d_xi)

    def sample_noise_batch(self, xi, n, rng):
        if self.finite:
            row = self.demands[xi]
            return row[rng.integers(len(row), size=n)]
        return self.demand_mean(xi) + rng.standard_normal(n)

    def sample_pair(self, rng):
        """One nominal (covariate, demand) pair."""
        ctx = self.sample_context(rng)
        return self.covariate(ctx), float(self.sample_noise(ctx, rng))

    # -- oracles ----------------------------------------------------------
    def _derivs(self, x, y, eta):
        w = x[0] + x[1:] @ y
        return smoothed_newsvendor_derivs(w, eta, self.h, self.b, self.beta)

    def grad1_f(self, x, y, eta, xi):
        self._check(x)
        d1, _ = self._derivs(x, y, eta)
        return d1 * np.concatenate(([1.0], y))

    def grad2_f(self, x, y, eta, xi):
        self._check(x)
        d1, _ = self._derivs(x, y, eta)
        return d1 * x[1:] - 2.0 * self.lam * (y - self.covariate(xi))

    def grad2_g(self, x, y, eta, xi):
        self._check(x)
        d1, _ = self._derivs(x, y, eta)
        return -d1 * x[1:] + 2.0 * self.lam * (y - self.covariate(xi))

    def hvp22_g(self, x, y, eta, xi, v):
        self._check(x)
        _, d2 = self._derivs(x, y, eta)
        return -d2 * (x[1:] @ v) * x[1:] + 2.0 * self.lam * np.asarray(v)

    def hvp12_g(self, x, y, eta, xi, v):
        self._check(x)
        d1, d2 = self._derivs(x, y, eta)
        out = -d2 * (x[1:] @ v) * np.concatenate(([1.0], y))
        out[1:] -= d1 * np.asarray(v)
        return out

    def constants(self):
        curv = (self.h + self.b) * self.beta
        return ProblemConstants(
            mu_g=2.0 * self.lam - curv * self.radius ** 2 / 4.0,
            L_g0=max(self.h, self.b) * self.radius + 2.0 * self.lam * self.box * math.sqrt(self.d_xi),
            L_g1=2.0 * self.lam, d_x=self.d_xi + 1, d_y=self.d_xi,
            L_f0=max(self.h, self.b) * (1.0 + self.box * math.sqrt(self.d_xi)))

    def y_star(self, x, xi):
        """Inner solution by Newton's method on the empirical demand sample.

        Only available in empirical mode, where the conditional expectation is
        a finite average.
        """
        if not self.finite:
            raise NotImplementedError("y* needs the empirical nominal distribution")
        self._check(x)
        x = np.asarray(x, dtype=float)
        base = self.covariate(xi)
        etas = self.demands[xi]
        y = base.copy()
        x1 = x[1:]
        for _ in range(50):
            d1, d2 = smoothed_newsvendor_derivs(x[0] + x1 @ y, etas, self.h, self.b, self.beta)
            grad = -d1.mean() * x1 + 2.0 * self.lam * (y - base)
            hess = -d2.mean() * np.outer(x1, x1) + 2.0 * self.lam * np.eye(self.d_xi)
            step = np.linalg.solve(hess, grad)
            y = y - step
            if np.linalg.norm(step) < 1e-14 * (1.0 + np.linalg.norm(y)):
                break
        return y

    def initial_x(self):
        return np.zeros(self.d_xi + 1)

    def inner_init(self, x, xi):
        # The adversary starts from the nominal covariate.
        return np.array(self.covariate(xi), dtype=float)

    def test_loss(self, x, rng=None, split="test"):
        """Unsmoothed newsvendor cost of the rule ``x`` on a shifted held-out sample.

        ``split="validation"`` scores an independent sample from the same
        shifted distribution, for tuning without touching the test set.
        """
        xi, eta = self._held_out[split]
        w = x[0] + xi @ np.asarray(x)[1:]
        return float(np.mean(newsvendor_cost(w, eta, self.h, self.b)))

    # -- fast paths -------------------------------------------------------
    def sgd_epoch(self, x, xi, y, noises, step):
        self._check(x)
        return _backend.kernels.newsvendor_epoch(
            np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(self.covariate(xi), dtype=float),
            np.asarray(y, dtype=float), np.ascontiguousarray(noises, dtype=float),
            self.lam, self.h, self.b, self.beta, step)

    def neumann_chain(self, x, y, xi, r, noises, scale):
        self._check(x)
        return _backend.kernels.newsvendor_neumann(
            np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(y, dtype=float),
            np.asarray(r, dtype=float), np.ascontiguousarray(noises, dtype=float),
            self.lam, self.h, self.b, self.beta, scale)


def make_wdro_si_instance(d_xi=5, lam=10.0, h=1.0, b=2.0, beta=5.0, seed=0, **params):
    return WdroSiProblem(d_xi=d_xi, lam=lam, h=h, b=b, beta=beta, seed=seed, **params)

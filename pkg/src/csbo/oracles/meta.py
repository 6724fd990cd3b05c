import math

import numpy as np

from .. import _backend
from .base import ProblemConstants, ProblemOracle

# Tail level for the feature-norm bound behind the declared smoothness:
# P(||a||^2 > d + 2 sqrt(d t) + 2 t) <= exp(-t) for a ~ N(0, I_d).
_TAIL_T = -math.log(1e-12)


def _softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class MetaLearningProblem(ProblemOracle):
    """Multi-task logistic regression with a proximal coupling to ``x``.

    Task ``i`` adapts a classifier ``y`` (a ``d x C`` matrix, flattened
    row-major) by minimizing its multiclass logistic loss plus
    ``lam/2 ||y - x||^2``; ``x`` is the shared initialization. Noise is a
    minibatch ``(features (B, d), labels (B,))`` drawn from the task's true
    classifier ``x_bar + delta_i``.

    Parameters
    ----------
    M : int
        Number of tasks.
    d, C : int
        Feature dimension and number of classes (``C >= 2``).
    lam : float
        Proximal weight; also the strong-convexity modulus of the inner
        problem.
    batch : int
        Samples per noise draw.
    signal : float
        Typical logit scale of the true classifiers.
    task_spread : float
        Relative size of the per-task deviations ``delta_i``.
    n_adapt, n_test : int
        Per-task sizes of the fixed held-out sets used by ``test_loss``.
    """

    name = "meta"

    def __init__(self, M=10, d=20, C=5, lam=2.0, batch=1, seed=0, signal=2.0,
                 task_spread=0.5, n_adapt=20, n_test=200, adapt_steps=20,
                 region_radius=5.0):
        if M < 1 or d < 1:
            raise ValueError("need M >= 1 and d >= 1")
        if C < 2:
            raise ValueError(f"need at least two classes, got C={C}")
        if not lam > 0:
            raise ValueError("lam must be positive")
        if batch < 1:
            raise ValueError("batch must be >= 1")
        self.M, self.d, self.C = int(M), int(d), int(C)
        self.lam, self.batch = float(lam), int(batch)
        self.adapt_steps = int(adapt_steps)
        self.region_radius = float(region_radius)
        # Task parameters come from their own stream so that changing M does
        # not move the first tasks around.
        ss = np.random.SeedSequence(seed)
        base_ss, task_ss, eval_ss = ss.spawn(3)
        scale = signal / math.sqrt(d)
        self.x_bar = np.random.default_rng(base_ss).standard_normal((d, C)) * scale
        task_rng = np.random.default_rng(task_ss)
        self.true_classifiers = np.stack([
            self.x_bar + task_spread * scale * task_rng.standard_normal((d, C))
            for _ in range(self.M)])
        eval_rng = np.random.default_rng(eval_ss)
        self._adapt_sets = [self._draw(i, n_adapt, eval_rng) for i in range(self.M)]
        self._test_sets = [self._draw(i, n_test, eval_rng) for i in range(self.M)]

    @property
    def dim(self):
        return self.d * self.C

    def _draw(self, i, n, rng):
        feats = rng.standard_normal((n, self.d))
        probs = _softmax_rows(feats @ self.true_classifiers[i])
        u = rng.random((n, 1))
        labels = np.minimum((np.cumsum(probs, axis=1) < u).sum(axis=1), self.C - 1)
        return feats, labels.astype(np.int64)

    # -- samplers ---------------------------------------------------------
    def sample_context(self, rng):
        return int(rng.integers(self.M))

    def sample_noise_batch(self, xi, n, rng):
        feats, labels = self._draw(xi, n * self.batch, rng)
        return (feats.reshape(n, self.batch, self.d),
                labels.reshape(n, self.batch))

    def noise_item(self, batch, j):
        return batch[0][j], batch[1][j]

    def iter_noise(self, batch):
        return zip(batch[0], batch[1])

    def noise_count(self, batch):
        return batch[0].shape[0]

    # -- oracles ----------------------------------------------------------
    def loss(self, y, eta):
        """Mean multiclass logistic loss of classifier ``y`` on a minibatch."""
        feats, labels = eta
        logp = _log_softmax_rows(feats @ np.reshape(y, (self.d, self.C)))
        return float(-logp[np.arange(len(labels)), labels].mean())

    def _loss_grad(self, y, eta):
        feats, labels = eta
        p = _softmax_rows(feats @ np.reshape(y, (self.d, self.C)))
        p[np.arange(len(labels)), labels] -= 1.0
        return (feats.T @ p / len(labels)).ravel()

    def grad1_f(self, x, y, eta, xi):
        return np.zeros(self.dim)

    def grad2_f(self, x, y, eta, xi):
        return self._loss_grad(y, eta)

    def grad2_g(self, x, y, eta, xi):
        return self._loss_grad(y, eta) + self.lam * (np.asarray(y) - x)

    def hvp22_g(self, x, y, eta, xi, v):
        feats, _ = eta
        p = _softmax_rows(feats @ np.reshape(y, (self.d, self.C)))
        s = feats @ np.reshape(v, (self.d, self.C))
        inner = p * s - p * (p * s).sum(axis=1, keepdims=True)
        return (feats.T @ inner / feats.shape[0]).ravel() + self.lam * np.asarray(v)

    def hvp12_g(self, x, y, eta, xi, v):
        return -self.lam * np.asarray(v, dtype=float)

    def constants(self):
        d = self.d
        feat_sq = d + 2.0 * math.sqrt(d * _TAIL_T) + 2.0 * _TAIL_T
        return ProblemConstants(
            mu_g=self.lam, L_g0=math.sqrt(2.0 * d) + self.lam * self.region_radius,
            L_g1=self.lam + 0.5 * feat_sq, d_x=self.dim, d_y=self.dim)

    # -- evaluation -------------------------------------------------------
    def adapt(self, x, steps=None):
        """Per-task classifiers after gradient steps on the regularized train loss."""
        steps = self.adapt_steps if steps is None else steps
        X = np.reshape(x, (self.d, self.C))
        out = []
        for feats, labels in self._adapt_sets:
            step = 1.0 / (self.lam + 0.5 * np.mean(np.sum(feats ** 2, axis=1)))
            Y = X.copy()
            rows = np.arange(len(labels))
            for _ in range(steps):
                p = _softmax_rows(feats @ Y)
                p[rows, labels] -= 1.0
                Y = Y - step * (feats.T @ p / len(labels) + self.lam * (Y - X))
            out.append(Y)
        return out

    def test_loss(self, x, rng=None):
        """Average held-out loss over tasks after adapting from ``x``."""
        adapted = self.adapt(x)
        return float(np.mean([self.loss(Y.ravel(), test)
                              for Y, test in zip(adapted, self._test_sets)]))

    # -- fast paths -------------------------------------------------------
    def sgd_epoch(self, x, xi, y, noises, step):
        feats, labels = noises
        return _backend.kernels.logistic_epoch(
            np.ascontiguousarray(x, dtype=float), np.asarray(y, dtype=float),
            np.ascontiguousarray(feats), np.ascontiguousarray(labels, dtype=np.int64),
            self.lam, step, self.C)

    def neumann_chain(self, x, y, xi, r, noises, scale):
        return _backend.kernels.logistic_neumann(
            np.ascontiguousarray(y, dtype=float), np.asarray(r, dtype=float),
            np.ascontiguousarray(noises[0]), self.lam, scale, self.C)


def make_meta_instance(M=10, d=20, C=5, lam=2.0, batch=1, seed=0, **params):
    return MetaLearningProblem(M=M, d=d, C=C, lam=lam, batch=batch, seed=seed, **params)

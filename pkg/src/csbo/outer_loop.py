"""Outer stochastic gradient loop and the baseline solvers it is compared against."""
import math
import time
from dataclasses import dataclass

import numpy as np

from .estimators import GradientSample, get_estimator
from .ledger import CostLedger, DivergenceError
from .oracles.wdro import smoothed_newsvendor_derivs

LAMBDA_GRID = (1.0, 10.0, 50.0, 100.0, 150.0)


@dataclass(frozen=True)
class Schedule:
    """Outer stepsize rule.

    ``constant`` uses ``alpha0`` throughout. ``sqrt-then-inverse`` uses
    ``alpha0 / sqrt(t)`` up to ``t0`` and ``alpha0 * sqrt(t0) / t`` after,
    which is continuous at ``t0``.
    """

    kind: str = "constant"
    alpha0: float = 0.01
    t0: int = 1

    KINDS = ("constant", "sqrt-then-inverse")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (math.isfinite(self.alpha0) and self.alpha0 > 0):
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if self.t0 < 1:
            raise ValueError(f"t0 must be >= 1, got {self.t0}")

    def __call__(self, t):
        if self.kind == "constant":
            return self.alpha0
        if t <= self.t0:
            return self.alpha0 / math.sqrt(t)
        return self.alpha0 * math.sqrt(self.t0) / t


@dataclass
class RunRecord:
    """One logged iteration: the metric at ``x_t`` and cumulative cost through step ``t``."""

    t: int
    metric: float
    cost: CostLedger
    wall_ms: float


@dataclass
class RunResult:
    x_hat: np.ndarray
    x_last: np.ndarray
    trace: list
    ledger: CostLedger
    pick_index: int = 1
    metric_name: str = "grad_norm_sq"


def evaluation_metric(problem):
    """Name and callable of the progress metric logged for ``problem``."""
    if problem.has_grad_F:
        return "grad_norm_sq", lambda x: float(np.sum(problem.grad_F(x) ** 2))
    return "test_loss", problem.test_loss


def _resolve_estimator(estimator):
    if callable(estimator):
        return estimator
    return get_estimator(estimator)


class _Runner:
    """Shared bookkeeping for the outer loops: uniform pick, logging, divergence."""

    def __init__(self, problem, T, seed, x1, log_interval, output, callback, timing):
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        if log_interval < 1:
            raise ValueError(f"log_interval must be >= 1, got {log_interval}")
        if output not in ("uniform", "last"):
            raise ValueError(f"output must be 'uniform' or 'last', got {output!r}")
        self.problem, self.T = problem, T
        self.log_interval, self.output = log_interval, output
        self.callback, self.timing = callback, timing
        est_ss, pick_ss = np.random.SeedSequence(seed).spawn(2)
        self.est_rng = np.random.default_rng(est_ss)
        self.pick_rng = np.random.default_rng(pick_ss)
        self.x = np.array(problem.initial_x() if x1 is None else x1, dtype=np.float64)
        self.ledger = CostLedger()
        self.trace = []
        self.metric_name, self.metric = evaluation_metric(problem)
        self.candidate, self.pick_index = self.x.copy(), 1

    def visit(self, t):
        # Reservoir of size one over x_1..x_T keeps the pick exactly uniform.
        if t == 1 or self.pick_rng.random() * t < 1.0:
            self.candidate, self.pick_index = self.x.copy(), t

    def log(self, t):
        if t == 1 or t == self.T or t % self.log_interval == 0:
            cost = self.ledger.copy()
            if not self.timing:
                cost.wall_nanos = 0
            rec = RunRecord(t, self.metric(self.x), cost, cost.wall_nanos / 1e6)
            self.trace.append(rec)
            if self.callback is not None:
                self.callback(rec)
            return rec
        return None

    def step(self, t, direction, alpha):
        x_new = self.x - alpha * direction
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"outer iterate became non-finite at t={t}",
                                  t=t, trace=list(self.trace))
        self.x = x_new

    def fail(self, t, exc):
        return DivergenceError(f"{exc} (outer iteration t={t})", epoch=exc.epoch,
                               step=exc.step, t=t, trace=list(self.trace))

    def result(self):
        if self.output == "last":
            # x_T is the last iterate at which a gradient was taken.
            x_hat, idx = self.x_T, self.T
        else:
            x_hat, idx = self.candidate, self.pick_index
        return RunResult(x_hat=x_hat, x_last=self.x.copy(), trace=self.trace,
                         ledger=self.ledger, pick_index=idx,
                         metric_name=self.metric_name)


def run_sgd(problem, estimator, config, T, schedule, seed=0, x1=None,
            log_interval=1, output="uniform", callback=None, timing=True,
            stop=None):
    """Outer SGD ``x_{t+1} = x_t - alpha_t v(x_t)`` with a stochastic hypergradient.

    Parameters
    ----------
    problem : ProblemOracle
    estimator : str or callable
        ``"dl-sgd"``, ``"rt-mlmc"`` or a callable with the estimator signature
        ``(problem, x, config, rng, ledger, y_init) -> GradientSample``.
    config : EstimatorConfig
    T : int
        Number of gradient steps.
    schedule : Schedule
    seed : int
    x1 : ndarray, optional
        Starting point; defaults to ``problem.initial_x()``.
    log_interval : int
        A trace row is recorded at ``t = 1``, every multiple of this, and ``T``.
    output : {"uniform", "last"}
        Return an iterate drawn uniformly from ``x_1..x_T``, or ``x_T``.
    callback : callable, optional
        Called with each :class:`RunRecord` as it is logged.
    timing : bool
        If false, wall-clock columns are recorded as zero so traces are
        reproducible byte for byte.
    stop : callable, optional
        Called with each logged :class:`RunRecord`; a true return ends the
        run after that iteration's step.

    Returns
    -------
    RunResult
    """
    est = _resolve_estimator(estimator)
    run = _Runner(problem, T, seed, x1, log_interval, output, callback, timing)
    y_prev = None
    for t in range(1, T + 1):
        run.visit(t)
        run.x_T = run.x.copy()
        try:
            sample = est(problem, run.x, config, run.est_rng, run.ledger,
                         y_init=y_prev if config.warm_start else None)
        except DivergenceError as exc:
            raise run.fail(t, exc) from None
        if config.warm_start:
            y_prev = sample.y_inner
        rec = run.log(t)
        run.step(t, sample.v, schedule(t))
        if stop is not None and rec is not None and stop(rec):
            run.T = t
            break
    return run.result()


def exact_gradient_estimator(problem, x, config, rng, ledger=None, y_init=None):
    """Deterministic estimator returning the closed-form gradient."""
    return GradientSample(v=problem.grad_F(x), level=0)


def zero_estimator(problem, x, config, rng, ledger=None, y_init=None):
    return GradientSample(v=np.zeros_like(x), level=0)


def run_maml(problem, m, inner_step, T, schedule, seed=0, x1=None,
             log_interval=1, output="uniform", callback=None, timing=True):
    """Outer SGD with an ``m``-step inner gradient recursion and first-order hypergradient.

    For a sampled task the inner loop runs
    ``y_k = y_{k-1} - inner_step * grad_y g(x, y_{k-1}; D_k)`` from
    ``y_0 = x`` on fresh minibatches ``D_k``; the outer direction is the task
    loss gradient at ``y_m`` on a fresh minibatch, with ``dy_m/dx`` taken as
    the identity.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    run = _Runner(problem, T, seed, x1, log_interval, output, callback, timing)
    rng = run.est_rng
    for t in range(1, T + 1):
        run.visit(t)
        run.x_T = run.x.copy()
        t0 = time.perf_counter_ns()
        x = run.x
        task = problem.sample_context(rng)
        batches = problem.sample_noise_batch(task, m, rng)
        y = x.copy()
        for eta in problem.iter_noise(batches):
            y = y - inner_step * problem.grad2_g(x, y, eta, task)
        eta_out = problem.sample_noise(task, rng)
        direction = problem.grad2_f(x, y, eta_out, task)
        cost = CostLedger(xi_samples=1, eta_samples=m + 1, g_grad_evals=m,
                          f_grad_evals=1, inner_iters=m)
        cost.wall_nanos = time.perf_counter_ns() - t0
        run.ledger += cost
        run.log(t)
        run.step(t, direction, schedule(t))
    return run.result()


class _Adam:
    def __init__(self, dim, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.b1, self.b2, self.eps = b1, b2, eps
        self.k = 0

    def direction(self, g):
        self.k += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        m_hat = self.m / (1 - self.b1 ** self.k)
        v_hat = self.v / (1 - self.b2 ** self.k)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def run_wdro_gda(problem, T, T_in, schedule, seed=0, inner_step=0.05, lam=None,
                 x1=None, log_interval=1, callback=None, timing=True):
    """Gradient descent-ascent for robust newsvendor without side information.

    Each step draws one nominal pair ``(xi, eta)``, perturbs the covariate by
    ``T_in`` adaptive-moment ascent steps on
    ``l(w(xi'), eta) - lam ||xi' - xi||^2``, then takes a descent step on the
    loss at the perturbed covariate. ``T_in = 0`` is plain ERM by SGD.
    Returns the last iterate.
    """
    if T_in < 0:
        raise ValueError(f"T_in must be >= 0, got {T_in}")
    lam = problem.lam if lam is None else float(lam)
    h, b, beta = problem.h, problem.b, problem.beta
    run = _Runner(problem, T, seed, x1, log_interval, "last", callback, timing)
    rng = run.est_rng
    for t in range(1, T + 1):
        run.x_T = run.x.copy()
        t0 = time.perf_counter_ns()
        x = run.x
        xi, eta = problem.sample_pair(rng)
        adv = xi.copy()
        adam = _Adam(len(xi))
        for _ in range(T_in):
            d1, _ = smoothed_newsvendor_derivs(x[0] + x[1:] @ adv, eta, h, b, beta)
            adv = adv + inner_step * adam.direction(d1 * x[1:] - 2.0 * lam * (adv - xi))
        d1, _ = smoothed_newsvendor_derivs(x[0] + x[1:] @ adv, eta, h, b, beta)
        direction = d1 * np.concatenate(([1.0], adv))
        cost = CostLedger(xi_samples=1, eta_samples=1, g_grad_evals=T_in,
                          f_grad_evals=1, inner_iters=T_in)
        cost.wall_nanos = time.perf_counter_ns() - t0
        run.ledger += cost
        run.log(t)
        run.step(t, direction, schedule(t))
    return run.result()

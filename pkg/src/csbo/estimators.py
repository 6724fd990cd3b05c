"""Hypergradient estimators: the single-level DL-SGD estimator and its
randomized-truncation multilevel counterpart (RT-MLMC).

Both consume the random stream in the same order (context, two outer noise
draws, Neumann truncation and its noise, then inner epochs), so calls with
equal seeds share everything up to the epochs RT-MLMC skips.
"""
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .epoch_sgd import epoch_sgd
from .ledger import CostLedger
from .neumann import draw_neumann, hypergrad_correction


@dataclass
class EstimatorConfig:
    """Knobs shared by both estimators.

    ``beta0=None`` defers to the problem's default inner stepsize.
    ``warm_start`` lets the outer loop pass the previous inner solution as the
    starting iterate instead of the problem's fixed initial point.
    """

    K: int
    N: int
    beta0: Optional[float] = None
    warm_start: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.beta0 is not None and not self.beta0 > 0:
            raise ValueError(f"beta0 must be positive, got {self.beta0}")


@dataclass
class GradientSample:
    v: np.ndarray
    level: int
    cost: CostLedger = field(default_factory=CostLedger)
    y_inner: Optional[np.ndarray] = None


def level_probabilities(K):
    """Truncated geometric law on ``{1, ..., K}`` with ``p_k`` proportional to ``2**-k``."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    k = np.arange(1, K + 1)
    return 2.0 ** -k / (1.0 - 2.0 ** -K)


def sample_level(K, rng):
    """Draw a level from :func:`level_probabilities` by inverting the CDF."""
    cdf = np.cumsum(level_probabilities(K))
    k = int(np.searchsorted(cdf, rng.random(), side="right")) + 1
    return min(k, K)


def level_value(oracle, x, xi, y, eta_cross, eta_f, N, draw, ledger=None):
    """Hypergradient estimate with the inner solution replaced by ``y``."""
    g1 = oracle.grad1_f(x, y, eta_f, xi)
    if ledger is not None:
        ledger.f_grad_evals += 1
    return g1 - hypergrad_correction(oracle, x, y, xi, eta_cross, eta_f, N,
                                     ledger=ledger, draw=draw)


def _shared_draws(oracle, N, rng, cost):
    xi = oracle.sample_context(rng)
    eta_cross = oracle.sample_noise(xi, rng)
    eta_f = oracle.sample_noise(xi, rng)
    cost.xi_samples += 1
    cost.eta_samples += 2
    draw = draw_neumann(oracle, xi, N, rng, cost)
    return xi, eta_cross, eta_f, draw


def _start(oracle, x, xi, y_init):
    return oracle.inner_init(x, xi) if y_init is None else y_init


def _beta0(oracle, config):
    return oracle.default_beta0() if config.beta0 is None else config.beta0


def dl_sgd_estimator(oracle, x, config, rng, ledger=None, y_init=None):
    """Plug-in hypergradient at the inner iterate after ``K`` epochs.

    Parameters
    ----------
    oracle : ProblemOracle
    x : ndarray
    config : EstimatorConfig
    rng : numpy.random.Generator
    ledger : CostLedger, optional
        Incremented by this call's cost, which is also returned on the sample.
    y_init : ndarray, optional
        Inner starting iterate; defaults to ``oracle.inner_init``.

    Returns
    -------
    GradientSample
    """
    t0 = time.perf_counter_ns()
    cost = CostLedger()
    xi, eta_cross, eta_f, draw = _shared_draws(oracle, config.N, rng, cost)
    traj = epoch_sgd(oracle, x, xi, _start(oracle, x, xi, y_init), config.K,
                     _beta0(oracle, config), rng, cost)
    v = level_value(oracle, x, xi, traj.y_K1, eta_cross, eta_f, config.N, draw, cost)
    cost.wall_nanos += time.perf_counter_ns() - t0
    if ledger is not None:
        ledger += cost
    return GradientSample(v=v, level=config.K, cost=cost, y_inner=traj.y_K1)


def rt_mlmc_estimator(oracle, x, config, rng, ledger=None, y_init=None, level=None):
    """Randomized-truncation multilevel estimator.

    Draws a level ``k`` from :func:`level_probabilities`, runs ``k`` epochs
    of one inner trajectory and returns ``u_1 + (u_{k+1} - u_k) / p_k``,
    where ``u_l`` is :func:`level_value` at the start of epoch ``l``. All
    three values share the context, noise and Neumann draw, so in
    expectation over ``k`` the estimate equals the DL-SGD estimate with
    ``K`` epochs on the same randomness.

    The level comes from a child stream of ``rng`` so that the main stream
    stays aligned with :func:`dl_sgd_estimator`; pass ``level`` to fix it.
    """
    t0 = time.perf_counter_ns()
    cost = CostLedger()
    K, N = config.K, config.N
    xi, eta_cross, eta_f, draw = _shared_draws(oracle, N, rng, cost)
    if level is None:
        level = sample_level(K, rng.spawn(1)[0])
    elif not 1 <= level <= K:
        raise ValueError(f"level must be in [1, {K}], got {level}")
    p = level_probabilities(K)[level - 1]
    traj = epoch_sgd(oracle, x, xi, _start(oracle, x, xi, y_init), level,
                     _beta0(oracle, config), rng, cost)
    u_1 = level_value(oracle, x, xi, traj.y_1, eta_cross, eta_f, N, draw, cost)
    if level == 1:
        u_k = u_1
    else:
        u_k = level_value(oracle, x, xi, traj.y_K, eta_cross, eta_f, N, draw, cost)
    u_k1 = level_value(oracle, x, xi, traj.y_K1, eta_cross, eta_f, N, draw, cost)
    v = u_1 + (u_k1 - u_k) / p
    cost.wall_nanos += time.perf_counter_ns() - t0
    if ledger is not None:
        ledger += cost
    return GradientSample(v=v, level=level, cost=cost, y_inner=traj.y_K1)


ESTIMATORS = {
    "dl-sgd": dl_sgd_estimator,
    "rt-mlmc": rt_mlmc_estimator,
}


def get_estimator(kind):
    try:
        return ESTIMATORS[kind]
    except KeyError:
        raise ValueError(f"unknown estimator {kind!r}; choose from {sorted(ESTIMATORS)}") from None

"""Epoch-doubling SGD for the strongly convex inner problem."""
from dataclasses import dataclass

import numpy as np

from .ledger import DivergenceError


@dataclass
class EpochSgdOutput:
    """Epoch averages of one inner trajectory.

    ``y_1`` echoes the initial iterate, ``y_K`` is the average after
    ``K - 1`` epochs and ``y_K1`` the average after ``K`` epochs.
    """

    y_1: np.ndarray
    y_K: np.ndarray
    y_K1: np.ndarray
    inner_iters: int
    eta_draws: int


def inner_iterations(K):
    """Number of SGD steps (and noise draws) taken by ``K`` epochs."""
    return 2 ** (K + 1) - 2 if K >= 1 else 0


def epoch_sgd(oracle, x, xi, y_init, K, beta0, rng, ledger=None):
    """Run ``K`` epochs of SGD on ``y -> E[g(x, y; eta, xi) | xi]``.

    Epoch ``k`` takes ``2**k`` steps with stepsize ``beta0 / 2**k`` from the
    previous epoch's average and returns the average of the iterates it
    visited before each update.

    Parameters
    ----------
    oracle : ProblemOracle
    x, xi
        Upper-level variable and context, held fixed.
    y_init : ndarray
        Starting iterate.
    K : int
        Number of epochs, ``K >= 0``.
    beta0 : float
        Base stepsize.
    rng : numpy.random.Generator
        Source of the conditional noise draws.
    ledger : CostLedger, optional
        Incremented by the draws and gradient evaluations performed.

    Returns
    -------
    EpochSgdOutput

    Raises
    ------
    DivergenceError
        If an iterate becomes non-finite.
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    if not beta0 > 0:
        raise ValueError(f"beta0 must be positive, got {beta0}")
    y_1 = np.array(y_init, dtype=np.float64)
    y_prev, y = y_1, y_1
    steps = 0
    for k in range(1, K + 1):
        n = 2 ** k
        noises = oracle.sample_noise_batch(xi, n, rng)
        try:
            avg = oracle.sgd_epoch(x, xi, y, noises, beta0 / n)
        except FloatingPointError as exc:
            step = exc.args[0] if exc.args else None
            raise DivergenceError(
                f"inner iterate became non-finite in epoch {k} at step {step}",
                epoch=k, step=step) from None
        steps += n
        if ledger is not None:
            ledger.eta_samples += n
            ledger.g_grad_evals += n
            ledger.inner_iters += n
        y_prev, y = y, avg
    return EpochSgdOutput(y_1=y_1, y_K=y_prev if K >= 1 else y_1, y_K1=y,
                          inner_iters=steps, eta_draws=steps)

"""Randomly truncated Neumann series for the inverse inner Hessian."""
from dataclasses import dataclass

import numpy as np


@dataclass
class NeumannDraw:
    """Truncation level and the noise that feeds each Hessian factor."""

    n_hat: int
    noises: object

    @property
    def cost(self):
        return self.n_hat


def draw_neumann(oracle, xi, N, rng, ledger=None):
    """Draw a truncation level uniform on ``{0, ..., N-1}`` and its noise."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    n_hat = int(rng.integers(N))
    noises = oracle.sample_noise_batch(xi, n_hat, rng)
    if ledger is not None:
        ledger.eta_samples += n_hat
    return NeumannDraw(n_hat, noises)


def apply_neumann(oracle, x, y, xi, v, N, draw, ledger=None):
    """Apply a drawn inverse-Hessian estimate to ``v``.

    Returns ``N/(2L) * prod_n (I - H_n/(2L)) v`` where ``L = L_g1`` and
    ``H_n`` is the inner Hessian at noise ``n`` of ``draw``. Each factor
    costs one Hessian-vector product; no matrix is formed.
    """
    scale = 0.5 / oracle.constants().L_g1
    r = oracle.neumann_chain(x, y, xi, v, draw.noises, scale)
    if ledger is not None:
        ledger.g_hvp_evals += draw.n_hat
    return (N * scale) * r


def neumann_apply(oracle, x, y, xi, v, N, rng, ledger=None):
    """Draw a truncation level and apply the resulting estimate to ``v``."""
    draw = draw_neumann(oracle, xi, N, rng, ledger)
    return apply_neumann(oracle, x, y, xi, v, N, draw, ledger)


def hypergrad_correction(oracle, x, y, xi, eta_cross, eta_f, N, rng=None,
                         ledger=None, draw=None):
    """Cross-Hessian times inverse-Hessian estimate times the outer gradient in y.

    ``draw`` reuses a given truncation and noise; otherwise one is drawn from
    ``rng``.
    """
    if draw is None:
        draw = draw_neumann(oracle, xi, N, rng, ledger)
    v = oracle.grad2_f(x, y, eta_f, xi)
    r = apply_neumann(oracle, x, y, xi, v, N, draw, ledger)
    out = oracle.hvp12_g(x, y, eta_cross, xi, r)
    if ledger is not None:
        ledger.f_grad_evals += 1
        ledger.g_hvp_evals += 1
    return out


def truncated_series(A, v, N, L):
    """Exact mean of the estimator for a fixed Hessian ``A``.

    ``(1/(2L)) sum_{n<N} (I - A/(2L))^n v``, by direct accumulation.
    """
    scale = 0.5 / L
    term = np.array(v, dtype=float)
    total = np.zeros_like(term)
    for _ in range(N):
        total += term
        term = term - scale * (A @ term)
    return scale * total

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csbo import make_meta_instance, make_quadratic_instance
from csbo.ledger import CostLedger
from csbo.neumann import (NeumannDraw, apply_neumann, draw_neumann, hypergrad_correction,
                          neumann_apply, truncated_series)
from csbo.oracles import ProblemConstants

from conftest import ScalarQuadratic


class ScaledIdentity(ScalarQuadratic):
    """Deterministic Hessian ``2 L I`` in three dimensions."""

    def __init__(self, L):
        super().__init__(mu=L, L=L, noise_value=0.0)

    def hvp22_g(self, x, y, eta, xi, v):
        return 2.0 * self.L * np.asarray(v, dtype=float)

    def constants(self):
        return ProblemConstants(mu_g=self.L, L_g0=1.0, L_g1=self.L, d_x=3, d_y=3)


def test_zero_truncation_returns_scaled_vector():
    problem = make_quadratic_instance(3, 3, 3, seed=0)
    v = np.array([1.0, -2.0, 0.5])
    draw = NeumannDraw(0, problem.sample_noise_batch(np.zeros(3), 0, np.random.default_rng(0)))
    out = apply_neumann(problem, np.ones(3), np.zeros(3), np.zeros(3), v, 7, draw)
    np.testing.assert_array_equal(out, 7 / (2 * 4.0) * v)


def test_annihilating_factors():
    problem = ScaledIdentity(L=3.0)
    v = np.array([1.0, 2.0, 3.0])
    for n_hat in (1, 2, 5):
        draw = NeumannDraw(n_hat, np.zeros(n_hat))
        out = apply_neumann(problem, None, None, 0.0, v, 6, draw)
        np.testing.assert_array_equal(out, np.zeros(3))


def test_truncation_level_law_and_cost():
    problem = make_quadratic_instance(2, 2, 2, seed=0)
    rng = np.random.default_rng(1)
    N, trials = 9, 20_000
    levels = np.array([draw_neumann(problem, np.zeros(2), N, rng).n_hat for _ in range(trials)])
    assert levels.min() == 0 and levels.max() == N - 1
    se = levels.std(ddof=1) / math.sqrt(trials)
    assert abs(levels.mean() - (N - 1) / 2) <= 4 * se


def test_ledger_counts_noise_and_products():
    problem = make_quadratic_instance(2, 2, 2, seed=0)
    ledger = CostLedger()
    draw = draw_neumann(problem, np.zeros(2), 10, np.random.default_rng(3), ledger)
    apply_neumann(problem, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), 10, draw, ledger)
    assert ledger.eta_samples == draw.n_hat == ledger.g_hvp_evals == draw.cost


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 30))
def test_truncated_series_matches_matrix_powers(seed, N):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    A = Q @ np.diag(rng.uniform(0.5, 3.0, 4)) @ Q.T
    L = 3.0
    v = rng.standard_normal(4)
    step = np.eye(4) - A / (2 * L)
    direct = sum(np.linalg.matrix_power(step, n) for n in range(N)) @ v / (2 * L)
    np.testing.assert_allclose(truncated_series(A, v, N, L), direct, rtol=1e-10, atol=1e-12)


def test_series_gap_decays_at_slowest_mode_rate():
    problem = make_quadratic_instance(4, 5, 2, seed=3)
    A, mu, L = problem.A, problem.mu_g, problem.L_g1
    v = np.random.default_rng(0).standard_normal(5)
    target = np.linalg.solve(A, v)
    Ns = np.arange(30, 81, 10)
    gaps = [np.linalg.norm(truncated_series(A, v, N, L) - target) for N in Ns]
    for N, gap in zip(Ns, gaps):
        assert gap <= (1 - mu / (2 * L)) ** N * np.linalg.norm(v) / mu
    slope = np.polyfit(Ns, np.log(gaps), 1)[0]
    assert slope == pytest.approx(math.log(1 - mu / (2 * L)), rel=0.1)


def test_apply_allocates_no_matrix():
    # The chain only ever sees vectors; a Hessian oracle that refuses 2-D input still works.
    class VectorOnly(ScalarQuadratic):
        def hvp22_g(self, x, y, eta, xi, v):
            assert np.ndim(v) == 1
            return self.mu * v

    out = neumann_apply(VectorOnly(mu=1.0, L=2.0), np.zeros(1), np.zeros(1), 0.0,
                        np.ones(1), 50, np.random.default_rng(0))
    assert out.shape == (1,)


def test_correction_vanishes_without_outer_dependence():
    problem = ScalarQuadratic(grad2_f_zero=True)
    out = hypergrad_correction(problem, np.zeros(1), np.ones(1), 0.0, 1.0, 1.0, 5,
                               rng=np.random.default_rng(0))
    np.testing.assert_array_equal(out, np.zeros(1))


def test_meta_correction_is_scaled_inverse_estimate():
    problem = make_meta_instance(M=3, d=4, C=3, seed=0)
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((2, 12))
    xi = problem.sample_context(rng)
    eta_c, eta_f = problem.sample_noise(xi, rng), problem.sample_noise(xi, rng)
    draw = draw_neumann(problem, xi, 8, rng)
    out = hypergrad_correction(problem, x, y, xi, eta_c, eta_f, 8, draw=draw)
    ref = apply_neumann(problem, x, y, xi, problem.grad2_f(x, y, eta_f, xi), 8, draw)
    np.testing.assert_allclose(out, -problem.lam * ref, rtol=1e-14)


@pytest.mark.parametrize("N", [5, 20, 50])
def test_quadratic_correction_bias_bound(N):
    problem = make_quadratic_instance(3, 4, 2, seed=1)
    rng = np.random.default_rng(N)
    x = rng.standard_normal(3)
    xi = problem.sample_context(rng)
    y = problem.y_star(x, xi)
    w = problem.grad2_f(x, y, None, xi)
    mu, L = problem.mu_g, problem.L_g1
    expected = -problem.B.T @ truncated_series(problem.A, w, N, L)
    exact = -problem.B.T @ np.linalg.solve(problem.A, w)
    bound = np.linalg.norm(problem.B, 2) * np.linalg.norm(w) / mu * (1 - mu / (2 * L)) ** N
    assert np.linalg.norm(expected - exact) <= bound


def test_correction_mean_matches_truncated_series():
    problem = make_quadratic_instance(3, 4, 2, seed=1)
    rng = np.random.default_rng(9)
    x = rng.standard_normal(3)
    xi = problem.sample_context(rng)
    y = problem.y_star(x, xi)
    N = 20
    samples = np.array([hypergrad_correction(problem, x, y, xi, None, None, N, rng=rng)
                        for _ in range(10_000)])
    expected = -problem.B.T @ truncated_series(problem.A, problem.grad2_f(x, y, None, xi),
                                               N, problem.L_g1)
    se = samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
    assert np.all(np.abs(samples.mean(axis=0) - expected) <= 4 * se)

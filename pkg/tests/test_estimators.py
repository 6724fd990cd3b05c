import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csbo import make_meta_instance, make_quadratic_instance
from csbo.diagnostics import chi_square_gof
from csbo.estimators import (EstimatorConfig, dl_sgd_estimator, get_estimator,
                             level_probabilities, level_value, rt_mlmc_estimator,
                             sample_level)
from csbo.epoch_sgd import epoch_sgd
from csbo.ledger import CostLedger
from csbo.neumann import draw_neumann

from conftest import ScalarQuadratic

QUAD = make_quadratic_instance(5, 5, 5, seed=0)
X = np.ones(5)


# -- level law ---------------------------------------------------------------
@given(K=st.integers(1, 40))
def test_level_probabilities_normalized_and_halving(K):
    p = level_probabilities(K)
    assert p.sum() == pytest.approx(1.0, rel=1e-14)
    np.testing.assert_allclose(p[1:] / p[:-1], 0.5)


def test_level_law_small_cases():
    rng = np.random.default_rng(0)
    assert {sample_level(1, rng) for _ in range(200)} == {1}
    np.testing.assert_allclose(level_probabilities(2), [2 / 3, 1 / 3])


@pytest.mark.slow
def test_level_sampler_goodness_of_fit():
    rng = np.random.default_rng(12345)
    K, n = 8, 1_000_000
    counts = np.bincount([sample_level(K, rng) for _ in range(n)], minlength=K + 1)[1:]
    _, pvalue = chi_square_gof(counts, level_probabilities(K))
    assert pvalue > 1e-3


# -- structure ----------------------------------------------------------------
@pytest.mark.parametrize("K", [1, 3, 6])
def test_telescoping_identity_on_shared_randomness(K):
    """sum_k p_k RT(k) equals DL-SGD exactly when both see the same stream."""
    cfg = EstimatorConfig(K=K, N=12)
    for seed in range(5):
        dl = dl_sgd_estimator(QUAD, X, cfg, np.random.default_rng(seed)).v
        p = level_probabilities(K)
        mix = sum(p[k - 1] * rt_mlmc_estimator(QUAD, X, cfg, np.random.default_rng(seed),
                                               level=k).v for k in range(1, K + 1))
        np.testing.assert_allclose(mix, dl, rtol=1e-10, atol=1e-12)


def test_lowest_level_structure():
    cfg = EstimatorConfig(K=4, N=6)
    rng = np.random.default_rng(3)
    sample = rt_mlmc_estimator(QUAD, X, cfg, rng, level=1)
    rng = np.random.default_rng(3)
    xi = QUAD.sample_context(rng)
    eta_c, eta_f = QUAD.sample_noise(xi, rng), QUAD.sample_noise(xi, rng)
    draw = draw_neumann(QUAD, xi, 6, rng)
    traj = epoch_sgd(QUAD, X, xi, np.zeros(5), 1, QUAD.default_beta0(), rng)
    u1 = level_value(QUAD, X, xi, traj.y_1, eta_c, eta_f, 6, draw)
    u2 = level_value(QUAD, X, xi, traj.y_K1, eta_c, eta_f, 6, draw)
    p1 = level_probabilities(4)[0]
    np.testing.assert_allclose(sample.v, u2 / p1 - u1 * (1 / p1 - 1), rtol=1e-12)


@pytest.mark.parametrize("kind", ["dl-sgd", "rt-mlmc"])
def test_constant_outer_gradient_passes_through(kind):
    problem = ScalarQuadratic(grad1=3.5, grad2_f_zero=True)
    est = get_estimator(kind)
    for seed in range(10):
        v = est(problem, np.zeros(1), EstimatorConfig(4, 5), np.random.default_rng(seed)).v
        np.testing.assert_array_equal(v, [3.5])


def test_meta_estimate_is_direct_plus_scaled_inverse_term():
    problem = make_meta_instance(M=3, d=4, C=3, seed=0)
    x = np.random.default_rng(1).standard_normal(12)
    cfg = EstimatorConfig(K=2, N=5)
    v = dl_sgd_estimator(problem, x, cfg, np.random.default_rng(0)).v
    rng = np.random.default_rng(0)
    xi = problem.sample_context(rng)
    problem.sample_noise(xi, rng)
    eta_f = problem.sample_noise(xi, rng)
    draw = draw_neumann(problem, xi, 5, rng)
    y = epoch_sgd(problem, x, xi, np.zeros(12), 2, problem.default_beta0(), rng).y_K1
    scale = 0.5 / problem.constants().L_g1
    inv = 5 * scale * problem.neumann_chain(x, y, xi, problem.grad2_f(x, y, eta_f, xi),
                                            draw.noises, scale)
    np.testing.assert_allclose(v, problem.lam * inv, rtol=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["dl-sgd", "rt-mlmc"]))
def test_same_seed_same_sample(seed, kind):
    est = get_estimator(kind)
    a = est(QUAD, X, EstimatorConfig(5, 10), np.random.default_rng(seed))
    b = est(QUAD, X, EstimatorConfig(5, 10), np.random.default_rng(seed))
    assert np.array_equal(a.v, b.v) and a.level == b.level
    ca, cb = a.cost.as_dict(), b.cost.as_dict()
    ca.pop("wall_nanos"), cb.pop("wall_nanos")
    assert ca == cb


def test_frozen_samples():
    cfg = EstimatorConfig(4, 10)
    dl = dl_sgd_estimator(QUAD, X, cfg, np.random.default_rng(7))
    np.testing.assert_allclose(dl.v, [
        -0.029262308739755022, 0.9202317183818395, 0.8044589040737075,
        0.49878263838127335, 0.7855971580974449], rtol=1e-10)
    rt = rt_mlmc_estimator(QUAD, X, cfg, np.random.default_rng(7))
    assert rt.level == 2
    np.testing.assert_allclose(rt.v, [
        -0.02031796410893022, 0.8449680646164974, 0.816399223798167,
        0.5931965789070169, 0.8558859786979229], rtol=1e-10)


# -- cost accounting ----------------------------------------------------------
@pytest.mark.parametrize("K,N", [(1, 1), (4, 10), (7, 3)])
def test_dl_sgd_cost_exact(K, N):
    for seed in range(20):
        ledger = CostLedger()
        s = dl_sgd_estimator(QUAD, X, EstimatorConfig(K, N), np.random.default_rng(seed), ledger)
        c = s.cost
        n_hat = c.g_hvp_evals - 1
        assert 0 <= n_hat <= N - 1
        assert c.eta_samples - n_hat == 2 ** (K + 1)
        assert c.eta_samples <= N + 2 ** (K + 1) - 1
        assert c.g_grad_evals == c.inner_iters == 2 ** (K + 1) - 2
        assert (c.xi_samples, c.f_grad_evals) == (1, 2)
        assert ledger == c


@pytest.mark.parametrize("K,N", [(1, 4), (5, 10)])
def test_rt_mlmc_cost_exact_given_level(K, N):
    for seed in range(30):
        s = rt_mlmc_estimator(QUAD, X, EstimatorConfig(K, N), np.random.default_rng(seed))
        c, k = s.cost, s.level
        values = 2 if k == 1 else 3
        n_hat = c.g_hvp_evals // values - 1
        assert c.g_hvp_evals == values * (n_hat + 1)
        assert c.g_grad_evals == 2 ** (k + 1) - 2
        assert c.eta_samples == 2 + n_hat + 2 ** (k + 1) - 2
        assert c.f_grad_evals == 2 * values


def test_expected_rt_mlmc_noise_cost_formula():
    # E[eta] = 2 + (N-1)/2 + sum_k p_k (2^{k+1} - 2) = (N-1)/2 + 2K/(1 - 2^-K)
    for K, N in [(4, 10), (8, 20)]:
        p = level_probabilities(K)
        k = np.arange(1, K + 1)
        expected = 2 + (N - 1) / 2 + float(p @ (2.0 ** (k + 1) - 2))
        assert expected == pytest.approx((N - 1) / 2 + 2 * K / (1 - 2.0 ** -K))
        assert expected <= N + 3 * K


# -- statistical behavior -------------------------------------------------------
@pytest.mark.slow
def test_bias_within_envelope():
    from csbo.diagnostics import measure

    K, N = 10, 50
    stats = measure("dl-sgd", QUAD, X, EstimatorConfig(K, N), 2000, seed=4)
    mu, L = QUAD.mu_g, QUAD.L_g1
    envelope = (1 - mu / (2 * L)) ** N / mu + N ** 2 * 2.0 ** (-K / 2)
    assert stats.bias_norm <= envelope + 4 * stats.bias_se


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(0, 5)
    with pytest.raises(ValueError):
        EstimatorConfig(3, 0)
    with pytest.raises(ValueError):
        EstimatorConfig(3, 5, beta0=-1.0)
    with pytest.raises(ValueError):
        rt_mlmc_estimator(QUAD, X, EstimatorConfig(3, 5), np.random.default_rng(0), level=4)
    with pytest.raises(ValueError, match="unknown estimator"):
        get_estimator("sgd")


def test_warm_start_uses_given_inner_point():
    problem = ScalarQuadratic(mu=1.0, noise_value=0.0, grad2_g_zero=True)
    s = dl_sgd_estimator(problem, np.zeros(1), EstimatorConfig(2, 3), np.random.default_rng(0),
                         y_init=np.array([4.0]))
    assert s.y_inner[0] == 4.0
    assert math.isfinite(s.v[0])

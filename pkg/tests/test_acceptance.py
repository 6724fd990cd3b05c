"""Exit criteria, each reported as one pass/fail line and then asserted."""
import json
import math

import numpy as np
import pytest

from csbo import make_meta_instance, make_quadratic_instance
from csbo.cli import main
from csbo.diagnostics import (application_comparison, complexity_sweep, fit_slope,
                              mean_agreement, measure, paired_difference, sweep_slope)
from csbo.epoch_sgd import epoch_sgd
from csbo.estimators import EstimatorConfig, rt_mlmc_estimator
from csbo.neumann import neumann_apply, truncated_series

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

QUAD = make_quadratic_instance(5, 5, 5, seed=0)


def report(capsys, number, title, passed, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'} {title}: {detail}")


# -- 1: inner solver rate ----------------------------------------------------------
def test_criterion_01_epoch_sgd_rate(capsys):
    x, trials = np.ones(5), 500
    beta0, L_g0 = QUAD.default_beta0(), QUAD.constants().L_g0
    rng = np.random.default_rng(2024)
    points, failures = [], []
    for K in range(2, 9):
        errs = []
        for _ in range(trials):
            xi = QUAD.sample_context(rng)
            y = epoch_sgd(QUAD, x, xi, np.zeros(5), K, beta0, rng).y_K1
            errs.append(float(np.sum((y - QUAD.y_star(x, xi)) ** 2)))
        mse, bound = float(np.mean(errs)), 2 * L_g0 ** 2 * 2.0 ** -(K + 1)
        if mse > bound:
            failures.append((K, mse, bound))
        points.append((K, math.log2(mse)))
    slope = fit_slope(points)[0]
    passed = not failures and -1.3 <= slope <= -0.7
    report(capsys, 1, "inner solver MSE bound and rate", passed,
           f"slope={slope:.3f} in [-1.3,-0.7], bound violations={failures}")
    assert passed


# -- 2: inverse-Hessian series bias ----------------------------------------------------
def test_criterion_02_neumann_bias(capsys):
    problem = make_quadratic_instance(3, 4, 2, seed=1)
    A, mu, L = problem.A, problem.mu_g, problem.L_g1
    rng = np.random.default_rng(3)
    v = rng.standard_normal(4)
    exact = np.linalg.solve(A, v)
    detail, passed = [], True
    for N in (5, 20, 50):
        gap = np.linalg.norm(truncated_series(A, v, N, L) - exact)
        envelope = (1 - mu / (2 * L)) ** N * np.linalg.norm(v) / mu
        passed &= gap <= envelope
        detail.append(f"N={N}: {gap:.3g}<={envelope:.3g}")
    N, draws = 20, 10_000
    x, y, xi = np.zeros(3), np.zeros(4), np.zeros(2)
    samples = np.array([neumann_apply(problem, x, y, xi, v, N, rng) for _ in range(draws)])
    se = samples.std(axis=0, ddof=1) / math.sqrt(draws)
    z = float(np.max(np.abs(samples.mean(axis=0) - truncated_series(A, v, N, L)) / se))
    passed &= z <= 4
    report(capsys, 2, "series bias envelope and sampled mean", passed,
           f"{'; '.join(detail)}; Monte Carlo z={z:.2f}<=4")
    assert passed


# -- 3: equal means and bias decay ------------------------------------------------------
def test_criterion_03_bias_equality_and_decay(capsys):
    x, draws = 3 * np.ones(5), 10_000
    zs = {}
    for K, N in [(6, 20), (8, 20), (10, 40)]:
        rt = measure("rt-mlmc", QUAD, x, EstimatorConfig(K, N), draws, seed=11)
        dl = measure("dl-sgd", QUAD, x, EstimatorConfig(K, N), draws, seed=12)
        zs[(K, N)] = mean_agreement(rt, dl)
    biases = [measure("dl-sgd", QUAD, x, EstimatorConfig(K, 40), draws, seed=13).bias_norm
              for K in (2, 4, 6, 8)]
    slope = fit_slope([(K, math.log2(b)) for K, b in zip((2, 4, 6, 8), biases)])[0]
    passed = max(zs.values()) <= 4 and -0.8 <= slope <= -0.2
    report(capsys, 3, "estimator means agree, bias decays in K", passed,
           f"max z={max(zs.values()):.2f}<=4, bias slope={slope:.3f} in [-0.8,-0.2]")
    assert passed


# -- 4: variance scaling ---------------------------------------------------------------
def test_criterion_04_variance_scaling(capsys):
    x, draws, Ks = 3 * np.ones(5), 10_000, (4, 6, 8, 10)
    rt = [measure("rt-mlmc", QUAD, x, EstimatorConfig(K, 40), draws, seed=21).variance
          for K in Ks]
    dl = [measure("dl-sgd", QUAD, x, EstimatorConfig(K, 40), draws, seed=22).variance
          for K in Ks]
    growth = 2.0 ** (2 * fit_slope([(K, math.log2(v)) for K, v in zip(Ks, rt)])[0])
    spread = max(dl) / min(dl)
    passed = growth <= 2 and spread <= 2
    report(capsys, 4, "variance growth in K", passed,
           f"RT growth per K+2={growth:.2f}<=2, DL max/min={spread:.2f}<=2")
    assert passed


# -- 5: cost bounds --------------------------------------------------------------------
def test_criterion_05_cost_bounds(capsys):
    from csbo.diagnostics import draw_samples

    K, N, draws = 8, 20, 10_000
    rt = draw_samples("rt-mlmc", QUAD, np.ones(5), EstimatorConfig(K, N), draws, 31)
    rt_mean = float(np.mean([s.cost.eta_samples for s in rt]))
    dl = draw_samples("dl-sgd", QUAD, np.ones(5), EstimatorConfig(K, N), 1000, 32)
    inner = {s.cost.eta_samples - (s.cost.g_hvp_evals - 1) for s in dl}
    worst = max(s.cost.eta_samples for s in dl)
    passed = rt_mean <= N + 3 * K and inner == {2 ** (K + 1)} and worst <= N + 2 ** (K + 1) - 1
    report(capsys, 5, "noise-sample cost per draw", passed,
           f"RT mean={rt_mean:.2f}<={N + 3 * K}, DL inner part={sorted(inner)}, "
           f"DL max={worst}<={N + 2 ** (K + 1) - 1}")
    assert passed


# -- 6: complexity sweep ---------------------------------------------------------------
def test_criterion_06_complexity_sweep(capsys):
    problem = make_quadratic_instance(2, 2, 1, seed=0, gamma=1.0, sigma=0.1, context_scale=0.1)
    eps = [0.2, 0.1, 0.05]
    slopes, attained = {}, True
    for kind in ("rt-mlmc", "dl-sgd"):
        rows = complexity_sweep(problem, kind, eps, x1=np.ones(2), alpha_c=5.0, t_c=4.0)
        attained &= all(r.attained for r in rows)
        slopes[kind] = sweep_slope(rows)[0]
    passed = (attained and abs(slopes["rt-mlmc"] + 4) <= 1.0
              and abs(slopes["dl-sgd"] + 6) <= 1.0)
    report(capsys, 6, "gradient-evaluation complexity slopes", passed,
           f"RT={slopes['rt-mlmc']:.2f} (-4+-1), DL={slopes['dl-sgd']:.2f} (-6+-1), "
           f"all targets reached={attained}")
    assert passed


# -- 7: wall-time separation -------------------------------------------------------------
def test_criterion_07_wall_time_separation(capsys):
    problem = make_meta_instance(seed=0)
    x = np.zeros(problem.dim)
    cfg = EstimatorConfig(12, 20)
    rt = measure("rt-mlmc", problem, x, cfg, 400, seed=41)
    dl = measure("dl-sgd", problem, x, cfg, 100, seed=42)
    ratio = dl.wall_mean_ns / rt.wall_mean_ns
    passed = ratio >= 5
    report(capsys, 7, "per-draw wall time at K=12", passed, f"DL/RT={ratio:.1f}>=5")
    assert passed


# -- 8: independence from the number of tasks ---------------------------------------------
def test_criterion_08_task_count_independence(capsys):
    Ms, cfg = (10, 20, 50), EstimatorConfig(8, 20)
    problems = {M: make_meta_instance(M=M, seed=0) for M in Ms}
    eta = {M: measure("rt-mlmc", p, np.zeros(p.dim), cfg, 10_000, seed=51).mean_cost.eta_samples
           for M, p in problems.items()}
    # Draws alternate across M so that drift in machine load hits every M alike.
    walls = {M: [] for M in Ms}
    for i in range(2000):
        for M, p in problems.items():
            sample = rt_mlmc_estimator(p, np.zeros(p.dim), cfg, np.random.default_rng(i))
            walls[M].append(sample.cost.wall_nanos)
    wall = {M: float(np.mean(w)) for M, w in walls.items()}
    eta_spread = max(eta.values()) / min(eta.values()) - 1
    wall_spread = max(wall.values()) / min(wall.values()) - 1
    passed = eta_spread < 0.1 and wall_spread < 0.1
    report(capsys, 8, "RT cost constant in task count", passed,
           f"eta spread={eta_spread:.3f}<0.1, wall spread={wall_spread:.3f}<0.1")
    assert passed


# -- 9: robust decision ordering ---------------------------------------------------------
def test_criterion_09_application_ordering(capsys):
    wins, lines = 0, []
    for seed in range(5):
        res = application_comparison(seed)
        won = res.losses["wdro-si"] <= min(res.losses["erm"], res.losses["wdro-gda"])
        wins += won
        lines.append("/".join(f"{res.losses[k]:.4f}" for k in ("wdro-si", "erm", "wdro-gda")))
    passed = wins >= 3
    report(capsys, 9, "side-information decision beats baselines", passed,
           f"wins={wins}/5 (si/erm/gda: {', '.join(lines)})")
    assert passed


# -- 10: paired unbiasedness identity -----------------------------------------------------
def test_criterion_10_paired_identity(capsys):
    zs = [paired_difference(QUAD, 3 * np.ones(5), EstimatorConfig(K, N), 10_000, seed=61)[2]
          for K, N in [(6, 20), (8, 20)]]
    passed = max(zs) <= 4
    report(capsys, 10, "paired RT minus DL has zero mean", passed,
           f"max z={max(zs):.2f}<=4")
    assert passed


# -- 11: determinism ---------------------------------------------------------------------
def test_criterion_11_determinism(capsys, monkeypatch):
    monkeypatch.delenv("CSBO_OUTPUT_DIR", raising=False)
    commands = {
        "run": ["run", "--T", "200", "--K", "4", "--N", "8", "--log-interval", "20"],
        "bench": ["bench", "--set", "K_list=[2,4]", "--N", "8", "--n-trials", "50"],
        "diagnose": ["diagnose", "--K", "4", "--N", "8", "--n-trials", "200",
                     "--set", "K_list=[2,3,4]"],
    }
    same = {}
    for name, argv in commands.items():
        outputs = []
        for _ in range(2):
            assert main(argv + ["--seed", "5", "--no-timing"]) == 0
            outputs.append(capsys.readouterr().out)
        same[name] = outputs[0] == outputs[1] and len(outputs[0]) > 0
    json.loads(outputs[0])
    passed = all(same.values())
    report(capsys, 11, "byte-identical reruns", passed,
           ", ".join(f"{k}={'same' if v else 'differs'}" for k, v in same.items()))
    assert passed

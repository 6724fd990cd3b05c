"""Monte Carlo measurement of estimator bias, variance, cost and timing, and
the scaling-law fits built on them."""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimators import EstimatorConfig, get_estimator
from .ledger import FIELD_NAMES, CostLedger
from .outer_loop import LAMBDA_GRID, Schedule, run_sgd, run_wdro_gda


@dataclass
class EstimatorStats:
    """Summary of ``n_trials`` independent estimator draws.

    ``variance`` is the trace of the sample covariance. ``bias_norm`` is
    ``None`` when the problem has no closed-form gradient.
    """

    n_trials: int
    mean: np.ndarray
    mean_se: np.ndarray
    variance: float
    variance_se: float
    mean_cost: CostLedger
    cost_se: dict
    wall_mean_ns: float
    wall_var_ns: float
    wall_mean_se_ns: float
    bias_norm: Optional[float] = None
    bias_se: Optional[float] = None
    levels: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        out = {
            "n_trials": self.n_trials,
            "mean": self.mean.tolist(),
            "mean_se": self.mean_se.tolist(),
            "variance": self.variance,
            "variance_se": self.variance_se,
            "mean_cost": self.mean_cost.as_dict(),
            "cost_se": dict(self.cost_se),
            "wall_mean_ns": self.wall_mean_ns,
            "wall_var_ns": self.wall_var_ns,
            "wall_mean_se_ns": self.wall_mean_se_ns,
        }
        if self.bias_norm is not None:
            out["bias_norm"] = self.bias_norm
            out["bias_se"] = self.bias_se
        return out


def draw_samples(kind, problem, x, config, n_trials, seed, ledger=None):
    """Independent estimator draws, trial ``i`` on child stream ``i`` of ``seed``.

    Returns the list of :class:`GradientSample`. Drawing with the same seed
    for two estimator kinds pairs their randomness trial by trial.
    """
    est = get_estimator(kind) if isinstance(kind, str) else kind
    streams = np.random.SeedSequence(seed).spawn(n_trials)
    samples = []
    for ss in streams:
        samples.append(est(problem, x, config, np.random.default_rng(ss), ledger))
    return samples


def summarize(samples, problem=None, x=None):
    """Statistics of a list of gradient samples; see :class:`EstimatorStats`."""
    n = len(samples)
    if n < 2:
        raise ValueError("need at least two samples")
    V = np.array([s.v for s in samples])
    # Shifted-data moments: exact zero spread when every draw is identical.
    shift = V[0]
    offset = (V - shift).mean(axis=0)
    mean = shift + offset
    dev = (V - shift) - offset
    sq = np.sum(dev ** 2, axis=1)
    variance = float(sq.sum() / (n - 1))
    variance_se = float(np.std(sq, ddof=1) / math.sqrt(n))
    mean_se = np.sqrt(np.sum(dev ** 2, axis=0) / (n - 1) / n)
    costs = np.array([[getattr(s.cost, f) for f in FIELD_NAMES] for s in samples], dtype=float)
    cost_mean = costs.mean(axis=0)
    cost_se = costs.std(axis=0, ddof=1) / math.sqrt(n)
    wall = costs[:, FIELD_NAMES.index("wall_nanos")]
    stats = EstimatorStats(
        n_trials=n, mean=mean, mean_se=mean_se, variance=variance,
        variance_se=variance_se, mean_cost=CostLedger(*cost_mean),
        cost_se=dict(zip(FIELD_NAMES, cost_se.tolist())),
        wall_mean_ns=float(wall.mean()), wall_var_ns=float(wall.var(ddof=1)),
        wall_mean_se_ns=float(wall.std(ddof=1) / math.sqrt(n)),
        levels=np.array([s.level for s in samples]))
    if problem is not None and problem.has_grad_F:
        diff = mean - problem.grad_F(x)
        bias = float(np.linalg.norm(diff))
        cov = dev.T @ dev / (n - 1)
        if bias > 0:
            # Delta method for the norm of a mean.
            se = math.sqrt(max(float(diff @ cov @ diff), 0.0) / n) / bias
        else:
            se = math.sqrt(variance / n)
        stats.bias_norm, stats.bias_se = bias, se
    return stats


def measure(kind, problem, x, config, n_trials, seed=0, ledger=None):
    """Draw ``n_trials`` estimates at ``x`` and summarize them.

    Parameters
    ----------
    kind : str
        Estimator name, ``"dl-sgd"`` or ``"rt-mlmc"``.
    problem : ProblemOracle
    x : ndarray
    config : EstimatorConfig
    n_trials : int
        At least 2.
    seed : int
    ledger : CostLedger, optional
        Receives the total cost of all draws.

    Returns
    -------
    EstimatorStats
    """
    if n_trials < 2:
        raise ValueError("n_trials must be >= 2")
    samples = draw_samples(kind, problem, x, config, n_trials, seed, ledger)
    return summarize(samples, problem, x)


def paired_difference(problem, x, config, n_trials, seed=0):
    """Trial-wise RT-MLMC minus DL-SGD on shared randomness.

    Returns the per-coordinate mean difference, its standard error and the
    largest absolute z-score.
    """
    rt = draw_samples("rt-mlmc", problem, x, config, n_trials, seed)
    dl = draw_samples("dl-sgd", problem, x, config, n_trials, seed)
    D = np.array([a.v - b.v for a, b in zip(rt, dl)])
    mean = D.mean(axis=0)
    se = D.std(axis=0, ddof=1) / math.sqrt(n_trials)
    z = np.abs(mean) / np.where(se > 0, se, np.inf)
    return mean, se, float(z.max())


def mean_agreement(stats_a, stats_b):
    """Largest per-coordinate gap between two means in combined standard errors."""
    se = np.sqrt(stats_a.mean_se ** 2 + stats_b.mean_se ** 2)
    gap = np.abs(stats_a.mean - stats_b.mean)
    return float(np.max(np.where(se > 0, gap / np.where(se > 0, se, 1.0),
                                 np.where(gap > 0, np.inf, 0.0))))


def fit_slope(points):
    """Ordinary least squares ``v = slope * u + intercept``.

    Parameters
    ----------
    points : sequence of (u, v)
        At least three points with at least two distinct ``u``.

    Returns
    -------
    slope, intercept, r2 : float
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("need at least three (u, v) points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    u, v = pts[:, 0], pts[:, 1]
    du = u - u.mean()
    sxx = float(du @ du)
    if sxx == 0.0:
        raise ValueError("u values are all equal")
    slope = float(du @ (v - v.mean())) / sxx
    intercept = float(v.mean() - slope * u.mean())
    resid = v - (slope * u + intercept)
    dv = v - v.mean()
    sst = float(dv @ dv)
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return slope, intercept, r2


def finite_diff_grad(fn, x, step=1e-5):
    """Central-difference gradient of a scalar function."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return g


def chi_square_gof(counts, probs):
    """Pearson goodness-of-fit statistic and p-value for observed counts."""
    from scipy.stats import chi2

    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    expected = counts.sum() * probs
    stat = float(np.sum((counts - expected) ** 2 / expected))
    return stat, float(chi2.sf(stat, len(counts) - 1))


@dataclass
class SweepRow:
    eps: float
    K: int
    N: int
    alpha: float
    T_max: int
    attained: bool
    t_hit: Optional[int]
    g_grad_evals: int
    eta_samples: int
    f_grad_evals: int
    xi_samples: int


def sweep_parameters(eps, k0=0.0, kc=2.0, n0=4.0, nc=2.0, alpha_c=1.0, t_c=1.0):
    """``K, N = O(log 1/eps)``, ``alpha = O(eps^2)`` and ``T = O(eps^-4)``."""
    log_inv = math.log2(1.0 / eps)
    K = max(1, math.ceil(k0 + kc * log_inv))
    N = max(1, math.ceil(n0 + nc * log_inv))
    return K, N, alpha_c * eps ** 2, max(1, math.ceil(t_c * eps ** -4))


def complexity_sweep(problem, kind, eps_list, seed=0, x1=None, **scalings):
    """Cost to drive the running mean of ``||grad F(x_t)||^2`` below ``eps^2``.

    For each ``eps`` the outer loop runs with parameters from
    :func:`sweep_parameters` and stops at the first ``t`` where
    ``(1/t) sum_{s<=t} ||grad F(x_s)||^2 <= eps^2``, i.e. where the
    uniformly drawn output meets the target in expectation. Cumulative
    costs at that ``t`` are reported; a row with ``attained=False`` carries
    the cost of the full budget.
    """
    eps_list = list(eps_list)
    if len(eps_list) < 2 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing with at least two entries")
    if not problem.has_grad_F:
        raise ValueError("complexity sweep needs a closed-form gradient")
    rows = []
    for eps in eps_list:
        K, N, alpha, T = sweep_parameters(eps, **scalings)
        running = {"sum": 0.0}
        target = eps ** 2

        def stop(rec, running=running, target=target):
            running["sum"] += rec.metric
            return running["sum"] / rec.t <= target

        res = run_sgd(problem, kind, EstimatorConfig(K, N), T,
                      Schedule("constant", alpha), seed=seed, x1=x1,
                      log_interval=1, output="uniform", stop=stop, timing=False)
        last = res.trace[-1]
        attained = running["sum"] / last.t <= target
        rows.append(SweepRow(
            eps=eps, K=K, N=N, alpha=alpha, T_max=T, attained=attained,
            t_hit=last.t if attained else None,
            g_grad_evals=last.cost.g_grad_evals, eta_samples=last.cost.eta_samples,
            f_grad_evals=last.cost.f_grad_evals, xi_samples=last.cost.xi_samples))
    return rows


def sweep_slope(rows, column="g_grad_evals"):
    """Log-log slope of a cost column against ``eps`` over attained rows."""
    pts = [(math.log2(r.eps), math.log2(getattr(r, column))) for r in rows if r.attained]
    if len(pts) < 3:
        raise ValueError("need at least three attained rows")
    return fit_slope(pts)


@dataclass
class ApplicationResult:
    """Shifted-test losses of the side-information solver and its baselines."""

    seed: int
    losses: dict
    lambdas: dict

    @property
    def side_info_wins(self):
        si = self.losses["wdro-si"]
        return si <= self.losses["erm"] and si <= self.losses["wdro-gda"]


def application_comparison(seed, T=3000, T_in=10, K=4, N=10, alpha0=0.5, t0=100,
                           lambdas=LAMBDA_GRID, **instance):
    """Compare the side-information solver with ERM and plain WDRO.

    Each robust method picks its penalty from ``lambdas`` by the shifted
    validation loss; penalties whose runs leave the certified radius are
    skipped. All three decisions are then scored on the shifted test split.
    """
    from .oracles import RadiusExceededError, make_wdro_si_instance

    schedule = Schedule("sqrt-then-inverse", alpha0, t0)
    base = make_wdro_si_instance(seed=seed, lam=max(lambdas), **instance)
    erm = run_wdro_gda(base, T, 0, schedule, seed=seed, log_interval=T).x_hat

    def best(candidates):
        scored = [(base.test_loss(x, split="validation"), lam, x) for lam, x in candidates]
        return min(scored, key=lambda item: item[0])

    gda = [(lam, run_wdro_gda(base, T, T_in, schedule, seed=seed, lam=lam,
                              log_interval=T).x_hat) for lam in lambdas]
    si = []
    for lam in lambdas:
        problem = make_wdro_si_instance(seed=seed, lam=lam, **instance)
        try:
            res = run_sgd(problem, "rt-mlmc", EstimatorConfig(K, N), T, schedule,
                          seed=seed, log_interval=T, output="last")
        except RadiusExceededError:
            continue
        si.append((lam, res.x_hat))
    if not si:
        raise RadiusExceededError("every penalty left the certified radius")
    _, lam_gda, x_gda = best(gda)
    _, lam_si, x_si = best(si)
    losses = {"erm": base.test_loss(erm), "wdro-gda": base.test_loss(x_gda),
              "wdro-si": base.test_loss(x_si)}
    return ApplicationResult(seed, losses, {"wdro-gda": lam_gda, "wdro-si": lam_si})

"""Compare the compiled and pure-Python kernel backends.

Times each hot kernel on representative inputs, then one full RT-MLMC
estimator draw per problem, under both backends. Run with::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import timeit

import numpy as np

import csbo
from csbo import _backend
from csbo.estimators import EstimatorConfig, dl_sgd_estimator
from csbo.oracles import make_problem


def kernel_cases(rng):
    d, n = 20, 256
    A = np.eye(d) * 2.0 + 0.1 * rng.standard_normal((d, d))
    A = 0.5 * (A + A.T)
    c = rng.standard_normal(d)
    noise = rng.standard_normal((n, d))
    y0 = np.zeros(d)
    feats = rng.standard_normal((64, 1, 20))
    labels = rng.integers(0, 5, size=(64, 1))
    x_meta = 0.1 * rng.standard_normal(100)
    x_nv = np.concatenate(([1.0], 0.1 * rng.standard_normal(5)))
    xi = rng.standard_normal(5)
    eta = rng.standard_normal(n)
    return {
        "linear_epoch": lambda k: k.linear_epoch(A, c, noise, 0.5, y0, 0.05),
        "linear_neumann": lambda k: k.linear_neumann(A, c, n, 0.1),
        "logistic_epoch": lambda k: k.logistic_epoch(x_meta, x_meta, feats, labels, 2.0, 0.05, 5),
        "logistic_neumann": lambda k: k.logistic_neumann(x_meta, x_meta, feats, 2.0, 0.05, 5),
        "newsvendor_epoch": lambda k: k.newsvendor_epoch(x_nv, xi, xi, eta, 10.0, 1.0, 2.0, 5.0, 0.02),
        "newsvendor_neumann": lambda k: k.newsvendor_neumann(x_nv, xi, xi, eta, 10.0, 1.0, 2.0, 5.0, 0.02),
    }


def estimator_cases():
    cases = {}
    for name, params in (("quadratic", dict(d_x=20, d_y=20, d_xi=20)),
                         ("meta", dict(M=10)),
                         ("wdro_si", {})):
        problem = make_problem(name, **params)
        x = problem.initial_x()
        cfg = EstimatorConfig(K=8, N=20)
        cases[f"dl-sgd/{name}"] = (
            lambda _k, p=problem, x=x, cfg=cfg: dl_sgd_estimator(p, x, cfg, np.random.default_rng(0)))
    return cases


def best_time(fn, kernels, repeat, number):
    return min(timeit.repeat(lambda: fn(kernels), repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    backends = ["python"]
    try:
        _backend.load("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the fallback only")

    rng = np.random.default_rng(0)
    results = {}
    for name, fn in kernel_cases(rng).items():
        results[name] = {b: best_time(fn, _backend.load(b), args.repeat, args.number) for b in backends}
    original = csbo.backend()
    try:
        for name, fn in estimator_cases().items():
            results[name] = {}
            for b in backends:
                csbo.set_backend(b)
                results[name][b] = best_time(fn, None, args.repeat, args.number)
    finally:
        csbo.set_backend(original)

    print(f"{'case':28s}" + "".join(f"{b + ' (ms)':>16s}" for b in backends) + f"{'speedup':>10s}")
    for name, row in results.items():
        line = f"{name:28s}" + "".join(f"{1e3 * row[b]:16.3f}" for b in backends)
        if "cython" in row:
            line += f"{row['python'] / row['cython']:9.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()

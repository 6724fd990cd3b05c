"""Command-line entry point: ``csbo {run,bench,diagnose,schema-check}``."""
import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .diagnostics import complexity_sweep, fit_slope, mean_agreement, measure, paired_difference
from .estimators import EstimatorConfig
from .ledger import DivergenceError
from .oracles import RadiusExceededError, make_problem
from .outer_loop import Schedule, run_maml, run_sgd, run_wdro_gda

OUTPUT_DIR_ENV = "CSBO_OUTPUT_DIR"

RUN_SCHEMA = "csbo.run/1"
BENCH_SCHEMA = "csbo.bench/1"
DIAGNOSE_SCHEMA = "csbo.diagnose/1"

RUN_COLUMNS = ("t", "grad_norm_sq_or_test_loss", "cum_xi", "cum_eta", "cum_g_grads",
               "cum_g_hvps", "cum_f_grads", "wall_ms")
BENCH_COLUMNS = ("estimator", "K", "N", "n_trials", "wall_mean_s", "wall_var_s2",
                 "eta_mean", "g_grads_mean", "g_hvps_mean", "f_grads_mean")
_INT_COLUMNS = {"t", "cum_xi", "cum_eta", "cum_g_grads", "cum_g_hvps", "cum_f_grads",
                "K", "N", "n_trials"}
SCHEMAS = {RUN_SCHEMA: RUN_COLUMNS, BENCH_SCHEMA: BENCH_COLUMNS}


def _real(x):
    return repr(float(x))


# -- building blocks --------------------------------------------------------
def build_problem(cfg):
    try:
        return make_problem(cfg.problem, **cfg.problem_params)
    except TypeError as exc:
        raise ConfigError(f"problem_params: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"problem_params: {exc}") from None


def _x1(cfg, problem):
    if cfg.x1 is None:
        return problem.initial_x()
    x1 = np.asarray(cfg.x1, dtype=float)
    if x1.shape != (problem.constants().d_x,):
        raise ConfigError(f"x1 must have length {problem.constants().d_x}")
    return x1


def execute_run(cfg, problem=None):
    """Run the configured solver and return its :class:`RunResult`."""
    problem = build_problem(cfg) if problem is None else problem
    sched = Schedule(cfg.schedule.kind, cfg.schedule.alpha0, cfg.schedule.t0)
    common = dict(seed=cfg.seed, x1=_x1(cfg, problem), log_interval=cfg.log_interval,
                  timing=cfg.timing)
    if cfg.estimator in ("dl-sgd", "rt-mlmc"):
        est_cfg = EstimatorConfig(cfg.K, cfg.N, cfg.beta0, cfg.warm_start)
        return run_sgd(problem, cfg.estimator, est_cfg, cfg.T, sched,
                       output=cfg.output_rule, **common)
    if cfg.estimator == "maml":
        return run_maml(problem, cfg.maml_steps, cfg.inner_step, cfg.T, sched,
                        output=cfg.output_rule, **common)
    T_in = 0 if cfg.estimator == "erm" else cfg.T_in
    return run_wdro_gda(problem, cfg.T, T_in, sched, inner_step=cfg.inner_step,
                        lam=cfg.penalty, **common)


def _header(schema, cfg):
    return [f"# schema: {schema}", f"# version: {__version__}", f"# seed: {cfg.seed}",
            f"# config: {cfg.canonical()}"]


def format_run_csv(cfg, trace):
    buf = io.StringIO()
    buf.write("\n".join(_header(RUN_SCHEMA, cfg)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for rec in trace:
        c = rec.cost
        w.writerow([rec.t, _real(rec.metric), c.xi_samples, c.eta_samples, c.g_grad_evals,
                    c.g_hvp_evals, c.f_grad_evals, _real(rec.wall_ms)])
    return buf.getvalue()


def bench_rows(cfg, problem=None):
    """Per-draw cost and timing of both estimators over ``cfg.K_list``."""
    problem = build_problem(cfg) if problem is None else problem
    x = _x1(cfg, problem)
    rows = []
    for kind in ("dl-sgd", "rt-mlmc"):
        for K in cfg.K_list:
            st = measure(kind, problem, x, EstimatorConfig(K, cfg.N, cfg.beta0),
                         cfg.n_trials, seed=cfg.seed)
            wall_mean = st.wall_mean_ns / 1e9 if cfg.timing else 0.0
            wall_var = st.wall_var_ns / 1e18 if cfg.timing else 0.0
            c = st.mean_cost
            rows.append([kind, K, cfg.N, cfg.n_trials, wall_mean, wall_var, c.eta_samples,
                         c.g_grad_evals, c.g_hvp_evals, c.f_grad_evals])
    return rows


def format_bench_csv(cfg, rows):
    buf = io.StringIO()
    buf.write("\n".join(_header(BENCH_SCHEMA, cfg)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        w.writerow([r[0], r[1], r[2], r[3]] + [_real(v) for v in r[4:]])
    return buf.getvalue()


def _stats_dict(st, timing):
    d = st.as_dict()
    if not timing:
        for key in ("wall_mean_ns", "wall_var_ns", "wall_mean_se_ns"):
            d[key] = 0.0
        d["mean_cost"]["wall_nanos"] = 0.0
        d["cost_se"]["wall_nanos"] = 0.0
    return d


def diagnose(cfg, problem=None):
    """Bias, variance, cost and scaling-law report as a JSON-ready dict."""
    problem = build_problem(cfg) if problem is None else problem
    x = _x1(cfg, problem)
    est_cfg = EstimatorConfig(cfg.K, cfg.N, cfg.beta0)
    out = {"schema": DIAGNOSE_SCHEMA, "version": __version__, "seed": cfg.seed,
           "config": cfg.to_dict(), "x": x.tolist(), "estimators": {}}
    stats = {}
    for kind in ("dl-sgd", "rt-mlmc"):
        stats[kind] = measure(kind, problem, x, est_cfg, cfg.n_trials, seed=cfg.seed)
        out["estimators"][kind] = _stats_dict(stats[kind], cfg.timing)
    z = mean_agreement(stats["rt-mlmc"], stats["dl-sgd"])
    _, _, z_paired = paired_difference(problem, x, est_cfg, cfg.n_trials, seed=cfg.seed)
    out["bias_equality"] = {"max_z": z, "tolerance": 4.0, "pass": bool(z <= 4.0)}
    out["paired_identity"] = {"max_z": z_paired, "tolerance": 4.0, "pass": bool(z_paired <= 4.0)}
    if problem.has_grad_F and len(set(cfg.K_list)) >= 3:
        ks, biases = [], []
        for K in sorted(set(cfg.K_list)):
            st = measure("dl-sgd", problem, x, EstimatorConfig(K, cfg.N, cfg.beta0),
                         cfg.n_trials, seed=cfg.seed)
            ks.append(K)
            biases.append(st.bias_norm)
        fit = None
        if all(b > 0 for b in biases):
            slope, intercept, r2 = fit_slope([(k, math.log2(b)) for k, b in zip(ks, biases)])
            fit = {"slope": slope, "intercept": intercept, "r2": r2}
        out["bias_vs_K"] = {"K": ks, "bias": biases, "fit": fit}
    if cfg.eps_list and problem.has_grad_F:
        out["complexity"] = {}
        for kind in ("rt-mlmc", "dl-sgd"):
            rows = complexity_sweep(problem, kind, cfg.eps_list, seed=cfg.seed, x1=x,
                                    **cfg.sweep_scalings)
            table = [vars(r) for r in rows]
            attained = [r for r in rows if r.attained]
            fit = None
            if len(attained) >= 3:
                slope, intercept, r2 = fit_slope(
                    [(math.log2(r.eps), math.log2(r.g_grad_evals)) for r in attained])
                fit = {"slope": slope, "intercept": intercept, "r2": r2}
            out["complexity"][kind] = {"rows": table, "g_grad_fit": fit}
    return out


# -- schema check -------------------------------------------------------------
def check_file(path):
    """Validate a file produced by this tool; returns a report dict."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return _check_json(text)
    return _check_csv(text)


def _check_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        return {"valid": False, "errors": [f"invalid JSON: {exc}"]}
    errors = []
    if doc.get("schema") != DIAGNOSE_SCHEMA:
        errors.append(f"schema must be {DIAGNOSE_SCHEMA!r}")
    for key in ("version", "seed", "config", "estimators"):
        if key not in doc:
            errors.append(f"missing key {key!r}")
    return {"valid": not errors, "schema": doc.get("schema"), "errors": errors}


def _check_csv(text):
    lines = text.splitlines()
    meta = {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].strip().partition(":")
        meta[key.strip()] = val.strip()
        i += 1
    errors = []
    schema = meta.get("schema")
    if schema not in SCHEMAS:
        return {"valid": False, "schema": schema, "errors": [f"unknown schema {schema!r}"]}
    for key in ("version", "seed", "config"):
        if key not in meta:
            errors.append(f"missing header {key!r}")
    if "config" in meta:
        try:
            RunConfig.loads(meta["config"])
        except ConfigError as exc:
            errors.append(f"embedded config invalid: {exc}")
    rows = list(csv.reader(lines[i:]))
    columns = SCHEMAS[schema]
    if not rows or tuple(rows[0]) != columns:
        errors.append(f"columns must be {','.join(columns)}")
        return {"valid": False, "schema": schema, "errors": errors}
    prev = None
    for n, row in enumerate(rows[1:], start=1):
        if len(row) != len(columns):
            errors.append(f"row {n}: expected {len(columns)} fields")
            continue
        vals = {}
        for col, cell in zip(columns, row):
            try:
                if col == "estimator":
                    vals[col] = cell
                elif col in _INT_COLUMNS:
                    vals[col] = int(cell)
                else:
                    vals[col] = float(cell)
                    if not math.isfinite(vals[col]):
                        raise ValueError
            except ValueError:
                errors.append(f"row {n}: bad value {cell!r} in {col}")
        if schema == RUN_SCHEMA and prev is not None and len(vals) == len(columns):
            if vals["t"] <= prev["t"]:
                errors.append(f"row {n}: t not increasing")
            for col in RUN_COLUMNS[2:7]:
                if vals[col] < prev[col]:
                    errors.append(f"row {n}: {col} decreased")
        if len(vals) == len(columns):
            prev = vals
    return {"valid": not errors, "schema": schema, "rows": len(rows) - 1, "errors": errors}


# -- argument handling --------------------------------------------------------
def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


_FLAG_KEYS = {
    "problem": "problem", "estimator": "estimator", "K": "K", "N": "N", "T": "T",
    "seed": "seed", "n_trials": "n_trials", "log_interval": "log_interval",
    "alpha0": "schedule.alpha0", "output": "output",
}


def resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for attr, key in _FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "no_timing", False):
        overrides["timing"] = False
    overrides.update(_parse_set(args.set))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    try:
        return cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _destination(cfg, command, ext):
    if cfg.output:
        return cfg.output
    outdir = os.environ.get(OUTPUT_DIR_ENV)
    if outdir:
        return os.path.join(outdir, f"{command}-{cfg.problem}-{cfg.estimator}-seed{cfg.seed}.{ext}")
    return None


def _emit(text, dest):
    if dest is None:
        sys.stdout.write(text)
        return
    parent = os.path.dirname(dest)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _error(kind, message, code, **extra):
    report = {"error": kind, "message": message}
    report.update(extra)
    sys.stderr.write(json.dumps(report, sort_keys=True) + "\n")
    return code


def cmd_run(cfg, args):
    if args.dry_run:
        build_problem(cfg)
        sys.stderr.write(json.dumps({"valid": True, "config": cfg.to_dict()}, sort_keys=True) + "\n")
        return 0
    dest = _destination(cfg, "run", "csv")
    try:
        result = execute_run(cfg)
    except DivergenceError as exc:
        _emit(format_run_csv(cfg, exc.trace or []), dest)
        return _error("divergence", str(exc), 1, t=exc.t)
    except RadiusExceededError as exc:
        return _error("radius_exceeded", str(exc), 1)
    _emit(format_run_csv(cfg, result.trace), dest)
    return 0


def cmd_bench(cfg, args):
    if args.dry_run:
        build_problem(cfg)
        return 0
    rows = bench_rows(cfg)
    _emit(format_bench_csv(cfg, rows), _destination(cfg, "bench", "csv"))
    return 0


def cmd_diagnose(cfg, args):
    if args.dry_run:
        build_problem(cfg)
        return 0
    report = diagnose(cfg)
    _emit(json.dumps(report, sort_keys=True, indent=2) + "\n",
          _destination(cfg, "diagnose", "json"))
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="csbo", description=(
        "Contextual bilevel optimization with multilevel Monte Carlo hypergradients."))
    parser.add_argument("--version", action="version", version=f"csbo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run the outer solver and write a trace CSV"),
                            ("bench", "time both estimators over a K sweep"),
                            ("diagnose", "bias/variance/cost report as JSON")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted for nesting; VALUE parsed as JSON)")
        p.add_argument("--problem")
        p.add_argument("--estimator")
        p.add_argument("--K", type=int)
        p.add_argument("--N", type=int)
        p.add_argument("--T", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--n-trials", dest="n_trials", type=int)
        p.add_argument("--log-interval", dest="log_interval", type=int)
        p.add_argument("--alpha0", type=float)
        p.add_argument("--output", "-o")
        p.add_argument("--no-timing", action="store_true",
                       help="record wall-clock fields as zero for reproducible output")
        p.add_argument("--dry-run", action="store_true",
                       help="validate the config and exit without running")
    p = sub.add_parser("schema-check", help="validate a CSV or JSON file written by csbo")
    p.add_argument("path")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    if args.command == "schema-check":
        try:
            report = check_file(args.path)
        except OSError as exc:
            return _error("io", str(exc), 2)
        sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")
        return 0 if report["valid"] else 1
    try:
        cfg = resolve_config(args)
        handler = {"run": cmd_run, "bench": cmd_bench, "diagnose": cmd_diagnose}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        return _error("invalid_config", str(exc), 2)
    except OSError as exc:
        return _error("io", str(exc), 2)


if __name__ == "__main__":
    sys.exit(main())

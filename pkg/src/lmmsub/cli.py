"""Command-line experiment harness: JSON configs in, CSV files out."""
import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from .operators import CGSettings
from .parameterizations import Exact, Surrogate
from .problems import gen_matrix, gen_nnls, gen_tensor
from .solver import (
    METHODS,
    ConstantCfg,
    ExactDistance,
    GeometricCfg,
    LossProxy,
    PolyakCfg,
    SolverOptions,
)
from .verification import run_checks

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["problem", "solvers"],
    "additionalProperties": False,
    "properties": {
        "problem": {
            "type": "object",
            "required": ["kind", "r"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["nnls", "matrix_sym", "matrix_asym", "tensor_sym", "tensor_asym"]},
                "d": {"oneOf": [_INT, {"type": "array", "items": _INT, "minItems": 1, "maxItems": 3}]},
                "r": _INT,
                "r_star": _INT,
                "tau": {"type": "number", "minimum": 1},
                "m": {"oneOf": [_INT, {"const": "identity"}]},
                "loss": {"enum": ["l2sq", "l2", "l1"]},
                "p_fail": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "kappa_A": {"type": "number", "minimum": 1},
                "init_rel_err": _POS,
            },
        },
        "solvers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["method", "config"],
                "additionalProperties": False,
                "properties": {
                    "method": {"enum": sorted(METHODS)},
                    "config": {
                        "type": "object",
                        "required": ["variant", "gamma"],
                        "additionalProperties": False,
                        "properties": {
                            "variant": {"enum": ["polyak", "geometric", "constant"]},
                            "gamma": _POS,
                            "lambda": _POS,
                            "q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                            "damping": {
                                "type": "object",
                                "required": ["rule"],
                                "additionalProperties": False,
                                "properties": {
                                    "rule": {"enum": ["exact", "loss_proxy"]},
                                    "C": _POS,
                                    "c": _POS,
                                    "p": {"enum": [0.5, 1, 1.0]},
                                },
                            },
                        },
                    },
                    "options": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "max_iters": {"type": "integer", "minimum": 0},
                            "success_rel_err": {"type": "number", "minimum": 0},
                            "cg_max_iters": _INT,
                            "cg_tol": {"type": "number", "minimum": 0},
                            "proj_mode": {"enum": ["exact", "surrogate"]},
                            "delta_proj": _POS,
                        },
                    },
                },
            },
        },
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}},
        "output_dir": {"type": "string"},
        "transition": {
            "type": "object",
            "required": ["m_grid", "p_fail_grid"],
            "additionalProperties": False,
            "properties": {
                "m_grid": {"type": "array", "items": _INT, "minItems": 1},
                "p_fail_grid": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    "minItems": 1,
                },
                "trials": _INT,
            },
        },
        "sensitivity": {
            "type": "object",
            "required": ["q_grid", "gamma_grid"],
            "additionalProperties": False,
            "properties": {
                "q_grid": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "minItems": 1,
                },
                "gamma_grid": {"type": "array", "items": _POS, "minItems": 1},
                "lambda": _POS,
                "trials": _INT,
            },
        },
    },
}

TRACE_COLUMNS = ["iter", "f", "rel_err_z", "gamma", "lambda", "proj_norm", "cg_iters"]


class ConfigError(ValueError):
    pass


def validate_config(cfg):
    """Raise :class:`ConfigError` naming the offending field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {err.message}")
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return validate_config(cfg)


def build_problem(problem, seed, m=None, p_fail=None):
    """Instantiate the generator described by the ``problem`` block."""
    kind = problem["kind"]
    r = problem["r"]
    r_star = problem.get("r_star", r)
    tau = problem.get("tau", 1.0)
    loss = problem.get("loss", "l2")
    m = problem.get("m", "identity") if m is None else m
    p_fail = problem.get("p_fail", 0.0) if p_fail is None else p_fail
    rho0 = problem.get("init_rel_err", 1e-2)
    if kind == "nnls":
        if m == "identity":
            raise ConfigError("invalid config at problem/m: NNLS needs an integer number of measurements")
        return gen_nnls(r, r_star, tau, m, problem.get("kappa_A", 10.0), loss, seed, rho0)
    if "d" not in problem:
        raise ConfigError(f"invalid config at problem/d: required for {kind}")
    d = problem["d"]
    sym = kind.endswith("_sym")
    want = 1 if sym else (2 if kind.startswith("matrix") else 3)
    dims = [d] * want if isinstance(d, int) else list(d)
    if len(dims) != want:
        raise ConfigError(f"invalid config at problem/d: {kind} takes {want} dimension(s)")
    if kind.startswith("matrix"):
        return gen_matrix(sym, dims[0] if sym else dims, r, r_star, tau, m, loss, p_fail, seed, rho0)
    return gen_tensor(sym, dims, r, r_star, tau, m, loss, p_fail, seed, rho0)


def build_stepsize(config, instance):
    variant = config["variant"]
    gamma = config["gamma"]
    if variant == "polyak":
        rule = config.get("damping")
        if rule is None:
            damping = instance.damping
        elif rule["rule"] == "exact":
            damping = ExactDistance(rule.get("C", 1e-2))
        else:
            damping = LossProxy(rule.get("c", instance.damping.c), float(rule.get("p", instance.damping.p)))
        return PolyakCfg(gamma, damping, instance.gt.h_star)
    if "lambda" not in config or "q" not in config:
        raise ConfigError(f"invalid config at solvers/config: {variant} needs lambda and q")
    cls = GeometricCfg if variant == "geometric" else ConstantCfg
    return cls(gamma, config["lambda"], config["q"])


def build_options(options):
    options = options or {}
    cg = CGSettings(options.get("cg_max_iters", 100), options.get("cg_tol", 1e-25))
    if options.get("proj_mode", "exact") == "exact":
        mode = Exact()
    else:
        mode = Surrogate(options.get("delta_proj", 1e-6))
    return SolverOptions(
        max_iters=options.get("max_iters", 500),
        success_rel_err=options.get("success_rel_err", 1e-8),
        cg=cg,
        proj_mode=mode,
    )


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def trace_csv(trace):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for rec in trace.records:
        writer.writerow([_fmt(v) for v in (rec.k, rec.f, rec.rel_err_z, rec.gamma, rec.lam, rec.proj_norm, rec.cg_iters)])
    return buf.getvalue()


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _pool_map(fn, jobs, threads):
    """Apply ``fn`` to every job, in a process pool when ``threads > 1``; order is preserved."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def solve(method, instance, stepsize, options):
    return METHODS[method](instance.map, instance.loss, instance.x0, stepsize, options, instance.gt.z_star)


def _run_job(job):
    problem, solver, seed = job
    inst = build_problem(problem, seed)
    trace = solve(solver["method"], inst, build_stepsize(solver["config"], inst), build_options(solver.get("options")))
    return trace_csv(trace)


def _seeds(cfg, seed):
    if seed is not None:
        return [seed]
    return cfg.get("seeds") or [0]


def cmd_run(cfg, out=None, threads=1, seed=None):
    """Write one trace CSV per (solver, seed); returns the written paths."""
    out_dir = Path(out or cfg.get("output_dir", "."))
    keys, jobs = [], []
    for i, solver in enumerate(cfg["solvers"]):
        for s in _seeds(cfg, seed):
            keys.append(out_dir / f"run_{i}_{solver['method']}_seed{s}.csv")
            jobs.append((cfg["problem"], solver, s))
    paths = []
    for path, text in sorted(zip(keys, _pool_map(_run_job, jobs, threads))):
        _write(path, text)
        paths.append(path)
    return paths


def cell_seed(seed, *key):
    """64-bit seed for one grid cell, mixed from the base seed and integer cell coordinates."""
    return int(np.random.SeedSequence([seed, *key]).generate_state(1, np.uint64)[0])


def _transition_job(job):
    problem, solver, m, p_fail, trial, seed = job
    inst = build_problem(problem, cell_seed(seed, m, round(p_fail * 1e4), trial), m=m, p_fail=p_fail)
    trace = solve(solver["method"], inst, build_stepsize(solver["config"], inst), build_options(solver.get("options")))
    return (m, p_fail, trial), trace.converged


def cmd_transition(cfg, out=None, threads=1, seed=None):
    """Success rates over an (m, p_fail) grid; one CSV per solver."""
    if "transition" not in cfg:
        raise ConfigError("invalid config at transition: required for the transition command")
    grid = cfg["transition"]
    trials = grid.get("trials", 20)
    base = _seeds(cfg, seed)[0]
    out_dir = Path(out or cfg.get("output_dir", "."))
    paths = []
    for i, solver in enumerate(cfg["solvers"]):
        jobs = [
            (cfg["problem"], solver, m, float(p), t, base)
            for m in grid["m_grid"]
            for p in grid["p_fail_grid"]
            for t in range(trials)
        ]
        results = dict(_pool_map(_transition_job, jobs, threads))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["m", "p_fail", "trials", "successes", "success_rate"])
        for m in sorted(set(grid["m_grid"])):
            for p in sorted(set(float(p) for p in grid["p_fail_grid"])):
                wins = sum(results[(m, p, t)] for t in range(trials))
                writer.writerow([m, repr(p), trials, wins, repr(wins / trials)])
        name = f"transition_{solver['method']}.csv" if len(cfg["solvers"]) == 1 else f"transition_{i}_{solver['method']}.csv"
        _write(out_dir / name, buf.getvalue())
        paths.append(out_dir / name)
    return paths


def _sensitivity_job(job):
    problem, solver, q, gamma, lam, trial, seed = job
    inst = build_problem(problem, cell_seed(seed, trial))
    options = build_options(solver.get("options"))
    trace = solve(solver["method"], inst, GeometricCfg(gamma, lam, q), options)
    iters = trace.iterations if trace.converged else options.max_iters
    return (q, gamma, trial), iters


def cmd_sensitivity(cfg, out=None, threads=1, seed=None):
    """Median and 5/95 percentiles of iterations-to-success over a (q, gamma) grid.

    Every grid point reuses the same trial instances; runs that miss the target
    count as the iteration cap.
    """
    if "sensitivity" not in cfg:
        raise ConfigError("invalid config at sensitivity: required for the sensitivity command")
    grid = cfg["sensitivity"]
    trials = grid.get("trials", 20)
    lam = grid.get("lambda", 1e-5)
    base = _seeds(cfg, seed)[0]
    out_dir = Path(out or cfg.get("output_dir", "."))
    paths = []
    for i, solver in enumerate(cfg["solvers"]):
        if solver["method"] == "gnp":
            raise ConfigError(f"invalid config at solvers/{i}/method: sensitivity grids use lmm or subgradient")
        jobs = [
            (cfg["problem"], solver, float(q), float(g), lam, t, base)
            for q in grid["q_grid"]
            for g in grid["gamma_grid"]
            for t in range(trials)
        ]
        results = dict(_pool_map(_sensitivity_job, jobs, threads))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["q", "gamma", "median_iters", "p5_iters", "p95_iters"])
        for q in sorted(set(float(q) for q in grid["q_grid"])):
            for g in sorted(set(float(g) for g in grid["gamma_grid"])):
                its = np.array([results[(q, g, t)] for t in range(trials)], dtype=float)
                stats = np.percentile(its, [50, 5, 95])
                writer.writerow([repr(q), repr(g), *(repr(float(v)) for v in stats)])
        name = f"sensitivity_{solver['method']}.csv" if len(cfg["solvers"]) == 1 else f"sensitivity_{i}_{solver['method']}.csv"
        _write(out_dir / name, buf.getvalue())
        paths.append(out_dir / name)
    return paths


def cmd_verify(pattern="*", out=None):
    """Run the check registry; returns (csv_text, all_passed)."""
    results = run_checks(pattern)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "status", "deviation", "threshold"])
    for res in results:
        writer.writerow([res.name, "pass" if res.passed else "fail", repr(res.deviation), repr(res.threshold)])
    text = buf.getvalue()
    if out:
        _write(Path(out), text)
    return text, all(r.passed for r in results)


def _parser():
    parser = argparse.ArgumentParser(prog="lmmsub", description="Damped preconditioned subgradient experiments.")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
    parser.add_argument("--seed", type=int, default=None, help="override the seeds listed in the config")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "transition", "sensitivity"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory (defaults to output_dir or .)")
    p = sub.add_parser("verify")
    p.add_argument("--filter", default="*", help="glob over check names")
    p.add_argument("--out", default=None, help="also write the CSV to this file")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.command == "verify":
        text, ok = cmd_verify(args.filter, args.out)
        sys.stdout.write(text)
        return 0 if ok else 1
    commands = {"run": cmd_run, "transition": cmd_transition, "sensitivity": cmd_sensitivity}
    try:
        cfg = load_config(args.config)
        paths = commands[args.command](cfg, args.out, args.threads, args.seed)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

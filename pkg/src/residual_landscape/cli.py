"""Command-line driver: ``residual-landscape TASK [flags]``.

Exit codes: 0 all checks pass, 1 some check failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import experiments as ex
from .calculus import minimize_flin
from .counterexamples import Example1Instance, example1_verify
from .instances import random_feature_map, synthetic_dataset, trial_rng
from .model import Dataset, FeatureMap, Loss
from .reporting import BoundCheck, summarize, write_json
from .sgd import comparator_regret, domain_constants, sgd_run, thm5_check

TASKS = ("verify-landscape", "verify-gradients", "verify-vector", "example1", "figure1", "sgd",
         "sopsp-hunt")

DEFAULTS = {
    "seed": 0,
    "trials": {"verify-landscape": 100, "verify-gradients": 100, "verify-vector": 100,
               "sopsp-hunt": 10},
    "jobs": 1,
    "epsilon": 1.0,
    "lambda": 0.5,
    "radius": 2.0,
    "range": 3.0,
    "step": 0.05,
    "T": 10000,
    "b": 2.0,
    "r": 5.0,
    "rho_theta": 1.0,
    "delta": 0.01,
    "C": 5.0,
    "eval_every": None,
    "comparators": 10,
    "target": 1e-3,
    "samples": 200,
    "tolerances": {"grad": 1e-6, "hess": 1e-5},
    "dataset": {"n": 512, "d": 5, "generator": "linear", "noise": 0.0},
    "feature_map": {"family": "random_features", "k": 8, "activation": "tanh"},
    "loss": {"family": "squared"},
}

NESTED = {
    "dataset": {"path", "n", "d", "generator", "noise", "seed"},
    "feature_map": {"family", "k", "activation", "scale", "bias_augment", "seed"},
    "loss": {"family", "width"},
    "tolerances": {"grad", "hess"},
}
TOP_KEYS = set(DEFAULTS) | {"task", "out", "report"}

EPILOG = """\
defaults: --seed 0, --jobs 1, --trials 100 (verify-*) or 10 (sopsp-hunt),
  example1/figure1: --epsilon 1, --lambda 0.5, --radius 2, --range 3 (half-width
  of the square grid), --step 0.05, --out figure1_out;
  sgd: --T 10000, b 2, rho_theta 1, delta 0.01, C 5, eval_every max(1, T/1000),
  dataset {n: 512, d: 5, generator: linear, noise: 0}, feature_map
  {family: random_features, k: 8, activation: tanh}, loss {family: squared}.

--config takes a JSON object with any of the keys
  seed trials jobs out report epsilon lambda radius range step T b r rho_theta
  delta C eval_every comparators target samples
  tolerances {grad, hess}
  dataset {path | n d generator noise seed}
  feature_map {family k activation scale bias_augment seed}
  loss {family width}   (or a plain string)
Unknown keys are rejected. Command-line flags override the file.
"""


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="residual-landscape", description=__doc__,
                                epilog=EPILOG,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="trace CSV (sgd) or output directory (figure1)")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--range", dest="range_", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--T", type=int)
    return p


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    if isinstance(cfg.get("loss"), str):
        cfg["loss"] = {"family": cfg["loss"]}
    unknown = set(cfg) - TOP_KEYS
    for key, allowed in NESTED.items():
        if key in cfg:
            if not isinstance(cfg[key], dict):
                raise UsageError(f"config key {key!r} must be an object")
            unknown |= {f"{key}.{k}" for k in set(cfg[key]) - allowed}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def resolve(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    if "task" in cfg and cfg["task"] != args.task:
        raise UsageError(f"config is for task {cfg['task']!r}, not {args.task!r}")
    out = {}
    for key, val in DEFAULTS.items():
        if key in NESTED:
            given = cfg.get(key, {})
            base = {} if "path" in given else dict(val)
            base.update(given)
            out[key] = base
        else:
            out[key] = cfg.get(key, val)
    out["trials"] = cfg.get("trials", DEFAULTS["trials"].get(args.task, 1))
    for key in ("out", "report"):
        out[key] = cfg.get(key)
    flags = {"seed": args.seed, "trials": args.trials, "jobs": args.jobs, "out": args.out,
             "report": args.report, "epsilon": args.epsilon, "lambda": args.lambda_,
             "radius": args.radius, "range": args.range_, "step": args.step, "T": args.T}
    out.update({k: v for k, v in flags.items() if v is not None})
    out["task"] = args.task
    out["_given"] = sorted(cfg)
    validate(out)
    return out


def validate(cfg: dict) -> None:
    def positive(*keys):
        for k in keys:
            if not (isinstance(cfg[k], (int, float)) and cfg[k] > 0):
                raise UsageError(f"{k} must be positive, got {cfg[k]!r}")

    if not isinstance(cfg["trials"], int) or cfg["trials"] < 1:
        raise UsageError(f"trials must be a positive integer, got {cfg['trials']!r}")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise UsageError(f"jobs must be a positive integer, got {cfg['jobs']!r}")
    if not isinstance(cfg["T"], int) or cfg["T"] < 1:
        raise UsageError(f"T must be a positive integer, got {cfg['T']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise UsageError("seed must be a non-negative integer")
    positive("epsilon", "radius", "range", "step", "b", "r", "rho_theta", "C", "target")
    if not 0 < cfg["delta"] < 1:
        raise UsageError("delta must lie in (0, 1)")
    if cfg["lambda"] < 0:
        raise UsageError("lambda must be non-negative")


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

def _loss(cfg) -> Loss:
    spec = cfg["loss"]
    return Loss(spec.get("family", "squared"), float(spec.get("width", 1.0)))


def _dataset(cfg) -> Dataset:
    spec = cfg["dataset"]
    if "path" in spec:
        return Dataset.from_csv(spec["path"])
    rng = trial_rng(int(spec.get("seed", cfg["seed"])), 0)
    return synthetic_dataset(rng, int(spec["n"]), int(spec["d"]), spec.get("generator", "linear"),
                             float(spec.get("noise", 0.0)))


def _feature_map(cfg, d: int) -> FeatureMap:
    spec = cfg["feature_map"]
    family = spec.get("family", "random_features")
    k = int(spec.get("k", d))
    bias = bool(spec.get("bias_augment", False))
    if family == "scale":
        return FeatureMap.scaled(d, float(spec.get("scale", 1.0)), bias)
    if family == "zero":
        return FeatureMap.zero(d, k, bias)
    rng = trial_rng(int(spec.get("seed", cfg["seed"])), 1)
    fmap = random_feature_map(rng, d, k, family, spec.get("activation", "tanh"))
    if bias:
        fmap = FeatureMap(fmap.family, d, k, A=fmap.A, c=fmap.c, activation=fmap.activation,
                          bias_augment=True)
    return fmap


def task_sweep(cfg) -> tuple[list[BoundCheck], dict]:
    seed, trials, jobs = cfg["seed"], cfg["trials"], cfg["jobs"]
    task = cfg["task"]
    if task == "verify-gradients":
        opts = {"grad_tol": cfg["tolerances"]["grad"], "hess_tol": cfg["tolerances"]["hess"]}
        if "loss" in cfg["_given"]:
            opts["loss_family"] = cfg["loss"]["family"]
        if "feature_map" in cfg["_given"]:
            opts["map_family"] = cfg["feature_map"]["family"]
        checks = ex.run_trials(ex.gradient_trial, seed, trials, jobs, **opts)
    elif task == "verify-landscape":
        checks = ex.run_trials(ex.landscape_trial, seed, trials, jobs,
                               comparators=int(cfg["comparators"]))
    elif task == "verify-vector":
        checks = ex.run_trials(ex.vector_trial, seed, trials, jobs)
    else:
        checks = ex.run_trials(ex.sopsp_trial, seed, trials, jobs, b=cfg["b"], r=cfg["r"],
                               target=cfg["target"], samples=int(cfg["samples"]))
    return checks, {}


def task_example1(cfg):
    eps = cfg["epsilon"]
    checks = example1_verify(eps, samples=int(cfg["samples"]), seed=cfg["seed"])
    inst = Example1Instance(eps)
    F = checks[2].context["F"]
    gap = checks[3].context["gap"]
    return checks, {"eps": eps, "point": [0.0, -1.0 / eps], "F": F, "gap": gap,
                    "instance": {"d": 1, "k": 1, "feature_scale": inst.eps, "loss": "squared",
                                 "data": [[1.0, 1.0]]}}


def task_figure1(cfg):
    out = cfg["out"] or "figure1_out"
    summary, checks = ex.figure1_run(out, eps=cfg["epsilon"], lam=cfg["lambda"],
                                     radius=cfg["radius"], half_range=cfg["range"],
                                     step=cfg["step"])
    return checks, {"figure": summary, "out_dir": out}


def task_sgd(cfg):
    data = _dataset(cfg)
    loss = _loss(cfg)
    fmap = _feature_map(cfg, data.d)
    dom = domain_constants(loss, data, fmap, cfg["b"], cfg["rho_theta"])
    trace = sgd_run(dom, fmap, loss, data, cfg["T"], seed=cfg["seed"],
                    eval_every=cfg["eval_every"])
    if cfg["out"]:
        trace.write_csv(cfg["out"])
    checks = [thm5_check(trace, loss, data, dom, cfg["delta"], cfg["C"])]
    # deterministic per-run regret against fixed linear comparators in the ball
    bound = 2.0 * dom.b * dom.l / np.sqrt(trace.T)
    rng = trial_rng(cfg["seed"], 2)
    comps = [minimize_flin(loss, data, dom.b).w]
    while len(comps) < int(cfg["comparators"]):
        u = rng.normal(size=data.d)
        comps.append(u * (dom.b * rng.uniform() ** (1.0 / data.d) / np.linalg.norm(u)))
    for j, u in enumerate(comps):
        checks.append(BoundCheck.make("sgd_comparator_regret", bound,
                                      comparator_regret(trace, data, loss, u),
                                      {"comparator": j, "u": u, "T": trace.T}))
    checks.append(BoundCheck.make("sgd_iterates_in_ball", dom.b + 1e-12,
                                  float(np.max(trace.wv_norm)), tol=0.0))
    extra = {"domain": dom.__dict__, "eta": trace.eta, "T": trace.T, "min_F": trace.min_F,
             "final_F": trace.F_full[-1], "feature_map": fmap.spec(), "loss": loss.family,
             "n": data.n, "d": data.d}
    return checks, extra


def run(cfg: dict) -> tuple[int, dict]:
    task = cfg["task"]
    if task == "example1":
        checks, extra = task_example1(cfg)
    elif task == "figure1":
        checks, extra = task_figure1(cfg)
    elif task == "sgd":
        checks, extra = task_sgd(cfg)
    else:
        checks, extra = task_sweep(cfg)
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    report = {"task": task, "config": public,
              "summary": summarize(checks, [cfg["seed"]]), **extra,
              "checks": [c.to_dict() for c in checks]}
    return (0 if all(c.passed for c in checks) else 1), report


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        code, report = run(cfg)
    except (UsageError, ValueError, OSError) as exc:
        print(f"residual-landscape: error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"residual-landscape: aborted: {exc}", file=sys.stderr)
        return 1
    if cfg["report"]:
        d = os.path.dirname(cfg["report"])
        if d:
            os.makedirs(d, exist_ok=True)
        write_json(cfg["report"], report)
    s = report["summary"]
    print(f"{cfg['task']}: {s['checks_passed']}/{s['checks_total']} checks passed")
    for c in report["checks"]:
        if not c["pass"]:
            print(str(BoundCheck(c["name"], c["lhs"], c["rhs"], c["margin"], False)),
                  file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``selftrain-lab gen|train|init|rho|exp|landscape``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ._csvio import render
from .errors import ConditioningError, ConfigError, DivergenceError, ShapeError
from .harness import EXPERIMENTS, ExperimentConfig, default_config, run_experiment
from .metrics import relative_error
from .network import Activation, NetworkModel, load_weights, save_weights
from .selftrain import auto_config, self_train
from .synth import (GaussianSpec, RngSeed, load_labeled, load_unlabeled, make_labeled, make_unlabeled,
                    sample_ground_truth, save_labeled, save_unlabeled)
from .tensorinit import tensor_initialize
from .theory import RHO_HEADER, rho_grid

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 2, 3


def _parse_grid(text):
    """``a:b:n`` for n evenly spaced points or a comma list."""
    if ":" in text:
        a, b, n = text.split(":")
        return list(np.linspace(float(a), float(b), int(n)))
    return [float(v) for v in text.split(",") if v]


def cmd_gen(a):
    seed = RngSeed(a.seed)
    Ws = sample_ground_truth(a.d, a.K, a.half_range, seed.derive("teacher"))
    teacher = NetworkModel(Ws, Activation(a.activation))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(teacher, out / "wstar.csv")
    lab = make_labeled(teacher, a.N, GaussianSpec(a.d, a.delta), seed.derive("labeled"))
    save_labeled(lab, out / "labeled.csv", seed.derive("labeled"))
    if a.M:
        unl = make_unlabeled(a.M, GaussianSpec(a.d, a.delta_tilde), seed.derive("unlabeled"))
        save_unlabeled(unl, out / "unlabeled.csv", seed.derive("unlabeled"))
    return EXIT_OK


def cmd_train(a):
    seed = RngSeed(a.seed)
    lab = load_labeled(a.labeled)
    unl = load_unlabeled(a.unlabeled) if a.unlabeled else None
    if a.init == "tensor":
        W0 = tensor_initialize(lab, a.K, seed.derive("init"))
    else:
        W0 = load_weights(a.init).weights
    act = Activation(a.activation)
    kw = dict(T=a.T, L_max=a.L_max, rel_tol=a.rel_tol, activation=act)
    cfg = auto_config(W0, lab, unl, lam=a.lam, policy=a.step_policy, heavy_ball=a.heavy_ball, seed=seed, **kw)
    if a.eta is not None:
        from dataclasses import replace
        cfg = replace(cfg, eta=a.eta)
    Ws = load_weights(a.wstar).weights if a.wstar else None
    W, trace = self_train(W0, lab, unl, cfg, w_star=Ws)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(NetworkModel(W, act), out / "weights.csv")
    trace.to_csv(out / "trace.csv")
    rec = {"eta": cfg.eta, "beta": cfg.beta, "lambda": cfg.weights.lam, "outer_iters": len(trace),
           "stop_reason": trace.stop_reason.value}
    if Ws is not None:
        rec["rel_error"] = relative_error(W, Ws)
    print(json.dumps(rec))
    return EXIT_OK


def cmd_init(a):
    lab = load_labeled(a.labeled)
    rep = tensor_initialize(lab, a.K, RngSeed(a.seed), report=True)
    save_weights(NetworkModel(rep.weights), a.out)
    print(json.dumps(rep.diagnostics))
    return EXIT_OK


def cmd_rho(a):
    deltas = _parse_grid(a.grid) if a.grid else [a.delta]
    sys.stdout.write(render(RHO_HEADER, rho_grid(deltas, a.activation, method=a.method)))
    return EXIT_OK


def _exp_config(a, name):
    if a.config:
        cfg = ExperimentConfig.from_json(a.config)
        if name and cfg.experiment != name:
            raise ConfigError(f"config describes {cfg.experiment}, not {name}")
        doc = cfg.to_dict()
    else:
        doc = default_config(name).to_dict()
    if a.seed is not None:
        doc["master_seed"] = a.seed
    if a.trials is not None:
        doc["trials"] = a.trials
    if a.out is not None:
        doc["output_dir"] = a.out
    return ExperimentConfig.from_dict(doc)


def cmd_exp(a):
    cfg = _exp_config(a, a.name)
    res = run_experiment(cfg, a.workers)
    print(json.dumps({"experiment": cfg.experiment, "output_dir": cfg.output_dir, "config_hash": cfg.digest(),
                      "trials": len(res.records)}))
    return EXIT_OK


def cmd_landscape(a):
    a.name = "LandscapeSlice"
    return cmd_exp(a)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selftrain-lab")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="sample a teacher and datasets")
    g.add_argument("--d", type=int, default=50)
    g.add_argument("--K", type=int, default=10)
    g.add_argument("--N", type=int, default=300)
    g.add_argument("--M", type=int, default=0)
    g.add_argument("--delta", type=float, default=1.0)
    g.add_argument("--delta-tilde", type=float, default=1.0)
    g.add_argument("--half-range", type=float, default=2.5)
    g.add_argument("--activation", default="relu")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="data")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="run self-training on CSV datasets")
    t.add_argument("--labeled", required=True)
    t.add_argument("--unlabeled")
    t.add_argument("--init", required=True, help="weights CSV or 'tensor'")
    t.add_argument("--K", type=int, default=None)
    t.add_argument("--wstar")
    t.add_argument("--lambda", dest="lam", type=float, default=None)
    t.add_argument("--eta", type=float, default=None)
    t.add_argument("--step-policy", choices=("measured", "bound"), default="measured")
    t.add_argument("--heavy-ball", action="store_true")
    t.add_argument("--T", type=int, default=10)
    t.add_argument("--L-max", type=int, default=1000)
    t.add_argument("--rel-tol", type=float, default=1e-4)
    t.add_argument("--activation", default="relu")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="train_out")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("init", help="tensor initialization from a labeled CSV")
    i.add_argument("--labeled", required=True)
    i.add_argument("--K", type=int, required=True)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", default="w0.csv")
    i.set_defaults(fn=cmd_init)

    r = sub.add_parser("rho", help="print H, J and rho as CSV")
    r.add_argument("--activation", default="relu")
    r.add_argument("--delta", type=float, default=1.0)
    r.add_argument("--grid", help="a:b:n or comma list of deltas")
    r.add_argument("--method", choices=("closed", "quadrature"), default="closed")
    r.set_defaults(fn=cmd_rho)

    helps = {"exp": "run a configured experiment", "landscape": "risk along the segment from W0 to W*"}
    for name, fn in (("exp", cmd_exp), ("landscape", cmd_landscape)):
        e = sub.add_parser(name, help=helps[name])
        if name == "exp":
            e.add_argument("name", choices=EXPERIMENTS)
        e.add_argument("--config")
        e.add_argument("--seed", type=int, default=None)
        e.add_argument("--out", default=None)
        e.add_argument("--workers", type=int, default=None)
        e.add_argument("--trials", type=int, default=None)
        e.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "train" and args.init == "tensor" and args.K is None:
        print("error: --K is required with --init tensor", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, ShapeError, ConditioningError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

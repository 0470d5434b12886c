"""Config-driven experiment runners that write trial and aggregate CSVs.

Every random draw of trial t comes from ``RngSeed(master_seed).derive("trial", t, ...)``
and never depends on the grid point, so grid points share teachers,
initializations and nested data prefixes (common random numbers), and the
output does not depend on how trials are scheduled across workers.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._csvio import render, write_csv
from .errors import ConfigError, SelfTrainLabError
from .metrics import convergence_rate, relative_error, success
from .network import Activation, NetworkModel
from .risk import (RiskWeights, McSpec, empirical_risk, gf_vs_distance_scan, population_risk_mc,
                   write_gf_scan)
from .selftrain import TrainConfig, choose_step, default_lambda, self_train, w_bar
from .synth import (GaussianSpec, LabeledSet, RngSeed, UnlabeledSet, label_with, make_labeled,
                    make_unlabeled, perturbed_truth, pseudo_label, sample_ground_truth, sample_inputs)
from .tensorinit import tensor_initialize
from .theory import lambda_hat

EXPERIMENTS = ("GfLinearity", "ErrorVsM", "RateVsM", "DeltaSweep", "LambdaSweep", "PhaseTransition", "LandscapeSlice")

TRIAL_HEADER = ("experiment", "point", "trial", "d", "K", "N", "M", "delta", "delta_tilde", "lambda",
                "lambda_hat", "eta", "beta", "status", "rel_error", "rate", "success", "stop_reason",
                "outer_iters", "error", "wall_time")
AGG_HEADER = ("experiment", "point", "d", "K", "N", "M", "delta", "delta_tilde", "lambda", "lambda_hat",
              "n_ok", "n_failed", "err_mean", "err_std", "err_median", "rate_mean", "rate_std", "rate_median",
              "success_fraction", "config_hash")
FIT_HEADER = ("experiment", "d", "N", "delta_tilde", "lambda_policy", "quantity", "intercept", "slope",
              "r_squared", "config_hash")
PHASE_HEADER = ("d", "N", "M", "success_fraction")
LANDSCAPE_HEADER = ("t", "empirical_risk", "population_risk_mc")


@dataclass(frozen=True)
class TrainSettings:
    T: int = 10
    L_max: int = 1000
    rel_tol: float = 1e-4
    step_policy: str = "measured"
    eta: float | None = None
    heavy_ball: bool = False
    beta: float | None = None
    repartition_each_outer: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    d: int = 50
    K: int = 10
    N_grid: tuple = (300,)
    M_grid: tuple = (0,)
    d_grid: tuple = ()
    delta: float = 1.0
    delta_tilde: float = 1.0
    delta_tilde_grid: tuple = ()
    lambda_policy: dict = field(default_factory=lambda: {"kind": "default"})
    trials: int = 50
    master_seed: int = 0
    train: TrainSettings = TrainSettings()
    init: dict = field(default_factory=lambda: {"kind": "perturbed_truth", "radius": 0.5})
    output_dir: str = "out"
    fixed_teacher: bool = False
    half_range: float = 2.5
    rate_window: int = 50
    activation: str = "relu"
    radii: tuple = ()
    gf_mode: str = "closed"
    landscape_points: int = 61
    mc_samples: int = 20000

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        for name in ("N_grid", "M_grid"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be non-empty")
        if self.experiment == "PhaseTransition" and not self.d_grid:
            raise ConfigError("PhaseTransition needs d_grid")
        if self.experiment == "GfLinearity" and not self.radii:
            raise ConfigError("GfLinearity needs radii")
        kind = self.init.get("kind")
        if kind == "perturbed_truth":
            r = self.init.get("radius", 0.5)
            if not 0 < r <= 1:
                raise ConfigError("PerturbedTruth radius must lie in (0, 1]")
        elif kind != "tensor":
            raise ConfigError(f"unknown init policy {kind!r}")
        lp = self.lambda_policy.get("kind")
        if lp not in ("default", "fixed", "grid"):
            raise ConfigError(f"unknown lambda policy {lp!r}")
        if lp == "fixed" and "value" not in self.lambda_policy:
            raise ConfigError("fixed lambda policy needs 'value'")
        if lp == "grid" and not self.lambda_policy.get("values"):
            raise ConfigError("grid lambda policy needs non-empty 'values'")
        Activation(self.activation)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        if "experiment" not in doc:
            raise ConfigError("config must name an experiment")
        kw = dict(doc)
        if "train" in kw:
            tr = kw["train"]
            tknown = {f.name for f in dataclasses.fields(TrainSettings)}
            if not isinstance(tr, dict) or set(tr) - tknown:
                raise ConfigError(f"unknown train keys: {', '.join(sorted(set(tr) - tknown))}")
            kw["train"] = TrainSettings(**tr)
        for name in ("N_grid", "M_grid", "d_grid", "delta_tilde_grid", "radii"):
            if name in kw:
                kw[name] = tuple(kw[name])
        _check_keys(kw.get("lambda_policy", {}), {"kind", "value", "values"}, "lambda_policy")
        _check_keys(kw.get("init", {}), {"kind", "radius"}, "init")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = list(v)
        return doc

    def digest(self) -> str:
        """Hash of the canonical config document, excluding the output location."""
        doc = self.to_dict()
        doc.pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _check_keys(doc, allowed, where):
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown {where} keys: {', '.join(sorted(extra))}")


DEFAULT_CONFIGS = {
    "GfLinearity": {"experiment": "GfLinearity", "d": 50, "K": 10, "trials": 100,
                    "radii": [0.05 * i for i in range(11)]},
    "ErrorVsM": {"experiment": "ErrorVsM", "d": 50, "K": 10, "N_grid": [300], "M_grid": [0, 100, 1000, 10000],
                 "trials": 50},
    "RateVsM": {"experiment": "RateVsM", "d": 50, "K": 10, "N_grid": [300], "M_grid": [0, 100, 1000, 10000],
                "trials": 50},
    "DeltaSweep": {"experiment": "DeltaSweep", "d": 50, "K": 10, "N_grid": [300], "M_grid": [1000],
                   "delta_tilde_grid": [0.25, 0.5, 1.0, 2.0, 4.0], "trials": 50},
    "LambdaSweep": {"experiment": "LambdaSweep", "d": 50, "K": 10, "N_grid": [300], "M_grid": [1000],
                    "lambda_policy": {"kind": "grid", "values": [0.1, 0.3, 0.5, 0.7, 0.9, 1.0]}, "trials": 50},
    "PhaseTransition": {"experiment": "PhaseTransition", "K": 5, "d_grid": [10, 20, 40],
                        "N_grid": [50, 75, 100, 150, 200, 300, 400, 600, 800, 1200, 1600],
                        "M_grid": [0, 1000], "trials": 20},
    "LandscapeSlice": {"experiment": "LandscapeSlice", "d": 10, "K": 3, "N_grid": [100], "M_grid": [1000],
                       "trials": 1},
}


def default_config(name: str, **overrides) -> ExperimentConfig:
    if name not in DEFAULT_CONFIGS:
        raise ConfigError(f"unknown experiment {name!r}")
    doc = json.loads(json.dumps(DEFAULT_CONFIGS[name]))
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)


def grid_points(cfg: ExperimentConfig):
    """Ordered parameter points; each is a dict with d, N, M, delta_tilde, lambda spec."""
    ds = cfg.d_grid if cfg.experiment == "PhaseTransition" else (cfg.d,)
    dts = cfg.delta_tilde_grid or (cfg.delta_tilde,)
    lp = cfg.lambda_policy
    lams = tuple(lp["values"]) if lp["kind"] == "grid" else (lp.get("value"),)
    pts = []
    for d in ds:
        for N in cfg.N_grid:
            for M in cfg.M_grid:
                for dt in dts:
                    for lam in lams:
                        pts.append({"d": int(d), "N": int(N), "M": int(M), "delta_tilde": float(dt), "lam": lam})
    return pts


def resolve_lambda(lam, N, K, d, M) -> float:
    """None means the default rule; with no unlabeled data the weight is always 1."""
    if M == 0:
        return 1.0
    return default_lambda(N, K, d) if lam is None else float(lam)


@dataclass(frozen=True)
class TrialRecord:
    experiment: str
    point: int
    trial: int
    d: int
    K: int
    N: int
    M: int
    delta: float
    delta_tilde: float
    lam: float
    lam_hat: float
    eta: float
    beta: float
    status: str
    rel_error: float
    rate: float
    success: bool
    stop_reason: str
    outer_iters: int
    error: str
    wall_time: float

    def row(self):
        return dataclasses.astuple(self)


def _trial_streams(cfg: ExperimentConfig, trial: int, d: int):
    base = RngSeed(cfg.master_seed)
    ts = base.derive("trial", trial)
    teacher = (base if cfg.fixed_teacher else ts).derive("teacher", d)
    return ts, teacher


def build_trial(cfg: ExperimentConfig, point: dict, trial: int):
    """Teacher, initial weights, labeled and unlabeled data for one (point, trial)."""
    d, N, M = point["d"], point["N"], point["M"]
    ts, teacher_seed = _trial_streams(cfg, trial, d)
    act = Activation(cfg.activation)
    Ws = sample_ground_truth(d, cfg.K, cfg.half_range, teacher_seed)
    teacher = NetworkModel(Ws, act)
    labeled = make_labeled(teacher, N, GaussianSpec(d, cfg.delta), ts.derive("labeled", d))
    unlabeled = make_unlabeled(M, GaussianSpec(d, point["delta_tilde"]), ts.derive("unlabeled", d))
    if cfg.init["kind"] == "tensor":
        W0 = tensor_initialize(labeled, cfg.K, ts.derive("init", d))
    else:
        W0 = perturbed_truth(Ws, cfg.init.get("radius", 0.5), ts.derive("init", d))
    return Ws, W0, labeled, unlabeled, ts


def run_trial(cfg: ExperimentConfig, pidx: int, point: dict, trial: int) -> TrialRecord:
    t0 = time.perf_counter()
    d, N, M, dt = point["d"], point["N"], point["M"], point["delta_tilde"]
    lam = resolve_lambda(point["lam"], N, cfg.K, d, M)
    nan = float("nan")
    base = dict(experiment=cfg.experiment, point=pidx, trial=trial, d=d, K=cfg.K, N=N, M=M, delta=cfg.delta,
                delta_tilde=dt, lam=lam, lam_hat=nan, eta=nan, beta=nan)
    try:
        lh = lambda_hat(lam, cfg.delta, dt)
        base["lam_hat"] = lh
        Ws, W0, labeled, unlabeled, ts = build_trial(cfg, point, trial)
        weights = RiskWeights(lam)
        tr = cfg.train
        act = Activation(cfg.activation)
        if tr.eta is not None:
            eta, beta = tr.eta, (tr.beta or 0.0)
        else:
            eta, beta, _, _ = choose_step(tr.step_policy, W0, labeled, unlabeled if M else None, weights, tr.T,
                                          ts.derive("step", d), tr.heavy_ball, act)
            if tr.beta is not None:
                beta = tr.beta
        base.update(eta=eta, beta=beta)
        tcfg = TrainConfig(eta=eta, beta=beta, T=tr.T, L_max=tr.L_max, rel_tol=tr.rel_tol, weights=weights,
                           repartition_each_outer=tr.repartition_each_outer, seed=ts.derive("train", d),
                           activation=act)
        W, trace = self_train(W0, labeled, unlabeled, tcfg, w_star=Ws, w_bar=w_bar(Ws, W0, lh))
        err = relative_error(W, Ws)
        try:
            rate = convergence_rate(trace.distance_sequence, cfg.rate_window).rate
        except ConfigError:
            rate = nan
        return TrialRecord(**base, status="ok", rel_error=err, rate=rate, success=success(W, Ws),
                           stop_reason=trace.stop_reason.value, outer_iters=len(trace), error="",
                           wall_time=time.perf_counter() - t0)
    except (SelfTrainLabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        msg = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        return TrialRecord(**base, status="failed", rel_error=nan, rate=nan, success=False, stop_reason="",
                           outer_iters=0, error=msg, wall_time=time.perf_counter() - t0)


def _run_task(args):
    cfg, pidx, point, trial = args
    return run_trial(cfg, pidx, point, trial)


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("SELFTRAIN_LAB_WORKERS", "1"))
    return max(1, int(workers))


def run_trials(cfg: ExperimentConfig, workers: int | None = None):
    pts = grid_points(cfg)
    tasks = [(cfg, i, p, t) for i, p in enumerate(pts) for t in range(cfg.trials)]
    w = worker_count(workers)
    if w == 1:
        recs = [_run_task(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=w) as ex:
            recs = list(ex.map(_run_task, tasks, chunksize=1))
    recs.sort(key=lambda r: (r.point, r.trial))
    return pts, recs


def _stats(v):
    v = np.asarray([x for x in v if math.isfinite(x)], dtype=float)
    if len(v) == 0:
        return (float("nan"),) * 3
    sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return float(v.mean()), sd, float(np.median(v))


def aggregate(cfg: ExperimentConfig, pts, recs):
    h = cfg.digest()
    rows = []
    for i, p in enumerate(pts):
        rs = [r for r in recs if r.point == i]
        ok = [r for r in rs if r.status == "ok"]
        lam = resolve_lambda(p["lam"], p["N"], cfg.K, p["d"], p["M"])
        rows.append((cfg.experiment, i, p["d"], cfg.K, p["N"], p["M"], cfg.delta, p["delta_tilde"], lam,
                     lambda_hat(lam, cfg.delta, p["delta_tilde"]), len(ok), len(rs) - len(ok),
                     *_stats([r.rel_error for r in ok]), *_stats([r.rate for r in ok]),
                     (sum(r.success for r in ok) / len(rs)) if rs else float("nan"), h))
    return rows


def fits(cfg: ExperimentConfig, agg_rows):
    """1/sqrt(M) fits of the median error and rate over M > 0, per (d, N, delta_tilde, lambda)."""
    from .metrics import fit_inverse_sqrt
    h = cfg.digest()
    groups = {}
    for r in agg_rows:
        groups.setdefault((r[2], r[4], r[7], r[8] if cfg.lambda_policy["kind"] != "default" else "default"), []).append(r)
    out = []
    for (d, N, dt, lp), rows in groups.items():
        pos = [r for r in rows if r[5] > 0]
        for q, col in (("err_median", 14), ("rate_median", 17)):
            pts = [(r[5], r[col]) for r in pos if math.isfinite(r[col])]
            if len({m for m, _ in pts}) < 2:
                continue
            f = fit_inverse_sqrt(pts)
            out.append((cfg.experiment, d, N, dt, lp, q, f.intercept, f.slope, f.r_squared, h))
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    points: list
    records: list
    aggregate: list
    fits: list
    extra: dict = field(default_factory=dict)

    def aggregate_csv(self) -> str:
        return render(AGG_HEADER, self.aggregate)


def _write_manifest(cfg, out):
    doc = {"config": cfg.to_dict(), "config_hash": cfg.digest()}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, write: bool = True) -> ExperimentResult:
    if cfg.experiment == "GfLinearity":
        return run_gf_linearity(cfg, write)
    if cfg.experiment == "LandscapeSlice":
        return run_landscape_experiment(cfg, write)
    pts, recs = run_trials(cfg, workers)
    agg = aggregate(cfg, pts, recs)
    ft = fits(cfg, agg) if cfg.experiment in ("ErrorVsM", "RateVsM") else []
    res = ExperimentResult(cfg, pts, recs, agg, ft)
    if cfg.experiment == "PhaseTransition":
        res.extra["phase"] = phase_rows(agg)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "trials.csv", TRIAL_HEADER, [r.row() for r in recs])
        write_csv(out / "aggregate.csv", AGG_HEADER, agg)
        if ft:
            write_csv(out / "fits.csv", FIT_HEADER, ft)
        if "phase" in res.extra:
            write_csv(out / "phase.csv", PHASE_HEADER, res.extra["phase"])
        _write_manifest(cfg, out)
    return res


def run_phase_transition(cfg: ExperimentConfig, workers: int | None = None, write: bool = True):
    if cfg.experiment != "PhaseTransition":
        raise ConfigError("run_phase_transition needs a PhaseTransition config")
    return run_experiment(cfg, workers, write).extra["phase"]


def phase_rows(agg_rows):
    return [(r[2], r[4], r[5], r[18]) for r in agg_rows]


def minimal_N(phase, d, M, level: float = 0.9):
    """Smallest N whose success fraction reaches ``level`` for (d, M), or None."""
    cells = sorted((N, s) for dd, N, MM, s in phase if dd == d and MM == M)
    for N, s in cells:
        if s >= level:
            return N
    return None


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc = x - x.mean(), y - y.mean()
    return float(xc @ yc / math.sqrt((xc @ xc) * (yc @ yc)))


def run_gf_linearity(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    seed = RngSeed(cfg.master_seed)
    Ws = sample_ground_truth(cfg.d, cfg.K, cfg.half_range, seed.derive("teacher", cfg.d))
    rows = gf_vs_distance_scan(Ws, cfg.radii, cfg.trials, cfg.gf_mode, seed.derive("scan"), cfg.delta, cfg.mc_samples)
    r = pearson([x[0] for x in rows], [x[1] for x in rows])
    agg = [(cfg.experiment, len(rows), r, cfg.digest())]
    res = ExperimentResult(cfg, [], [], agg, [], {"scan": rows, "pearson": r})
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_gf_scan(rows, out / "gf_scan.csv")
        write_csv(out / "aggregate.csv", ("experiment", "n_radii", "pearson", "config_hash"), agg)
        _write_manifest(cfg, out)
    return res


def run_landscape_slice(W_a, W_b, n_points: int, labeled: LabeledSet | None, pseudo, weights: RiskWeights,
                        target, labeled_spec: GaussianSpec, unlabeled_spec: GaussianSpec, mc: McSpec,
                        activation=Activation.RELU):
    """Risks along W(t) = (1 - t) W_a + t W_b for t uniform on [-0.25, 1.25]."""
    W_a = np.asarray(W_a, dtype=float)
    W_b = np.asarray(W_b, dtype=float)
    if W_a.shape != W_b.shape:
        raise ConfigError("W_a and W_b must have the same shape")
    if n_points < 2:
        raise ConfigError("n_points must be at least 2")
    rows = []
    for t in np.linspace(-0.25, 1.25, n_points):
        t = float(t)
        if t == 0.0:
            W = W_a
        elif t == 1.0:
            W = W_b
        else:
            W = (1 - t) * W_a + t * W_b
        rows.append((t, empirical_risk(W, labeled, pseudo, weights, activation),
                     population_risk_mc(W, target, labeled_spec, unlabeled_spec, weights, mc, activation)))
    return rows


def run_landscape_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Slice from the initial weights to W*, pseudo labels taken from the initial weights."""
    point = grid_points(cfg)[0]
    Ws, W0, labeled, unlabeled, ts = build_trial(cfg, point, 0)
    lam = resolve_lambda(point["lam"], point["N"], cfg.K, point["d"], point["M"])
    act = Activation(cfg.activation)
    pseudo = pseudo_label(NetworkModel(W0, act), unlabeled) if point["M"] else None
    rows = run_landscape_slice(W0, Ws, cfg.landscape_points, labeled, pseudo, RiskWeights(lam), Ws,
                               labeled.spec, unlabeled.spec, McSpec(cfg.mc_samples, ts.derive("landscape")), act)
    res = ExperimentResult(cfg, [point], [], [], [], {"landscape": rows})
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "landscape.csv", LANDSCAPE_HEADER, rows)
        _write_manifest(cfg, out)
    return res

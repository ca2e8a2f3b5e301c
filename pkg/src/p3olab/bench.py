"""Experiment harness: rate studies, baseline comparison, report emission.

Sweeps run cell by cell over (sample size, seed); a failing cell records its
error and never disturbs other cells. Reports embed the config hash, an
artifact version string, and every seed, and contain no timestamps, so
rerunning an identical config reproduces byte-identical bodies.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .errors import P3OError, ValidationError
from .instances import BUILDERS, LabInstance
from .minimax import one_hot_features
from .oracle import true_value
from .pessimism import P3OConfig, PessimismReport, p3o
from .policies import (BehaviorPolicy, HistoryClass, PolicySet,
                       load_policy_set, sample_policy_set)
from .pomdp import load_model
from .rngs import substream
from .simulate import OfflineDataset, generate


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep description: instance, estimation knobs, grids, and output."""

    builder: str = "benchmark"
    model_path: str | None = None
    behavior_path: str | None = None
    policy_set_path: str | None = None
    policy_count: int = 12
    policy_seed: int = 20240
    history_kind: str = "reactive"
    history_k: int | None = None
    n_grid: tuple = (250, 500, 1000, 2000, 4000, 8000)
    seeds: tuple = tuple(range(50))
    lam: float = 1.0
    C1: float | None = None
    delta: float = 0.1
    n_perturb: int | None = None
    perturb_radius: float | None = None
    grid_seed: int | None = None
    compare_n: int = 4000
    bootstrap: int = 1000
    out_dir: str = "reports"

    def __post_init__(self):
        if tuple(sorted(set(self.n_grid))) != tuple(self.n_grid):
            raise ValidationError("n_grid must be strictly increasing")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kwargs = dict(d)
        for key in ("n_grid", "seeds"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "builder": self.builder,
            "model_path": self.model_path,
            "behavior_path": self.behavior_path,
            "policy_set_path": self.policy_set_path,
            "policy_count": self.policy_count,
            "policy_seed": self.policy_seed,
            "history_kind": self.history_kind,
            "history_k": self.history_k,
            "n_grid": list(self.n_grid),
            "seeds": list(self.seeds),
            "lam": self.lam,
            "C1": self.C1,
            "delta": self.delta,
            "n_perturb": self.n_perturb,
            "perturb_radius": self.perturb_radius,
            "grid_seed": self.grid_seed,
            "compare_n": self.compare_n,
            "bootstrap": self.bootstrap,
            "out_dir": self.out_dir,
        }

    def hash(self) -> str:
        """Experiment identity: every field except the output location."""
        doc = self.to_dict()
        doc.pop("out_dir")
        payload = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:8]

    def version_string(self) -> str:
        return f"p3olab-{__version__}+cfg.{self.hash()}"


def resolve_instance(config: ExperimentConfig) -> LabInstance:
    """Materialize the instance from a builder name or from file paths."""
    if config.model_path is None:
        builder = BUILDERS.get(config.builder)
        if builder is None:
            raise ValidationError(f"unknown builder {config.builder!r}")
        inst = builder()
    else:
        model = load_model(config.model_path)
        with open(config.behavior_path, "r", encoding="utf-8") as f:
            behavior = BehaviorPolicy(np.asarray(json.load(f)["probs"]))
        behavior.validate()
        if config.policy_set_path:
            policy_set = load_policy_set(config.policy_set_path,
                                         n_obs=model.n_obs)
        else:
            hc = HistoryClass(config.history_kind, config.history_k)
            policy_set = sample_policy_set(hc, config.policy_count,
                                           config.policy_seed, model.n_obs,
                                           model.n_actions)
        fm = one_hot_features(model.n_actions, model.n_obs)
        inst = LabInstance(name="custom", model=model, behavior=behavior,
                           policy_set=policy_set, feature_map=fm,
                           config=P3OConfig())
    knobs = {}
    if config.C1 is not None:
        knobs["C1"] = config.C1
    if config.n_perturb is not None:
        knobs["n_perturb"] = config.n_perturb
    if config.perturb_radius is not None:
        knobs["perturb_radius"] = config.perturb_radius
    if config.grid_seed is not None:
        knobs["grid_seed"] = config.grid_seed
    knobs["lam"] = config.lam
    knobs["delta"] = config.delta
    if knobs:
        inst = replace(inst, config=replace(inst.config, **knobs))
    return inst


# -- naive confounder-ignoring baseline ------------------------------------------

def naive_fitted_q_values(dataset: OfflineDataset, policy_set: PolicySet,
                          n_obs: int, n_actions: int,
                          gamma: float = 1.0) -> list:
    """Evaluate each policy by fitted-Q on the observable process.

    Treats the observation as if it were state: tabular empirical rewards
    and observation transitions, policy evaluation by backward recursion,
    no pessimism. Empty cells fall back to the prior reward 0.5 and the
    uniform next-observation law.
    """
    H = dataset.horizon
    obs, act, rew = dataset.obs, dataset.act, dataset.rew
    r_sum = np.zeros((H, n_obs, n_actions))
    counts = np.zeros((H, n_obs, n_actions))
    t_counts = np.zeros((H - 1, n_obs, n_actions, n_obs)) if H > 1 else None
    for h in range(H):
        np.add.at(r_sum[h], (obs[:, h], act[:, h]), rew[:, h])
        np.add.at(counts[h], (obs[:, h], act[:, h]), 1.0)
        if h + 1 < H:
            np.add.at(t_counts[h], (obs[:, h], act[:, h], obs[:, h + 1]), 1.0)
    r_bar = np.divide(r_sum, counts, out=np.full_like(r_sum, 0.5),
                      where=counts > 0)
    values = []
    for policy in policy_set:
        q_next = np.zeros((n_obs, n_actions))
        for h in range(H, 0, -1):
            pol = np.stack([policy.form.probs(h, o, ()) for o in range(n_obs)])
            q = np.array(r_bar[h - 1])
            if h < H:
                pol_next = np.stack([
                    policy.form.probs(h + 1, o, ()) for o in range(n_obs)])
                v_next = np.einsum("oa,oa->o", pol_next, q_next)
                tc = t_counts[h - 1]
                tot = tc.sum(axis=-1, keepdims=True)
                t_bar = np.divide(tc, tot, out=np.full_like(tc, 1.0 / n_obs),
                                  where=tot > 0)
                q = q + gamma * (t_bar @ v_next)
            q_next = q
        first_pol = np.stack([policy.form.probs(1, o, ())
                              for o in range(n_obs)])
        o1 = dataset.obs[:, 0]
        values.append(float(np.einsum("oa,oa->o", first_pol, q_next)[o1].mean()))
    return values


def naive_select(dataset: OfflineDataset, policy_set: PolicySet, n_obs: int,
                 n_actions: int, gamma: float = 1.0) -> int:
    vals = naive_fitted_q_values(dataset, policy_set, n_obs, n_actions, gamma)
    best = 0
    for i, v in enumerate(vals):
        if v > vals[best]:
            best = i
    return best


# -- rate bench ------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Log-log least-squares fit of median suboptimality against n."""

    slope: float
    intercept: float
    slope_ci: tuple  # bootstrap 5/95 percentiles over seed resampling
    n_points: int


@dataclass(frozen=True)
class RateBenchResult:
    medians: dict  # n -> median subopt
    cells: list  # (n, seed, subopt or None, selected, error)
    rate_fit: RateFit | None
    floor: float
    floor_reached: bool
    version: str
    config_hash: str


def _median(xs):
    return float(np.median(np.asarray(xs)))


def _fit_loglog(points):
    xs = np.log([p[0] for p in points])
    ys = np.log([p[1] for p in points])
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


def resolution_floor(instance: LabInstance) -> float:
    """Smallest nonzero true-value gap inside the candidate set."""
    j = np.array([true_value(instance.model, p) for p in instance.policy_set])
    gaps = np.sort(j.max() - j)
    pos = gaps[gaps > 1e-12]
    return float(pos[0]) if pos.size else 0.0


def rate_bench(config: ExperimentConfig,
               instance: LabInstance | None = None) -> RateBenchResult:
    """SubOpt(selected) across the (n, seed) grid with a log-log rate fit.

    The true optimum is the exact-value argmax over the candidate set. The
    slope is fit over grid points with positive medians; when fewer than
    four such points exist the fit is omitted and only medians are
    reported. floor_reached records whether the final-n median fell below
    the candidate-set resolution floor.
    """
    inst = instance if instance is not None else resolve_instance(config)
    j_true = [true_value(inst.model, p) for p in inst.policy_set]
    j_star = max(j_true)
    cells = []
    subopts: dict = {n: [] for n in config.n_grid}
    for n in config.n_grid:
        for seed in config.seeds:
            try:
                ds = generate(inst.model, inst.behavior, n, seed)
                rep = p3o(ds, inst.policy_set, inst.feature_map, inst.config,
                          gamma=inst.model.gamma)
                sub = j_star - j_true[rep.selected]
                cells.append((n, seed, sub, rep.selected, None))
                subopts[n].append(sub)
            except P3OError as e:
                cells.append((n, seed, None, None, str(e)))
    medians = {n: _median(v) for n, v in subopts.items() if v}
    floor = resolution_floor(inst)
    last_n = config.n_grid[-1]
    floor_reached = bool(medians.get(last_n, math.inf) < floor)

    positive = [(n, m) for n, m in medians.items() if m > 0]
    fit = None
    if len(positive) >= 4:
        slope, intercept = _fit_loglog(positive)
        boot = []
        rng = substream(config.policy_seed, 77)
        seeds_arr = list(config.seeds)
        for _ in range(config.bootstrap):
            take = rng.integers(0, len(seeds_arr), size=len(seeds_arr))
            med_b = []
            for n in config.n_grid:
                vals = [subopts[n][i] for i in take if i < len(subopts[n])]
                if vals:
                    med_b.append((n, _median(vals)))
            med_b = [(n, m) for n, m in med_b if m > 0]
            if len(med_b) >= 2:
                boot.append(_fit_loglog(med_b)[0])
        ci = (float(np.percentile(boot, 5)), float(np.percentile(boot, 95))) \
            if boot else (math.nan, math.nan)
        fit = RateFit(slope=slope, intercept=intercept, slope_ci=ci,
                      n_points=len(positive))
    return RateBenchResult(medians=medians, cells=cells, rate_fit=fit,
                           floor=floor, floor_reached=floor_reached,
                           version=config.version_string(),
                           config_hash=config.hash())


# -- baseline comparison -----------------------------------------------------------

@dataclass(frozen=True)
class BaselineCompareResult:
    n: int
    paired: list  # (seed, subopt_p3o, subopt_naive)
    median_p3o: float
    median_naive: float
    median_gap: float  # naive minus p3o
    gap_se: float  # bootstrap standard error of the median difference
    version: str
    config_hash: str


def baseline_compare(config: ExperimentConfig,
                     instance: LabInstance | None = None) -> BaselineCompareResult:
    """Paired suboptimality of pessimistic selection versus naive fitted-Q."""
    inst = instance if instance is not None else resolve_instance(config)
    model = inst.model
    j_true = [true_value(model, p) for p in inst.policy_set]
    j_star = max(j_true)
    paired = []
    for seed in config.seeds:
        ds = generate(model, inst.behavior, config.compare_n, seed)
        rep = p3o(ds, inst.policy_set, inst.feature_map, inst.config,
                  gamma=model.gamma)
        naive_idx = naive_select(ds, inst.policy_set, model.n_obs,
                                 model.n_actions, model.gamma)
        paired.append((seed, j_star - j_true[rep.selected],
                       j_star - j_true[naive_idx]))
    sub_p = [p[1] for p in paired]
    sub_n = [p[2] for p in paired]
    rng = substream(config.policy_seed, 177)
    boot = []
    for _ in range(config.bootstrap):
        take = rng.integers(0, len(paired), size=len(paired))
        boot.append(_median([sub_n[i] for i in take])
                    - _median([sub_p[i] for i in take]))
    return BaselineCompareResult(
        n=config.compare_n, paired=paired, median_p3o=_median(sub_p),
        median_naive=_median(sub_n),
        median_gap=_median(sub_n) - _median(sub_p),
        gap_se=float(np.std(boot)),
        version=config.version_string(), config_hash=config.hash())


# -- report emission ---------------------------------------------------------------

def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(buf.getvalue())


def emit_rate_report(result: RateBenchResult, config: ExperimentConfig) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    csv_path = os.path.join(config.out_dir, "rate_bench.csv")
    _write_csv(csv_path, ["n", "seed", "subopt", "selected", "error"],
               [(n, s, sub if sub is not None else "",
                 sel if sel is not None else "", err or "")
                for (n, s, sub, sel, err) in result.cells])
    doc = {
        "version": result.version,
        "config": config.to_dict(),
        "config_hash": result.config_hash,
        "seeds": list(config.seeds),
        "medians": {str(n): m for n, m in sorted(result.medians.items())},
        "floor": result.floor,
        "floor_reached": result.floor_reached,
        "rate_fit": None if result.rate_fit is None else {
            "slope": result.rate_fit.slope,
            "intercept": result.rate_fit.intercept,
            "slope_ci": list(result.rate_fit.slope_ci),
            "n_points": result.rate_fit.n_points,
        },
    }
    with open(os.path.join(config.out_dir, "rate_bench.json"), "w",
              encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")
    return doc


def emit_baseline_report(result: BaselineCompareResult,
                         config: ExperimentConfig) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    csv_path = os.path.join(config.out_dir, "baseline_compare.csv")
    _write_csv(csv_path, ["seed", "subopt_p3o", "subopt_naive"],
               result.paired)
    doc = {
        "version": result.version,
        "config": config.to_dict(),
        "config_hash": result.config_hash,
        "seeds": list(config.seeds),
        "n": result.n,
        "median_p3o": result.median_p3o,
        "median_naive": result.median_naive,
        "median_gap": result.median_gap,
        "gap_se": result.gap_se,
    }
    with open(os.path.join(config.out_dir, "baseline_compare.json"), "w",
              encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")
    return doc


def emit_p3o_report(report: PessimismReport, config: ExperimentConfig) -> dict:
    os.makedirs(config.out_dir, exist_ok=True)
    doc = {
        "version": config.version_string(),
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "report": report.to_dict(),
    }
    with open(os.path.join(config.out_dir, "p3o_report.json"), "w",
              encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")
    with open(os.path.join(config.out_dir, "p3o_report.txt"), "w",
              encoding="utf-8", newline="\n") as f:
        f.write(report.table() + "\n")
    return doc

"""Experiment orchestration: data, score model, sampler variants, metrics and artifacts.

Every artifact is a pure function of the config (including its seed). Floats
are written with ``repr`` and JSON with sorted keys, so two runs of the same
config produce byte-identical directories. Wall-clock timings go to the log
only.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from ..core import RngStream, make_geometric_schedule
from ..metrics import (path_length, porosity_measure, satisfaction_curve, sliced_wasserstein,
                       success_rate, write_json)
from ..projections import ConstraintSet, HalfspaceConstraint, PorosityConstraint, RowwiseConstraint
from ..sampler import SamplerConfig, sample
from ..score import DsmScoreModel, GaussianMixture
from ..theory import halfspace_probe, verify_corollary1, verify_theorem1
from .config import ExperimentConfig
from .datasets import (BallMotionSpec, TextureSpec, ball_constraint, gen_ball_dataset,
                       gen_texture_dataset, gen_trajectory_dataset, load_topography)
from .plots import emit_plot

logger = logging.getLogger(__name__)

# RNG stream ids; the sampler itself uses stream 0 of its own seed
DATA_STREAM, ENDPOINT_STREAM, REFERENCE_STREAM, METRIC_STREAM, MODEL_STREAM = 1, 2, 3, 4, 5


class ExperimentError(RuntimeError):
    """A stage of :func:`run_experiment` failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Task:
    """One constraint to sample under, with its evaluation."""

    name: str
    constraint: ConstraintSet
    evaluate: Callable[[np.ndarray, str], Dict[str, float]]
    dim: int
    shape_tag: str = "flat"
    shape: tuple = ()
    save_limit: Optional[int] = None


@dataclass
class Setup:
    score: Callable
    tasks: List[Task]
    extra: Dict[str, dict] = field(default_factory=dict)


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        logger.info("stage %s started", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.name, exc) from exc
        logger.info("stage %s took %.2fs", self.name, time.perf_counter() - self.t0)
        return False


# ------------------------------------------------------------------ helpers

def schedule_for(cfg: ExperimentConfig, **overrides):
    T = overrides.get("T", cfg.T)
    return make_geometric_schedule(cfg.sigma_min, cfg.sigma_max, T)


def sampler_config(cfg: ExperimentConfig, variant: str, **overrides) -> SamplerConfig:
    pst = overrides.get("projection_start_t", cfg.projection_start_t)
    sched = schedule_for(cfg, **overrides)
    if pst is not None:
        pst = min(int(pst), sched.T)
    return SamplerConfig(sched, M=int(overrides.get("M", cfg.M)), projection_start_t=pst,
                         variant=variant, snr_r=float(overrides.get("snr_r", cfg.snr_r)),
                         seed=cfg.seed)


def fit_score(cfg: ExperimentConfig, X: np.ndarray, analytic=None):
    if cfg.model == "analytic":
        return analytic
    if cfg.model == "empirical":
        return GaussianMixture.from_samples(X, cfg.bandwidth)
    return DsmScoreModel(hidden=cfg.mlp_widths, sigma_min=cfg.sigma_min, sigma_max=cfg.sigma_max,
                         n_levels=cfg.T, epochs=cfg.mlp_epochs, seed=cfg.seed).fit(X)


def write_samples(stem: str, X: np.ndarray, cfg: ExperimentConfig, shape_tag: str, shape) -> None:
    """``<stem>.csv`` (one flattened sample per row) plus ``<stem>.json`` sidecar."""
    with open(stem + ".csv", "w", newline="") as fh:
        w = csv.writer(fh)
        for row in X:
            w.writerow([repr(float(v)) for v in row])
    write_json({"dim": int(X.shape[1]), "n": int(X.shape[0]), "shape_tag": shape_tag,
                "shape": list(shape) or [int(X.shape[1])], "seed": cfg.seed,
                "config_hash": cfg.digest()}, stem + ".json")


def read_samples(stem: str) -> np.ndarray:
    return np.loadtxt(stem + ".csv", delimiter=",", ndmin=2)


def _curve_metrics(X, constraint, tolerances):
    curve = satisfaction_curve(X, constraint, tolerances)
    return curve, {"feasible_fraction_tol0": float(np.mean(constraint.is_feasible(X, 0.0)))}


# -------------------------------------------------------------- experiments

def gmm_task_mixture(cfg: ExperimentConfig) -> GaussianMixture:
    s = cfg.gmm_separation
    return GaussianMixture([0.5, 0.5], [[-s, 0.0], [s, 0.0]], [cfg.gmm_variance] * 2)


def _gmm_setup(cfg: ExperimentConfig) -> Setup:
    gmm = gmm_task_mixture(cfg)
    C = HalfspaceConstraint([1.0, 0.0], cfg.constraint_offset)
    pool = gmm.sample(8 * cfg.n_samples, RngStream(cfg.seed, REFERENCE_STREAM))
    full = pool[:cfg.n_samples]
    feasible = pool[C.is_feasible(pool)][:cfg.n_samples]
    train = gmm.sample(cfg.n_data, RngStream(cfg.seed, DATA_STREAM))
    score = fit_score(cfg, train, analytic=gmm)

    def evaluate(X, variant):
        ref = full if variant == "unconstrained" else feasible
        return {"sliced_wasserstein": sliced_wasserstein(
            X, ref, cfg.n_projections, RngStream(cfg.seed, METRIC_STREAM))}

    return Setup(score, [Task("gmm", C, evaluate, 2)])


def theory_reports(cfg: ExperimentConfig) -> Dict[str, dict]:
    """Theorem-1 grid and Corollary-1 run for the probe settings in ``cfg``."""
    grid = []
    for gamma in cfg.theorem_gammas:
        for c in cfg.theorem_cs:
            rep = verify_theorem1(halfspace_probe(c, gamma), cfg.theorem_trials, seed=cfg.seed)
            rep["c"] = c
            grid.append(rep)
    probe = halfspace_probe(cfg.corollary_c, 0.3)
    sched = make_geometric_schedule(cfg.corollary_sigma_min, cfg.corollary_sigma_max, cfg.corollary_T)
    return {"theorem1": {"grid": grid, "all_hold": all(r["holds"] for r in grid)},
            "corollary1": verify_corollary1(probe, sched, cfg.corollary_M, cfg.xi,
                                             cfg.corollary_chains, cfg.seed)}


def _physics_setup(cfg: ExperimentConfig) -> Setup:
    spec = BallMotionSpec(cfg.frame_size, cfg.n_frames, cfg.gravity, cfg.n_data,
                          object_radius=cfg.object_radius)
    train, test, starts = gen_ball_dataset(spec, RngStream(cfg.seed, DATA_STREAM))
    score = fit_score(cfg, train)
    test_starts = starts[len(train):]
    chain_starts = test_starts[np.arange(cfg.n_samples) % len(test_starts)]
    tasks = []
    for name, g in (("earth", spec.gravity), ("moon", spec.moon_gravity)):
        C = RowwiseConstraint([ball_constraint(spec, s, g) for s in chain_starts])

        def evaluate(X, variant, C=C):
            errs = np.array([c.frame_errors(x)[0] for c, x in zip(C.constraints, X)])
            finite = np.isfinite(errs)
            return {"mean_frame_error": float(np.mean(np.where(finite, errs, cfg.frame_size))),
                    "missing_object_frames": int(np.sum(~finite))}

        tasks.append(Task(name, C, evaluate, spec.n_frames * cfg.frame_size**2, "grid",
                          spec.shape, save_limit=16))
    return Setup(score, tasks)


def _trajectory_setup(cfg: ExperimentConfig) -> Setup:
    spec = load_topography(cfg.map_id)
    paths, _, _ = gen_trajectory_dataset(spec, cfg.n_train, RngStream(cfg.seed, DATA_STREAM))
    score = fit_score(cfg, paths)
    starts, goals = spec.sample_endpoints(cfg.n_samples, RngStream(cfg.seed, ENDPOINT_STREAM))
    C = spec.constraint(starts, goals, inference=True)

    def evaluate(X, variant):
        ok = C.is_feasible(X, 1e-6)
        lengths = [path_length(x) for x in X[ok]]
        return {"success_rate": success_rate(X, C),
                "mean_path_length": float(np.mean(lengths)) if lengths else float("nan"),
                "n_feasible": int(ok.sum())}

    return Setup(score, [Task(f"map{cfg.map_id}", C, evaluate, 2 * spec.n_points, "path",
                              (spec.n_points, 2))])


def _materials_setup(cfg: ExperimentConfig) -> Setup:
    spec = TextureSpec(cfg.patch_size, cfg.correlation_length, porosity_targets=cfg.porosity_targets)
    images, _ = gen_texture_dataset(spec, cfg.n_data, RngStream(cfg.seed, DATA_STREAM))
    score = fit_score(cfg, images)
    tasks = []
    for P, k in zip(spec.porosity_targets, spec.target_counts()):
        C = PorosityConstraint(k, spec.threshold)

        def evaluate(X, variant, k=k):
            por = np.array([porosity_measure(x, spec.threshold) for x in X])
            return {"target_count": k, "exact_fraction": float(np.mean(por == k)),
                    "mean_abs_pixel_error": float(np.mean(np.abs(por - k))),
                    "sliced_wasserstein_to_data": sliced_wasserstein(
                        X, images, cfg.n_projections, RngStream(cfg.seed, METRIC_STREAM))}

        tasks.append(Task(f"P{P:g}", C, evaluate, spec.n_pixels, "grid",
                          (1, spec.patch_size, spec.patch_size), save_limit=16))
    return Setup(score, tasks)


BUILDERS = {"gmm_theory": _gmm_setup, "physics_motion": _physics_setup,
            "trajectories": _trajectory_setup, "materials": _materials_setup}


# ------------------------------------------------------------------- driver

def _run_variant(cfg, setup, task, variant, **overrides):
    scfg = sampler_config(cfg, variant, **overrides)
    X, traces = sample(scfg, setup.score, task.constraint, cfg.n_samples, task.dim)
    curve, metrics = _curve_metrics(X, task.constraint, cfg.tolerances)
    metrics.update(task.evaluate(X, variant))
    pre = np.mean([tr.pre_error for tr in traces], axis=0) if scfg.projects_at(1) else None
    return X, curve, metrics, pre, traces[0].t


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one experiment and write its artifacts into ``cfg.out``; returns the report."""
    os.makedirs(cfg.out, exist_ok=True)
    with _Stage("setup"):
        setup = BUILDERS[cfg.experiment](cfg)
    if cfg.experiment == "gmm_theory":
        with _Stage("theory"):
            setup.extra.update(theory_reports(cfg))
    report = {"experiment": cfg.experiment, "seed": cfg.seed, "config_hash": cfg.digest(),
              "config": cfg.to_dict(), "results": {}}
    report["config"].pop("out")
    table = []
    for task in setup.tasks:
        curves = {}
        for variant in cfg.variants:
            with _Stage(f"sample:{task.name}:{variant}"):
                X, curve, metrics, pre, t_idx = _run_variant(cfg, setup, task, variant)
            with _Stage(f"write:{task.name}:{variant}"):
                stem = os.path.join(cfg.out, f"{task.name}_{variant}")
                write_samples(stem + "_samples", X[:task.save_limit], cfg, task.shape_tag, task.shape)
                curve.to_csv(stem + "_curve.csv")
                if pre is not None:
                    levels = sorted(set(int(t) for t in t_idx), reverse=True)
                    metrics["level_mean_pre_error"] = [float(np.mean(pre[t_idx == t])) for t in levels]
            curves[variant] = curve
            report["results"].setdefault(task.name, {})[variant] = {**metrics, "curve": curve.to_dict()}
            table += [(task.name, variant, k, v) for k, v in sorted(metrics.items())
                      if np.isscalar(v)]
        with _Stage(f"plot:{task.name}"):
            emit_plot({v: (c.tolerances, c.fraction_satisfied) for v, c in curves.items()}, "line",
                      os.path.join(cfg.out, f"{task.name}_satisfaction.svg"),
                      title=f"{task.name}: fraction within tolerance")
    if cfg.sweep_param is not None:
        report["sweep"] = run_sweep(cfg, setup, table)
    for name, rep in setup.extra.items():
        with _Stage(f"write:{name}"):
            write_json(rep, os.path.join(cfg.out, f"{name}.json"))
            report[name] = {k: v for k, v in rep.items() if k not in ("error_trace",)}
    if "corollary1" in setup.extra:
        rep = setup.extra["corollary1"]
        emit_plot({"mean Error": (rep["levels"], rep["level_mean_error"])}, "line",
                  os.path.join(cfg.out, "corollary1_levels.svg"),
                  title="mean pre-projection Error per level", log_y=True)
    with _Stage("write:report"):
        with open(os.path.join(cfg.out, "metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("task", "variant", "metric", "value"))
            for row in table:
                w.writerow(row[:3] + (repr(row[3]) if isinstance(row[3], float) else row[3],))
        write_json(report, os.path.join(cfg.out, "report.json"))
    return report


def run_sweep(cfg: ExperimentConfig, setup: Setup, table: list) -> dict:
    """Re-run PGDM (corrector for ``snr_r``) with ``sweep_param`` set to each value."""
    variant = "sde_corrector" if cfg.sweep_param == "snr_r" else "pgdm_alg1"
    out = {"param": cfg.sweep_param, "values": list(cfg.sweep_values), "variant": variant,
           "results": {}}
    for task in setup.tasks:
        rows = []
        for value in cfg.sweep_values:
            with _Stage(f"sweep:{task.name}:{cfg.sweep_param}={value}"):
                _, _, metrics, _, _ = _run_variant(cfg, setup, task, variant,
                                                    **{cfg.sweep_param: value})
            rows.append(metrics)
            table += [(task.name, f"{variant}[{cfg.sweep_param}={value}]", k, v)
                      for k, v in sorted(metrics.items()) if np.isscalar(v)]
        out["results"][task.name] = rows
        key = next(k for k in ("sliced_wasserstein", "success_rate", "exact_fraction",
                               "mean_frame_error") if k in rows[0])
        emit_plot({key: ([float(v) for v in cfg.sweep_values], [r[key] for r in rows])}, "line",
                  os.path.join(cfg.out, f"{task.name}_sweep_{cfg.sweep_param}.svg"),
                  title=f"{task.name}: {key} vs {cfg.sweep_param}")
    return out

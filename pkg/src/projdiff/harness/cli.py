"""Command-line entry point.

::

    projdiff --config cfg.yaml --seed 0 --out runs/x sample
    projdiff --config cfg.yaml sweep --param M --values 10 80 100
    projdiff --config cfg.yaml verify-theory
    projdiff --config cfg.yaml eval --samples runs/x/gmm_pgdm_alg1_samples
    projdiff plot --curve runs/x/gmm_pgdm_alg1_curve.csv --out-file curve.svg

Failures exit with status 1 and print ``error [<stage>]: ...`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from ..core import RngStream
from ..metrics import write_json
from .config import ExperimentConfig, load_config
from .datasets import (BallMotionSpec, TextureSpec, gen_ball_dataset, gen_texture_dataset,
                       gen_trajectory_dataset, load_topography)
from .experiments import (BUILDERS, DATA_STREAM, ExperimentError, _curve_metrics,
                          gmm_task_mixture, read_samples, run_experiment, theory_reports,
                          write_samples)
from .plots import emit_plot


class CliError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(message)
        self.stage = stage


def _load(args) -> ExperimentConfig:
    if args.config is None:
        raise CliError("config", "--config is required for this command")
    try:
        return load_config(args.config, seed=args.seed, out=args.out)
    except (OSError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc


def cmd_gen_data(args):
    cfg = _load(args)
    os.makedirs(cfg.out, exist_ok=True)
    rng = RngStream(cfg.seed, DATA_STREAM)
    if cfg.experiment == "physics_motion":
        spec = BallMotionSpec(cfg.frame_size, cfg.n_frames, cfg.gravity, cfg.n_data,
                              object_radius=cfg.object_radius)
        train, test, _ = gen_ball_dataset(spec, rng)
        sets = {"train": (train, "grid", spec.shape), "test": (test, "grid", spec.shape)}
    elif cfg.experiment == "trajectories":
        spec = load_topography(cfg.map_id)
        paths, _, _ = gen_trajectory_dataset(spec, cfg.n_train, rng)
        sets = {"train": (paths, "path", (spec.n_points, 2))}
    elif cfg.experiment == "materials":
        spec = TextureSpec(cfg.patch_size, cfg.correlation_length)
        images, _ = gen_texture_dataset(spec, cfg.n_data, rng)
        sets = {"train": (images, "grid", (1, cfg.patch_size, cfg.patch_size))}
    else:
        sets = {"train": (gmm_task_mixture(cfg).sample(cfg.n_data, rng), "flat", ())}
    for name, (X, tag, shape) in sets.items():
        write_samples(os.path.join(cfg.out, f"data_{name}"), X, cfg, tag, shape)
    return {name: int(len(X)) for name, (X, _, _) in sets.items()}


def cmd_train(args):
    cfg = _load(args)
    if cfg.model != "mlp":
        raise CliError("train", f"model {cfg.model!r} needs no training; set model: mlp")
    os.makedirs(cfg.out, exist_ok=True)
    model = BUILDERS[cfg.experiment](cfg).score
    model.net_.save(os.path.join(cfg.out, "score_net.bin"))
    res = model.result_
    summary = {"final_train_loss": res.train_loss[-1], "final_holdout_loss": res.holdout_loss[-1],
               "initial_holdout_loss": res.initial_holdout_loss}
    write_json(summary, os.path.join(cfg.out, "training.json"))
    return summary


def cmd_sample(args):
    report = run_experiment(_load(args))
    return {task: {v: {k: m for k, m in d.items() if np.isscalar(m)} for v, d in res.items()}
            for task, res in report["results"].items()}


def cmd_sweep(args):
    cfg = _load(args)
    values = args.values if args.values else list(cfg.sweep_values)
    param = args.param or cfg.sweep_param
    cfg = cfg.replace(sweep_param=param, sweep_values=tuple(values))
    return run_experiment(cfg)["sweep"]


def cmd_verify_theory(args):
    cfg = _load(args)
    os.makedirs(cfg.out, exist_ok=True)
    reports = theory_reports(cfg)
    for name, rep in reports.items():
        write_json(rep, os.path.join(cfg.out, f"{name}.json"))
    cor = reports["corollary1"]
    return {"theorem1_all_hold": reports["theorem1"]["all_hold"], "corollary1_found": cor["found"],
            "corollary1_first": [cor["first_t"], cor["first_i"]]}


def cmd_eval(args):
    cfg = _load(args)
    X = read_samples(args.samples)
    setup = BUILDERS[cfg.experiment](cfg)
    task = next((t for t in setup.tasks if t.name == args.task), setup.tasks[0]) \
        if args.task else setup.tasks[0]
    if len(X) != cfg.n_samples and task.constraint.__class__.__name__ == "RowwiseConstraint":
        raise CliError("eval", "physics samples must be evaluated as a full batch")
    curve, metrics = _curve_metrics(X, task.constraint, cfg.tolerances)
    metrics.update(task.evaluate(X, args.variant))
    metrics["curve"] = curve.to_dict()
    return metrics


def cmd_plot(args):
    xs, ys = [], []
    with open(args.curve) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            xs.append(float(row[0]))
            ys.append(float(row[1]))
    emit_plot({header[1]: (xs, ys)}, args.kind, args.out_file, title=args.title or header[1])
    return {"written": args.out_file}


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample,
            "eval": cmd_eval, "verify-theory": cmd_verify_theory, "sweep": cmd_sweep,
            "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="projdiff", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="flat YAML experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "sample", "verify-theory"):
        sub.add_parser(name)
    sw = sub.add_parser("sweep")
    sw.add_argument("--param", help="sampler parameter to vary (default: config sweep_param)")
    sw.add_argument("--values", type=float, nargs="+")
    ev = sub.add_parser("eval")
    ev.add_argument("--samples", required=True, help="sample file stem (without .csv)")
    ev.add_argument("--task", help="task name, e.g. earth or P0.3")
    ev.add_argument("--variant", default="pgdm_alg1")
    pl = sub.add_parser("plot")
    pl.add_argument("--curve", required=True, help="two-column CSV with a header row")
    pl.add_argument("--out-file", required=True)
    pl.add_argument("--kind", choices=("line", "bar"), default="line")
    pl.add_argument("--title")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "sweep" and args.values:
        args.values = [int(v) if float(v).is_integer() and args.param != "snr_r" else v
                       for v in args.values]
    try:
        result = COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except ExperimentError as exc:
        print(f"error [{exc.stage}]: {type(exc.cause).__name__}: {exc.cause}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    json.dump(result, sys.stdout, sort_keys=True, indent=2, default=float)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

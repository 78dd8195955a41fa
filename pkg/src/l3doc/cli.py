"""Experiment runner CLI.

Subcommands:
  run           execute a task sequence from a JSON config, export metrics
  count-params  parameter accounting for the three model families
  gen-synth     write a synthetic PTS dataset in the directory layout
  eval          recompute summary.csv from metrics.jsonl and verify it

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure,
5 eval mismatch.  The env var L3DOC_THREADS caps archive-evaluation
parallelism (default 1, which keeps runs bit-reproducible).

Config schema (JSON; every key optional unless noted, defaults shown):

    {
      "schema_version": 1,              // required, must be 1
      "mode": "l3doc",                  // l3doc | stl | finetune
      "seed": 0,
      "epochs": 10, "batch_size": 16, "lr": 0.001,
      "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
      "spec": {"n_hat": 16, "l_hat": 32, "s": 2},
      "backbone": {"widths": [3,64,64,128,128,1024],
                    "head_widths": [256], "loss_kind": "squared"},
      "mam": {"lambda_l": 1.0, "detach_attention": true},
      "dataset": {...},                 // required, see below
      "out_dir": "runs/exp"             // or pass --out
    }

Dataset sources:
    {"type": "synthetic", "class_pool": [...8 primitive names...],
     "num_tasks": 5, "classes_per_task": 3,   // or explicit "tasks": [[...], ...]
     "per_class": 50, "points": 128, "noise_sigma": 0.01}
    {"type": "directory", "root": "path", "tasks": [["chair","table"], ...],
     "points": 1024, "normalize": true}
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .backbone import BackboneConfig
from .datasets import (PRIMITIVES, gen_synthetic, load_task_from_dir,
                       make_split_plan, write_dataset_dir)
from .errors import ConfigError, DataError, NumericError
from .factorization import (FactorSpec, POINTNET_WIDTHS, count_dfcnn, count_l3doc,
                            count_stl, l3doc_layer_counts)
from .mam import MamConfig
from .metrics import export, parse_jsonl, summary_csv_bytes, summary_rows
from .trainer import ExperimentConfig, run_sequence

SCHEMA_VERSION = 1

# Published end-to-end totals quoted for these presets at 10 tasks over the
# standard widths, together with the reduction claim made for them.
REFERENCE_TOTALS = {(16, 32, 2): 950664, (32, 32, 2): 475332}
REFERENCE_CLAIM = "1.68x~3.36x fewer parameters than independent per-task models"

_DEFAULTS = {
    "mode": "l3doc",
    "seed": 0,
    "epochs": 10,
    "batch_size": 16,
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "spec": {"n_hat": 16, "l_hat": 32, "s": 2},
    "backbone": {"widths": list(POINTNET_WIDTHS), "head_widths": [256], "loss_kind": "squared"},
    "mam": {"lambda_l": 1.0, "detach_attention": True},
    "out_dir": None,
}

_DATASET_KEYS = {
    "synthetic": {"type", "class_pool", "num_tasks", "classes_per_task", "tasks",
                  "per_class", "points", "noise_sigma"},
    "directory": {"type", "root", "tasks", "points", "normalize"},
}


def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def resolve_config(raw: dict, overrides: dict) -> dict:
    """Fill defaults, apply CLI overrides, reject unknown keys."""
    _check_keys(raw, set(_DEFAULTS) | {"schema_version", "dataset"}, "config")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset' section")
    resolved = copy.deepcopy(_DEFAULTS)
    resolved["schema_version"] = SCHEMA_VERSION
    for key, value in raw.items():
        if key in ("spec", "backbone", "mam"):
            _check_keys(value, resolved[key], f"config.{key}")
            resolved[key].update(value)
        else:
            resolved[key] = copy.deepcopy(value)
    dataset = resolved["dataset"]
    kind = dataset.get("type")
    if kind not in _DATASET_KEYS:
        raise ConfigError(f"dataset.type must be one of {sorted(_DATASET_KEYS)}, got {kind!r}")
    _check_keys(dataset, _DATASET_KEYS[kind], "config.dataset")
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    return resolved


def experiment_from_resolved(resolved: dict) -> ExperimentConfig:
    widths = tuple(resolved["backbone"]["widths"])
    return ExperimentConfig(
        mode=resolved["mode"],
        spec=FactorSpec(widths=widths, **resolved["spec"]),
        backbone=BackboneConfig(widths=widths,
                                head_widths=tuple(resolved["backbone"]["head_widths"]),
                                loss_kind=resolved["backbone"]["loss_kind"]),
        mam=MamConfig(**resolved["mam"]),
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        lr=resolved["lr"],
        beta1=resolved["beta1"],
        beta2=resolved["beta2"],
        eps=resolved["eps"],
        seed=resolved["seed"],
    )


def build_tasks(resolved: dict) -> list:
    d = resolved["dataset"]
    seed = resolved["seed"]
    if d["type"] == "synthetic":
        pool = list(d.get("class_pool", PRIMITIVES))
        if "tasks" in d:
            plans = [tuple(t) for t in d["tasks"]]
            for t in plans:
                for name in t:
                    if name not in PRIMITIVES:
                        raise ConfigError(f"unknown synthetic class {name!r}")
        else:
            try:
                num_tasks = int(d["num_tasks"])
                per_task = int(d["classes_per_task"])
            except KeyError as e:
                raise ConfigError(f"synthetic dataset needs {e.args[0]} (or an explicit 'tasks' list)") from None
            plans = make_split_plan(pool, num_tasks, per_task, seed=[seed, 101]).tasks
        per_class = int(d.get("per_class", 20))
        points = int(d.get("points", 128))
        noise = float(d.get("noise_sigma", 0.01))
        return [gen_synthetic(classes, per_class, points, noise,
                              seed=[seed, 201, i], task_id=i + 1)
                for i, classes in enumerate(plans)]
    root = Path(d.get("root", ""))
    if "tasks" not in d:
        raise ConfigError("directory dataset needs an explicit 'tasks' list of class groups")
    points = int(d.get("points", 1024))
    normalize = bool(d.get("normalize", True))
    return [load_task_from_dir(root, tuple(classes), task_id=i + 1,
                               n_pts=points, seed=[seed, 301, i], normalize=normalize)
            for i, classes in enumerate(d["tasks"])]


def cmd_run(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    resolved = resolve_config(raw, {"seed": args.seed, "mode": args.mode, "out_dir": args.out})
    if not resolved.get("out_dir"):
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    cfg = experiment_from_resolved(resolved)
    tasks = build_tasks(resolved)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved-config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _, log = run_sequence(cfg, tasks)
    paths = export(log, out_dir)
    print(f"run complete: {len(tasks)} task(s), outputs in {out_dir}")
    for name in ("jsonl", "csv"):
        print(f"  wrote {paths[name]}")
    return 0


def cmd_count_params(args) -> int:
    widths = tuple(int(w) for w in args.widths.split(","))
    if args.family == "stl":
        print(count_stl(widths, args.tasks))
        return 0
    if args.family == "dfcnn":
        print(count_dfcnn(widths, args.u, args.vh, args.vw, args.lh, args.lw, args.lc, args.tasks))
        return 0
    spec = FactorSpec(widths=widths, n_hat=args.nhat, l_hat=args.lhat, s=args.s)
    total = count_l3doc(spec, args.tasks)
    print(total)
    for row in l3doc_layer_counts(spec, args.tasks):
        print(f"  layer {row['layer']} ({row['w_in']}->{row['w_out']}): "
              f"per-task {row['per_task']} x {args.tasks} + shared {row['shared']} = {row['total']}")
    baseline = count_stl(widths, args.tasks)
    print(f"  baseline (independent per-task models): {baseline} -> ratio {baseline / total:.2f}x")
    ref = REFERENCE_TOTALS.get((args.nhat, args.lhat, args.s))
    if ref is not None and args.tasks == 10:
        print(f"  published reference total for this preset at 10 tasks: {ref} ({REFERENCE_CLAIM})")
        if ref != total:
            print(f"  NOTE: formula total {total} differs from the published {ref}; "
                  f"the formula is evaluated verbatim and the discrepancy is reported, not hidden")
    return 0


def cmd_gen_synth(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    data = gen_synthetic(classes, args.per_class, args.points, args.noise, seed=args.seed)
    files = write_dataset_dir(Path(args.out), data)
    print(f"wrote {len(files)} PTS files under {args.out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    jsonl_path = run_dir / "metrics.jsonl"
    csv_path = run_dir / "summary.csv"
    if not jsonl_path.is_file() or not csv_path.is_file():
        raise DataError(f"run directory {run_dir} lacks metrics.jsonl/summary.csv")
    log = parse_jsonl(jsonl_path.read_text(encoding="utf-8"))
    recomputed = summary_csv_bytes(summary_rows(log))
    if recomputed != csv_path.read_bytes():
        print(f"error: eval-mismatch: summary.csv does not match metrics.jsonl in {run_dir}",
              file=sys.stderr)
        return 5
    print(f"summary.csv verified against metrics.jsonl in {run_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l3doc",
                                     description="lifelong point-cloud classification experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train a task sequence from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--mode", choices=("l3doc", "stl", "finetune"), default=None)
    p_run.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    p_run.set_defaults(func=cmd_run)

    p_count = sub.add_parser("count-params", help="parameter accounting")
    p_count.add_argument("--widths", default=",".join(str(w) for w in POINTNET_WIDTHS))
    p_count.add_argument("--nhat", type=int, default=16)
    p_count.add_argument("--lhat", type=int, default=32)
    p_count.add_argument("--s", type=int, default=2)
    p_count.add_argument("--tasks", type=int, default=1)
    p_count.add_argument("--family", choices=("stl", "dfcnn", "l3doc"), default="l3doc")
    p_count.add_argument("--u", type=int, default=1)
    p_count.add_argument("--vh", type=int, default=1)
    p_count.add_argument("--vw", type=int, default=1)
    p_count.add_argument("--lh", type=int, default=1)
    p_count.add_argument("--lw", type=int, default=1)
    p_count.add_argument("--lc", type=int, default=1)
    p_count.set_defaults(func=cmd_count_params)

    p_gen = sub.add_parser("gen-synth", help="generate a synthetic PTS dataset")
    p_gen.add_argument("--classes", required=True, help="comma-separated primitive names")
    p_gen.add_argument("--per-class", dest="per_class", type=int, default=20)
    p_gen.add_argument("--points", type=int, default=128)
    p_gen.add_argument("--noise", type=float, default=0.01)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_synth)

    p_eval = sub.add_parser("eval", help="verify summary.csv against metrics.jsonl")
    p_eval.add_argument("--run", required=True)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: data: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

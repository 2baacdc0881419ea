"""Command-line entry points.

Exit codes: 0 success, 2 usage or invalid input, 3 file/IO problems,
4 numerical failure during training.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from typing import List, Optional

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICS = 0, 2, 3, 4

log = logging.getLogger("scatterhsd")


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with [corpus] [scatter] [upstream] "
                                    "[downstream] [train] sections")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override one config value (repeatable)")
    p.add_argument("--cache", help="directory for prepared training arrays")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scatterhsd",
                                 description="Joint completion and hierarchical "
                                             "self-distillation for scattered point clouds.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write procedural shapes and a manifest")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=10_000)
    p.add_argument("--format", choices=("xyz", "ply"), default="xyz")
    p.add_argument("--out", required=True)

    p = sub.add_parser("scatter", help="scatter-sample one dense cloud")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--seeds", type=int, default=64)
    p.add_argument("--neighbors", type=int, default=8)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="joint training run")
    _add_config_args(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("classify", "segment"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inference", default="teacher",
                   help="teacher, mean_ensemble or level_N")
    p.add_argument("--out", help="write eval.csv here")

    p = sub.add_parser("ablate", help="baseline / dsn / scl / full_hsd over several seeds")
    _add_config_args(p)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--suites", default="baseline,dsn,scl,full_hsd")
    p.add_argument("--out", required=True)

    p = sub.add_parser("info-plane", help="split an epoch trace into plottable CSVs")
    p.add_argument("--traces", required=True, help="epochs.csv written by train")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--out", required=True)
    return ap


def _threads():
    n = os.environ.get("SCATTERHSD_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import InvalidInput, NumericsError, ParseError
    try:
        with _threads():
            return COMMANDS[args.command](args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


# subcommands ---------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    from .corpus import gen_shape, gen_split, save_cloud

    split = gen_split(args.classes, args.per_class, args.seed)
    cloud_dir = os.path.join(args.out, "clouds")
    os.makedirs(cloud_dir, exist_ok=True)
    rows = []
    for name, specs in (("train", split.train), ("test", split.test)):
        for spec in specs:
            rel = os.path.join("clouds", f"{name}_{spec.class_name}_{spec.rng_seed}.{args.format}")
            save_cloud(os.path.join(args.out, rel), gen_shape(spec, args.points), args.format)
            rows.append({"split": name, "class_id": spec.class_id,
                         "class_name": spec.class_name, "rng_seed": spec.rng_seed,
                         "params": json.dumps(spec.params, sort_keys=True), "path": rel})
    from .corpus import write_manifest
    write_manifest(os.path.join(args.out, "manifest.csv"), rows)
    print(f"wrote {len(rows)} clouds and manifest.csv to {args.out}")
    return EXIT_OK


def cmd_scatter(args) -> int:
    from .corpus import load_cloud, save_cloud
    from .errors import InvalidInput
    from .scatter import ScatterConfig, multi_view

    cloud = load_cloud(args.inp)
    if args.views < 1:
        raise InvalidInput("--views must be >= 1")
    cfg = ScatterConfig(args.seeds, args.neighbors, source_size=len(cloud),
                        rng_seed=args.rng_seed)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.inp))[0]
    for v, view in enumerate(multi_view(cloud, cfg, args.views)):
        save_cloud(os.path.join(args.out, f"{stem}_view{v}.xyz"), view, "xyz")
    print(f"wrote {args.views} view(s) of {cfg.output_size} points to {args.out}")
    return EXIT_OK


def _experiment(args, extra: Optional[List[str]] = None):
    from .config import load_config

    cfg = load_config(args.config, list(args.overrides) + (extra or []))
    print("# effective config")
    print(cfg.dumps())
    return cfg


def _prepared(cfg, cache: Optional[str]):
    from .corpus import gen_split
    from .trainer import load_prepared, prepare_data, save_prepared

    key_src = json.dumps({"corpus": asdict(cfg.corpus), "scatter": asdict(cfg.scatter),
                          "target": cfg.upstream.target_points, "views": cfg.train.views},
                         sort_keys=True)
    path = None
    if cache:
        os.makedirs(cache, exist_ok=True)
        key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
        path = os.path.join(cache, f"data_{key}.npz")
        if os.path.exists(path):
            return load_prepared(path)
    split = gen_split(cfg.corpus.classes, cfg.corpus.per_class, cfg.corpus.seed)
    data = prepare_data(split, cfg.scatter, cfg.upstream.target_points, cfg.train.views,
                        classes=cfg.corpus.classes)
    if path:
        save_prepared(path, data)
    return data


def _mode_data(data, mode):
    from .corpus import COMPOSITE_CLASSES
    return data.subset_classes(COMPOSITE_CLASSES) if mode == "segment" else data


def _write_report(path: str, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in report.as_percent().items():
            w.writerow([k, f"{v:.4f}"])


def _print_report(report):
    for k, v in report.as_percent().items():
        unit = "" if k.startswith("CD") else " %"
        print(f"{k:>10s}: {v:8.3f}{unit}")


def cmd_train(args) -> int:
    from . import plotting
    from .trainer import evaluate, train_model

    extra = []
    for flag, key in (("gamma", "train.gamma"), ("epochs", "train.epochs"),
                      ("seed", "train.seed"), ("mode", "train.mode")):
        if getattr(args, flag) is not None:
            extra.append(f"{key}={getattr(args, flag)}")
    cfg = _experiment(args, extra)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.ini"), "w") as fh:
        fh.write(cfg.dumps())
    data = _mode_data(_prepared(cfg, args.cache), cfg.train.mode)
    down = replace(cfg.downstream, classes=max(cfg.downstream.classes, data.classes))
    res = train_model(data, cfg.upstream, down, cfg.train, args.out)
    report = evaluate(res.model, data)
    _write_report(os.path.join(args.out, "eval.csv"), report)
    plotting.plot_losses(res.steps, os.path.join(args.out, "losses.png"))
    if res.traces:
        plotting.plot_info_plane(res.traces, os.path.join(args.out, "info_plane.png"),
                                 data.classes)
    _print_report(report)
    print(f"checkpoint {res.checkpoint_path} sha256 {res.checkpoint_hash}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainer import evaluate, load_model

    model, meta = load_model(args.checkpoint)
    overrides = list(args.overrides) + [f"train.mode={model.mode}"]
    from .config import load_config
    cfg = load_config(args.config, overrides)
    data = _mode_data(_prepared(cfg, args.cache), model.mode)
    report = evaluate(model, data, inference=args.inference)
    _print_report(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_report(os.path.join(args.out, "eval.csv"), report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from . import plotting
    from .trainer import ablate, ablation_rows

    cfg = _experiment(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    suites = [s.strip() for s in args.suites.split(",") if s.strip()]
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.ini"), "w") as fh:
        fh.write(cfg.dumps())
    data = _prepared(cfg, args.cache)
    runs = ablate(data, cfg.upstream, cfg.downstream, cfg.train, seeds, suites, args.out)
    rows = ablation_rows(runs)
    plotting.plot_ablation(rows, os.path.join(args.out, "ablation.png"))
    cols = list(rows[0])
    print(" | ".join(f"{c:>12s}" for c in cols))
    for r in rows:
        print(" | ".join(f"{str(r[c]):>12s}" for c in cols))
    return EXIT_OK


def cmd_info_plane(args) -> int:
    from . import plotting
    from .infoplane import read_traces

    traces = read_traces(args.traces)
    os.makedirs(args.out, exist_ok=True)
    panels = {
        "info_plane.csv": ("i_xz", "i_yz"),
        "kl_gaps.csv": ("kl_gap",),
        "cross_entropy.csv": ("ce",),
    }
    top = max(t.level for t in traces)
    for name, cols in panels.items():
        with open(os.path.join(args.out, name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "level") + cols)
            for t in traces:
                if name == "kl_gaps.csv" and t.level == top:
                    continue
                row = t.row()
                w.writerow([t.epoch, t.level] + [row[c] for c in cols])
    plotting.plot_info_plane(traces, os.path.join(args.out, "info_plane.png"), args.classes)
    print(f"wrote {', '.join(panels)} and info_plane.png to {args.out}")
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "scatter": cmd_scatter,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "info-plane": cmd_info_plane,
}


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: generate, train, eval, ablate, export-graph, config."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..synthdata import generate_dataset, load_dataset, make_scm, save_dataset
from .ablation import TABLE3, format_table, run_ablation
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, save_config
from .export import export_graph
from .metrics import evaluate
from .model import Model
from .train import fit

log = logging.getLogger("polargraph")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write_json(path: Optional[str], obj) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.with_(**overrides) if overrides else cfg


def cmd_generate(args) -> int:
    scm = make_scm(n_au=args.n_au, n_expr=args.n_expr, d_in=args.d_in, noise_scale=args.noise_scale,
                   neg_frac=args.neg_frac, seed=args.scm_seed)
    ds = generate_dataset(scm, args.au_records, args.expr_records, seed=args.seed)
    save_dataset(ds, args.out)
    log.info("wrote %d/%d/%d records to %s", len(ds.train), len(ds.val), len(ds.test), args.out)
    return 0


def cmd_config(args) -> int:
    save_config(TrainConfig(), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.data)
    model = Model(cfg, np.random.default_rng(cfg.seed))
    hist = fit(model, ds.train, log_every=args.log_every, record_every=max(1, cfg.steps // 100))
    rep = evaluate(model, ds.splits()[args.split], ds.scm, hist.totals())
    save_checkpoint(model, args.out, rep.to_dict())
    log.info("trained %d steps in %.1fs", cfg.steps, hist.seconds)
    _write_json(args.metrics, rep.to_dict())
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    rep = evaluate(model, ds.splits()[args.split], ds.scm)
    _write_json(args.out, rep.to_dict())
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.data)
    rows = run_ablation(args.rows, cfg, ds.train, ds.splits()[args.split], ds.scm, seeds=args.seeds)
    print(format_table(rows))
    if args.out:
        _write_json(args.out, [r.summary() for r in rows])
    return 0


def cmd_export(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    recs = ds.splits()[args.split]
    rep = evaluate(model, recs, ds.scm) if args.with_metrics else None
    paths = export_graph(model, args.out_dir, recs.x, samples=args.samples, x_samples=recs.x,
                         report=rep, svg=args.svg)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polargraph", description="Signed causal graph learning on planted AU data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a planted SCM dataset to a JSONL file")
    g.add_argument("--out", required=True)
    g.add_argument("--au-records", type=int, default=5000)
    g.add_argument("--expr-records", type=int, default=5000)
    g.add_argument("--n-au", type=int, default=8)
    g.add_argument("--n-expr", type=int, default=6)
    g.add_argument("--d-in", type=int, default=32)
    g.add_argument("--noise-scale", type=float, default=0.1)
    g.add_argument("--neg-frac", type=float, default=0.4)
    g.add_argument("--scm-seed", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("config", help="write the default configuration as JSON")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_config)

    splits = ("train", "val", "test")
    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="metrics JSON path (stdout if omitted)")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--split", choices=splits, default="test")
    t.add_argument("--log-every", type=int, default=500)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=splits, default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train module-toggle variants on shared seeds")
    a.add_argument("--data", required=True)
    a.add_argument("--config")
    a.add_argument("--rows", type=_int_list, default=sorted(TABLE3))
    a.add_argument("--seeds", type=_int_list, default=[0])
    a.add_argument("--steps", type=int)
    a.add_argument("--split", choices=splits, default="test")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-graph", help="write adjacency CSVs, per-sample graphs and a summary")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out-dir", required=True)
    x.add_argument("--samples", type=_int_list, default=[])
    x.add_argument("--split", choices=splits, default="test")
    x.add_argument("--svg", action="store_true")
    x.add_argument("--with-metrics", action="store_true")
    x.set_defaults(func=cmd_export)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, IndexError, FloatingPointError) as exc:
        print(f"polargraph {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

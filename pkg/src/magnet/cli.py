"""Command-line pipeline: synthesize datasets, fit experts, train and
evaluate models, run ablations, aggregate reports, and serve predictions.

Every subcommand is deterministic under fixed seeds and inputs; report
and dataset files carry no wall-clock state. Config files are JSON; an
unknown field is rejected by name rather than silently ignored.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import (
    BenchmarkConfig,
    EvalContext,
    MetricReport,
    all_ablations,
    format_table,
    read_rows_csv,
    run_benchmark,
    write_report,
    write_rows_csv,
)
from .datagen import PRESETS, build_dataset, dataset_samples
from .errors import MagnetError, SchemaError
from .experts import ExpertRegistry, fit_expert
from .model import MagnetModel, TrainConfig
from .records import Dataset
from .service import ENV_HOST, ENV_PORT, serve


def _apply_config(obj, path):
    """Overlay JSON config fields onto a dataclass; unknown fields fail."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(obj)}
    unknown = set(raw) - known
    if unknown:
        raise SchemaError(
            f"{path}: unknown {type(obj).__name__} field '{sorted(unknown)[0]}'"
        )
    return replace(obj, **raw)


def _parse_seeds(text: str) -> tuple:
    """'5' means seeds 0..4; '0,3,7' means exactly those."""
    if "," in text:
        return tuple(int(s) for s in text.split(","))
    return tuple(range(int(text)))


def _parse_shots(text: str) -> tuple:
    return tuple(int(s) for s in text.split(","))


def _load_dataset(path) -> Dataset:
    return Dataset.load(path)


# -- subcommand bodies -------------------------------------------------------------


def _cmd_datagen(args) -> int:
    sc = PRESETS[args.preset]()
    if args.config:
        sc = _apply_config(sc, args.config)
    if args.users is not None:
        sc = replace(sc, users=args.users)
    if args.reps is not None:
        sc = replace(sc, reps=args.reps)
    ds = build_dataset(sc, seed=args.seed)
    ds.save(args.out)
    print(f"wrote {len(ds)} trials to {args.out} (hash {ds.content_hash()})")
    return 0


def _cmd_fit_experts(args) -> int:
    depth_axis = None
    if args.depth_axis:
        depth_axis = np.asarray([float(x) for x in args.depth_axis.split(",")])
    registry = ExpertRegistry()
    for spec in args.expert:
        eid, _, source = spec.partition("=")
        if not eid or not source:
            raise SchemaError(f"--expert '{spec}' must look like ID=DATASET[@GESTURE]")
        path, _, gesture = source.partition("@")
        ds = _load_dataset(path)
        samples = dataset_samples(ds, gesture=gesture or None)
        expert = fit_expert(eid, samples, depth_axis=depth_axis)
        registry.add(expert)
        print(f"fitted {eid}: {len(samples)} samples, dim {expert.dim}")
    registry.save(args.out)
    print(f"wrote {len(registry)} experts to {args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    tc = TrainConfig()
    if args.config:
        tc = _apply_config(tc, args.config)
    return tc


def _bench_config(args, **overrides) -> BenchmarkConfig:
    cfg = BenchmarkConfig(
        seeds=_parse_seeds(args.seeds),
        train=_train_config(args),
        test_count=args.test_count,
        val_count=args.val_count,
        split_seed=args.split_seed,
        **overrides,
    )
    return cfg


def _cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    registry = ExpertRegistry.load(args.registry)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _bench_config(args, shots=_parse_shots(args.shots), baselines=())
    report = run_benchmark(
        ds, registry, cfg, progress=_say(args), checkpoint_dir=out_dir
    )
    write_report(report, out_dir / "rows.csv")
    print(format_table(report.aggregated()))
    return 0


def _cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    registry = ExpertRegistry.load(args.registry)
    if args.baselines == "none" and not args.model:
        raise SchemaError("eval needs --model and/or baselines")
    cfg = _bench_config(args, shots=(), baselines=())
    rows: list[dict] = []
    meta: dict = {}
    if args.baselines != "none":
        cfg_b = replace(cfg, baselines=BenchmarkConfig().baselines)
        report = run_benchmark(ds, registry, cfg_b, progress=_say(args))
        rows += report.rows
        meta = report.meta
    if args.model and args.baselines != "only":
        model = MagnetModel.load(args.model)
        _, ckpt_meta = _checkpoint_meta(args.model)
        ctx = EvalContext.build(ds, cfg)
        metrics = ctx.score_model(model)
        rows.append({
            "model": ckpt_meta.get("model_name", "magnet"),
            "shots": ckpt_meta.get("shots"),
            "seed": ckpt_meta.get("seed", 0),
            **metrics,
        })
        meta.setdefault("checkpoints", []).append(
            {"path": str(args.model), "dataset_hash": ckpt_meta.get("dataset_hash")}
        )
    report = MetricReport(rows=rows, meta=meta)
    write_report(report, args.out)
    print(format_table(report.aggregated()))
    return 0


def _checkpoint_meta(path):
    from .nn.checkpoint import load_params

    return load_params(path)


def _cmd_ablate(args) -> int:
    ds = _load_dataset(args.data)
    registry = ExpertRegistry.load(args.registry)
    labels = tuple(f"w/o {d}" if d != "all" else "w/o all" for d in args.drop) or (
        all_ablations(registry)
    )
    cfg = _bench_config(
        args,
        shots=(),
        baselines=(),
        ablations=labels,
        ablation_shots=int(args.shots),
    )
    report = run_benchmark(ds, registry, cfg, progress=_say(args))
    write_report(report, args.out)
    print(format_table(report.aggregated()))
    return 0


def _cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        rows += read_rows_csv(path)
    report = MetricReport(rows=rows, meta={"sources": [str(p) for p in args.inputs]})
    if args.out:
        write_report(report, args.out)
    print(format_table(report.aggregated()))
    return 0


def _cmd_serve(args) -> int:
    host = args.host or os.environ.get(ENV_HOST, "127.0.0.1")
    port = args.port if args.port is not None else int(os.environ.get(ENV_PORT, "8000"))
    serve(args.checkpoint, args.registry, host=host, port=port)
    return 0


def _say(args):
    if args.quiet:
        return None
    return lambda msg: print(msg, flush=True)


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magnet",
        description="Context-gated mixture of ternary-Gaussian experts for "
        "moving-target intent inference.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds_default="1"):
        p.add_argument("--seeds", default=seeds_default,
                       help="seed count N (runs 0..N-1) or comma list")
        p.add_argument("--config", default=None, help="JSON config overlay")
        p.add_argument("--test-count", type=int, default=None)
        p.add_argument("--val-count", type=int, default=None)
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("datagen", help="synthesize a dataset file")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON scenario field overrides")
    p.set_defaults(fn=_cmd_datagen)

    p = sub.add_parser("fit-experts", help="fit a registry from dataset files")
    p.add_argument("--expert", action="append", required=True,
                   metavar="ID=DATASET[@GESTURE]",
                   help="expert id and its source dataset (repeatable)")
    p.add_argument("--depth-axis", default=None, help="3D depth axis, e.g. 0,0,1")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_fit_experts)

    p = sub.add_parser("train", help="train across seeds and report test metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--shots", default="10", help="comma list of shot depths")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate baselines and/or a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--model", default=None, help="checkpoint to evaluate")
    p.add_argument("--baselines", choices=("all", "only", "none"), default="all")
    p.add_argument("--out", required=True, help="rows CSV path")
    common(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="retrain with experts dropped")
    p.add_argument("--data", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--shots", default="10", help="shot depth for ablation runs")
    p.add_argument("--drop", action="append", default=[],
                   help="expert id or 'all' (repeatable; default: each + all)")
    p.add_argument("--out", required=True, help="rows CSV path")
    common(p, seeds_default="5")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("report", help="aggregate row CSVs into a table")
    p.add_argument("inputs", nargs="+", metavar="ROWS_CSV")
    p.add_argument("--out", default=None, help="write merged report here")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("serve", help="run the prediction service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--host", default=None, help=f"default {ENV_HOST} or 127.0.0.1")
    p.add_argument("--port", type=int, default=None, help=f"default {ENV_PORT} or 8000")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except MagnetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Multi-seed benchmark: baselines vs the trained mixture on a fixed test
split, with optional expert ablations, aggregated into report files.

One run produces per-seed rows keyed (model, shots, seed) carrying the
full metric suite: overall E@1/E@2 plus E@1 within low/high vibration
regimes under both grouping rules (k-means midpoint and split mean). The
test split, and therefore the grouping rules, are fixed across seeds;
only few-shot resampling and training vary by seed. Report files contain
no wall-clock state, so identical configs reproduce them byte-for-byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import (
    METHODS,
    baseline_predict,
    matched_expert_id,
)
from .datagen import SplitSpec, few_shot_subset, split_dataset
from .errors import ConfigurationError, InputError, MagnetError
from .experts import ExpertRegistry, ExpertSpec
from .gaussian import TernaryGaussianParams
from .metrics import GroupingRule, cluster_threshold, mean_threshold
from .model import ModelConfig, TrainConfig, predict_dataset, train
from .records import Dataset

METRIC_COLUMNS = ("E_clust_G1", "E_clust_G2", "E_mean_G1", "E_mean_G2", "E_at_1", "E_at_2")
CSV_COLUMNS = ("model", "shots", "seed") + METRIC_COLUMNS


@dataclass
class BenchmarkConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    shots: tuple = (1, 3, 5, 10)                 # mixture rows; () = baselines only
    baselines: tuple = METHODS
    ablations: tuple = ()                        # labels: "w/o <expert-id>" | "w/o all"
    ablation_shots: int | None = None            # default: deepest entry of `shots`
    test_count: int | None = None                # default: per-dim split sizes below
    val_count: int | None = None
    split_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"duplicate seeds in {self.seeds}")
        unknown = set(self.baselines) - set(METHODS)
        if unknown:
            raise ConfigurationError(f"unknown baselines {sorted(unknown)}")
        if self.ablations and not self.shots and self.ablation_shots is None:
            raise ConfigurationError("ablations need `shots` or an explicit ablation_shots")


# Test/validation sizes for the standard scenario scales.
DEFAULT_SPLITS = {2: (1536, 384), 3: (384, 96)}


def neutral_expert(bounds, dim: int) -> ExpertSpec:
    """Uninformative stand-in expert: zero mean coefficients and one flat
    isotropic spread at a quarter of the mean scene extent. Its speed/size
    spread coefficients are zero, so context adaptation cannot manufacture
    motion sensitivity from it."""
    extent = float(np.mean([hi - lo for lo, hi in bounds]))
    sigma = np.zeros((dim, 3))
    sigma[:, 0] = extent / 4.0
    params = TernaryGaussianParams(mu=np.zeros((dim, 3)), sigma=sigma)
    return ExpertSpec(
        id="neutral", dim=dim, params=params,
        provenance={"kind": "neutral", "extent": extent},
    )


def all_ablations(registry: ExpertRegistry) -> tuple:
    return tuple(f"w/o {eid}" for eid in registry.ids()) + ("w/o all",)


def ablated_registry(registry: ExpertRegistry, label: str, bounds) -> ExpertRegistry:
    """Registry variant for one ablation label."""
    if label == "w/o all":
        return ExpertRegistry([neutral_expert(bounds, registry.dim)])
    if not label.startswith("w/o "):
        raise ConfigurationError(f"ablation label '{label}' must be 'w/o <id>' or 'w/o all'")
    eid = label[len("w/o "):]
    if eid not in registry:
        raise ConfigurationError(f"ablation drops unknown expert '{eid}'")
    kept = [registry[i] for i in registry.ids() if i != eid]
    if not kept:
        raise ConfigurationError(f"ablation '{label}' would leave no experts")
    return ExpertRegistry(kept)


# -- per-method scoring -----------------------------------------------------------


def _grouped(miss: list[int], rmsa_values: list[float], rule: GroupingRule):
    out = {1: [], 2: []}
    for m, r in zip(miss, rmsa_values):
        out[rule.group(r)].append(m)
    return tuple(float(np.mean(v)) if v else None for v in (out[1], out[2]))


def score_misses(
    miss1: list[int], miss2: list[int] | None, rmsa_values: list[float],
    rules: dict[str, GroupingRule],
) -> dict:
    """Metric dict from per-trial top-1 (and optional top-2) miss indicators."""
    if len(miss1) != len(rmsa_values):
        raise InputError(f"{len(miss1)} misses vs {len(rmsa_values)} rmsa values")
    c1, c2 = _grouped(miss1, rmsa_values, rules["clust"])
    m1, m2 = _grouped(miss1, rmsa_values, rules["mean"])
    return {
        "E_clust_G1": c1, "E_clust_G2": c2,
        "E_mean_G1": m1, "E_mean_G2": m2,
        "E_at_1": float(np.mean(miss1)),
        "E_at_2": float(np.mean(miss2)) if miss2 is not None else None,
    }


def _ranking_misses(rankings, records):
    miss1 = [int(r[0] != t.intended_id) for r, t in zip(rankings, records)]
    miss2 = [int(t.intended_id not in r[:2]) for r, t in zip(rankings, records)]
    return miss1, miss2


# -- report container ----------------------------------------------------------------


@dataclass
class MetricReport:
    rows: list[dict]
    meta: dict

    def aggregated(self) -> list[dict]:
        """Mean/std per (model, shots) over seeds; std needs >= 2 values."""
        order: list[tuple] = []
        groups: dict[tuple, list[dict]] = {}
        for row in self.rows:
            key = (row["model"], row["shots"])
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(row)
        out = []
        for key in order:
            rows = groups[key]
            agg = {"model": key[0], "shots": key[1], "n_seeds": len(rows)}
            for col in METRIC_COLUMNS:
                vals = [r[col] for r in rows if r[col] is not None]
                agg[f"{col}_mean"] = float(np.mean(vals)) if vals else None
                agg[f"{col}_std"] = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
            out.append(agg)
        return out


def _cell(value) -> str:
    if value is None or value == "":
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def write_rows_csv(rows: list[dict], path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in CSV_COLUMNS])


def read_rows_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise InputError(f"{path}: expected columns {list(CSV_COLUMNS)}, got {header}")
        rows = []
        for cells in reader:
            row = dict(zip(CSV_COLUMNS, cells))
            row["shots"] = int(row["shots"]) if row["shots"] else None
            row["seed"] = int(row["seed"])
            for col in METRIC_COLUMNS:
                row[col] = float(row[col]) if row[col] else None
            rows.append(row)
    return rows


def write_agg_csv(agg_rows: list[dict], path):
    cols = ["model", "shots", "n_seeds"]
    for col in METRIC_COLUMNS:
        cols += [f"{col}_mean", f"{col}_std"]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cols)
        for row in agg_rows:
            writer.writerow([_cell(row[c]) for c in cols])


def write_report(report: MetricReport, path):
    """Per-seed CSV at `path`, plus `<stem>-agg.csv` and `<stem>-meta.json`."""
    path = Path(path)
    write_rows_csv(report.rows, path)
    write_agg_csv(report.aggregated(), path.with_name(path.stem + "-agg.csv"))
    meta_path = path.with_name(path.stem + "-meta.json")
    meta_path.write_text(
        json.dumps(report.meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def format_table(agg_rows: list[dict]) -> str:
    """Human-readable aggregate table: one method row, mean (std) cells."""
    headers = ["model", "shots", "E_clust G1", "E_clust G2",
               "E_mean G1", "E_mean G2", "E@1", "E@2"]

    def fmt(row, col):
        mean, std = row[f"{col}_mean"], row[f"{col}_std"]
        if mean is None:
            return "-"
        return f"{mean:.4f}" + (f" ({std:.4f})" if std is not None else "")

    body = [
        [row["model"], str(row["shots"]) if row["shots"] is not None else "-"]
        + [fmt(row, c) for c in METRIC_COLUMNS]
        for row in agg_rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


# -- the run itself --------------------------------------------------------------------


def _scenario_of(dataset: Dataset) -> dict:
    sc = dataset.meta.get("scenario")
    if not sc:
        raise InputError("dataset meta lacks the scenario block")
    return sc


def _resolved_train(tc: TrainConfig, dim: int) -> TrainConfig:
    # The stock batch size is 32 for 2D tasks and 16 for 3D; only the
    # untouched default is rewritten so explicit choices pass through.
    if dim == 3 and tc.batch_size == 32:
        return replace(tc, batch_size=16)
    return tc


@dataclass
class EvalContext:
    """Fixed split plus grouping rules shared by every row of one report."""

    scenario: dict
    pool: Dataset
    val_set: Dataset
    test_set: Dataset
    rmsa_values: list[float]
    rules: dict[str, GroupingRule]
    grouping_info: dict

    @classmethod
    def build(cls, dataset: Dataset, cfg: BenchmarkConfig) -> "EvalContext":
        sc = _scenario_of(dataset)
        test_count, val_count = DEFAULT_SPLITS[sc["dim"]]
        if cfg.test_count is not None:
            test_count = cfg.test_count
        if cfg.val_count is not None:
            val_count = cfg.val_count
        split = split_dataset(dataset, SplitSpec(test_count, val_count, cfg.split_seed))
        records = split["test"].records
        if any(r.rmsa is None for r in records):
            raise InputError("regime grouping needs rmsa on every test trial")
        rmsa_values = [r.rmsa for r in records]
        clust_rule, clust_info = cluster_threshold(np.asarray(rmsa_values))
        mean_rule = mean_threshold(np.asarray(rmsa_values))
        return cls(
            scenario=sc,
            pool=split["train_pool"],
            val_set=split["val"],
            test_set=split["test"],
            rmsa_values=rmsa_values,
            rules={"clust": clust_rule, "mean": mean_rule},
            grouping_info={
                "clust": {"threshold": clust_rule.threshold, **clust_info},
                "mean": {"threshold": mean_rule.threshold},
            },
        )

    def score_rankings(self, rankings: list[list[int]]) -> dict:
        miss1, miss2 = _ranking_misses(rankings, self.test_set.records)
        return score_misses(miss1, miss2, self.rmsa_values, self.rules)

    def score_baseline(self, method: str, registry: ExpertRegistry | None = None) -> dict:
        records = self.test_set.records
        if method == "border":
            miss1 = [int(not baseline_predict("border", t)) for t in records]
            return score_misses(miss1, None, self.rmsa_values, self.rules)
        if method == "distance":
            return self.score_rankings([baseline_predict("distance", t) for t in records])
        if method == "expert":
            expert_ids = self.scenario["expert_ids"]
            return self.score_rankings([
                baseline_predict("expert", t, registry, matched_expert_id(t, expert_ids))
                for t in records
            ])
        raise InputError(f"unknown baseline '{method}'")

    def score_model(self, model) -> dict:
        rankings, _ = predict_dataset(model, self.test_set.records)
        return self.score_rankings(rankings)


def _checkpoint_name(model_name: str, shots: int, seed: int) -> str:
    stem = model_name.replace(" w/o ", "-wo-").replace(" ", "-").replace("/", "-")
    return f"{stem}-shots{shots}-seed{seed}.ckpt"


def run_benchmark(
    dataset: Dataset,
    registry: ExpertRegistry,
    cfg: BenchmarkConfig,
    mc: ModelConfig | None = None,
    progress=None,
    checkpoint_dir=None,
) -> MetricReport:
    """Evaluate baselines, few-shot mixture runs, and requested ablations.

    The dataset is split once (fixed test/val); each seed resamples its own
    few-shot training set and retrains. A training failure marks that row's
    metrics absent and is recorded in meta["failures"]; other cells proceed.
    With checkpoint_dir set, every trained model is saved there.
    """
    say = progress or (lambda msg: None)
    sc = _scenario_of(dataset)
    dim = sc["dim"]
    bounds = tuple(tuple(b) for b in sc["bounds"])
    if registry.dim != dim:
        raise ConfigurationError(f"registry dim {registry.dim} vs dataset dim {dim}")
    for gesture, eid in sc["expert_ids"].items():
        if eid not in registry:
            raise ConfigurationError(
                f"registry lacks expert '{eid}' matched to gesture '{gesture}'"
            )

    ctx = EvalContext.build(dataset, cfg)
    records = ctx.test_set.records
    dataset_hash = dataset.content_hash()

    if mc is None:
        mc = ModelConfig(dim=dim, bounds=bounds, sample_rate=sc["sample_rate"])
    tc_base = _resolved_train(cfg.train, dim)

    rows: list[dict] = []
    failures: list[dict] = []

    def add_row(model: str, shots, seed: int, metrics: dict | None):
        row = {"model": model, "shots": shots, "seed": seed}
        row.update(metrics or {c: None for c in METRIC_COLUMNS})
        rows.append(row)

    # Baselines are seed-independent: score once, repeat per seed so the
    # aggregate carries an explicit zero std.
    baseline_metrics: dict[str, dict] = {}
    for method in cfg.baselines:
        baseline_metrics[method] = ctx.score_baseline(method, registry)
        say(f"baseline {method}: E@1={baseline_metrics[method]['E_at_1']:.4f}")
    for method in cfg.baselines:
        for seed in cfg.seeds:
            add_row(method, None, seed, baseline_metrics[method])

    def train_cell(model_name: str, reg: ExpertRegistry, shots: int, seed: int):
        try:
            shot_set = few_shot_subset(ctx.pool, shots, seed)
            tc = replace(tc_base, shots=shots, seed=seed)
            model, log = train(shot_set, ctx.val_set, reg, mc, tc)
            metrics = ctx.score_model(model)
            say(
                f"{model_name} shots={shots} seed={seed}: "
                f"E@1={metrics['E_at_1']:.4f} ({len(log)} epochs)"
            )
            add_row(model_name, shots, seed, metrics)
            if checkpoint_dir is not None:
                model.save(
                    Path(checkpoint_dir) / _checkpoint_name(model_name, shots, seed),
                    extra_meta={
                        "dataset_hash": dataset_hash,
                        "shots": shots,
                        "seed": seed,
                        "model_name": model_name,
                    },
                )
        except MagnetError as e:
            say(f"{model_name} shots={shots} seed={seed}: FAILED ({e})")
            failures.append(
                {"model": model_name, "shots": shots, "seed": seed, "error": str(e)}
            )
            add_row(model_name, shots, seed, None)

    for shots in cfg.shots:
        for seed in cfg.seeds:
            train_cell("magnet", registry, shots, seed)

    ablation_echo = {}
    if cfg.ablations:
        ab_shots = cfg.ablation_shots
        if ab_shots is None:
            ab_shots = max(cfg.shots)
        for label in cfg.ablations:
            reg = ablated_registry(registry, label, bounds)
            ablation_echo[label] = {
                "experts": reg.ids(),
                "params": {eid: reg[eid].to_dict() for eid in reg.ids()}
                if label == "w/o all" else None,
                "shots": ab_shots,
            }
            for seed in cfg.seeds:
                train_cell(f"magnet {label}", reg, ab_shots, seed)

    meta = {
        "dataset_hash": dataset_hash,
        "scenario": sc["name"],
        "n_test": len(records),
        "n_val": len(ctx.val_set),
        "n_pool": len(ctx.pool),
        "seeds": list(cfg.seeds),
        "shots": list(cfg.shots),
        "baselines": list(cfg.baselines),
        "split_seed": cfg.split_seed,
        "grouping": ctx.grouping_info,
        "train": {
            "batch_size": tc_base.batch_size,
            "max_epochs": tc_base.max_epochs,
            "patience": tc_base.patience,
            "lr": tc_base.lr,
            "weight_decay": tc_base.weight_decay,
            "margin": tc_base.margin,
            "lambda_div": tc_base.lambda_div,
            "hardest_negative": tc_base.hardest_negative,
        },
        "ablations": ablation_echo,
        "failures": failures,
    }
    return MetricReport(rows=rows, meta=meta)

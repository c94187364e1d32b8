"""Cross-validation and generalization runs that write report files."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .dataset import Dataset, Split, kfold_split
from .errors import DataError, TrainingError
from .features import PhenotypeStats
from .learners import derive_seed, view_of
from .metamodel import (
    Baseline, FeatureSpec, Metamodel, generalize_direct, generalize_retrain_meta, pooled_tests,
    score_subjects, train_baseline, train_metamodel,
)
from .stats import paired_ttest, result_dict, rm_anova_2way, summarize

log = logging.getLogger(__name__)

PIPELINES = ("traditional", "metamodel")
REPORT_HEADER = "fold,base_kind,pipeline,r"


def _fmt_r(r) -> str:
    return "" if r is None else repr(float(r))


def _needed_views(kind: str, cfg: ExperimentConfig) -> tuple[str, ...]:
    kinds = {kind, *cfg.kind_overrides.values()}
    return tuple(sorted({view_of(k) for k in kinds}))


def run_fold(dataset: Dataset, split: Split, fold: int, kind: str, cfg: ExperimentConfig,
             model_dir: Path | None = None) -> dict:
    """Train the metamodel and its traditional counterpart on one split."""
    train_subjects = dataset.subset(split.train)
    spec = FeatureSpec(cfg.window_length, cfg.window_stride, PhenotypeStats.fit(train_subjects))
    views = _needed_views(kind, cfg)
    tr = spec.build(train_subjects, views)
    vs = spec.build(dataset.subset(split.val), views)
    ts = spec.build(dataset.subset(split.test), views)
    test_subjects = dataset.subset(split.test)
    seed = derive_seed(cfg.seed, f"fold{fold}/{kind}")
    mcfg = cfg.metamodel_config(seed)
    try:
        model = train_metamodel(tr, vs, kind, cfg.thresholds, mcfg, features=spec)
        baseline = train_baseline(kind, tr, vs, mcfg, features=spec)
    except TrainingError as exc:
        raise TrainingError(f"fold {fold}, kind {kind}: {exc}") from exc
    preds = {
        "metamodel": model.predict(ts, clip=cfg.clip_predictions),
        "traditional": baseline.predict(ts),
    }
    if model_dir is not None:
        d = model_dir / f"fold_{fold}" / kind
        model.save(d / "metamodel")
        baseline.save(d / "baseline.json")
    return {
        "fold": fold,
        "kind": kind,
        "r": {p: score_subjects(preds[p], test_subjects) for p in PIPELINES},
        "predictions": preds,
        "warnings": model.info.get("warnings", []),
    }


def _run_task(args):
    return run_fold(*args)


def map_tasks(tasks: list[tuple], jobs: int) -> list[dict]:
    """Run fold tasks serially or in worker processes; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def comparison_tests(rows: list[tuple[int, str, str, float | None]], kinds: list[str]) -> list[dict]:
    """Paired t-test per kind and, with two or more kinds, the method x algorithm ANOVA."""
    table = {(f, k, p): r for f, k, p, r in rows}
    folds = sorted({f for f, _, _, _ in rows})
    tests = []
    for kind in kinds:
        pairs = [(table[(f, kind, "metamodel")], table[(f, kind, "traditional")]) for f in folds]
        pairs = [(a, b) for a, b in pairs if a is not None and b is not None]
        entry = {"name": "paired_ttest", "base_kind": kind, "a": "metamodel", "b": "traditional",
                 "n": len(pairs)}
        if len(pairs) >= 2:
            entry.update(result_dict(paired_ttest([a for a, _ in pairs], [b for _, b in pairs])))
        else:
            entry["skipped"] = "fewer than 2 complete folds"
        tests.append(entry)
    if len(kinds) >= 2:
        data = np.array([[[math.nan if table[(f, k, p)] is None else table[(f, k, p)]
                           for k in kinds] for p in PIPELINES] for f in folds], dtype=float)
        complete = np.all(np.isfinite(data), axis=(1, 2))
        if complete.sum() >= 2:
            for res in rm_anova_2way(data[complete], ("method", "algorithm")):
                d = result_dict(res)
                d.update({"name": "rm_anova_2way", "n_folds": int(complete.sum()),
                          "levels": {"method": list(PIPELINES), "algorithm": list(kinds)}})
                tests.append(d)
        else:
            tests.append({"name": "rm_anova_2way", "skipped": "fewer than 2 complete folds"})
    return tests


def write_manifest(out_dir: Path, cfg: ExperimentConfig, command: str, extra: dict | None = None):
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"metareg": __version__, "numpy": np.__version__},
    }
    manifest.update(extra or {})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def crossval(dataset: Dataset, cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> dict:
    """k-fold run of every base kind; writes report.csv, summary.json, predictions.csv."""
    splits = kfold_split(dataset, cfg.k_folds, cfg.val_fraction, cfg.seed)
    model_dir = out_dir / "models"
    tasks = [(dataset, split, fold, kind, cfg, model_dir)
             for fold, split in enumerate(splits) for kind in cfg.base_kinds]
    results = map_tasks(tasks, jobs)

    rows = [(res["fold"], res["kind"], p, res["r"][p]) for res in results for p in PIPELINES]
    lines = [REPORT_HEADER] + [f"{f},{k},{p},{_fmt_r(r)}" for f, k, p, r in rows]
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")

    truth = {s.id: s.score for s in dataset.subjects}
    pred_lines = ["fold,base_kind,pipeline,subject_id,true_score,predicted_score"]
    for res in results:
        for p in PIPELINES:
            for sid in sorted(res["predictions"][p]):
                pred_lines.append(f"{res['fold']},{res['kind']},{p},{sid},{truth[sid]},"
                                  f"{repr(float(res['predictions'][p][sid]))}")
    (out_dir / "predictions.csv").write_text("\n".join(pred_lines) + "\n")

    report = summarize([(f, f"{k}/{p}", r) for f, k, p, r in rows],
                       comparison_tests(rows, cfg.base_kinds))
    summary = {
        "k_folds": cfg.k_folds,
        "base_kinds": cfg.base_kinds,
        "table": {k: {p: report.summary[f"{k}/{p}"] for p in PIPELINES} for k in cfg.base_kinds},
        "tests": report.tests,
        "splits": [{"train": list(s.train), "val": list(s.val), "test": list(s.test)} for s in splits],
        "warnings": {f"fold{res['fold']}/{res['kind']}": res["warnings"] for res in results
                     if res["warnings"]},
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out_dir, cfg, "crossval")
    return summary


def _stored_runs(models_dir: Path) -> list[tuple[int, str, Path]]:
    runs = []
    for fold_dir in sorted(models_dir.glob("fold_*"), key=lambda p: int(p.name.split("_")[1])):
        for kind_dir in sorted(p for p in fold_dir.iterdir() if p.is_dir()):
            runs.append((int(fold_dir.name.split("_")[1]), kind_dir.name, kind_dir))
    if not runs:
        raise DataError(f"no stored models under {models_dir}")
    return runs


def generalize(new_data: Dataset, cfg: ExperimentConfig, models_dir: Path, out_dir: Path,
               method: int) -> dict:
    """Apply stored fold models to a new dataset (method 1) or retrain the meta level (method 2)."""
    runs = _stored_runs(models_dir)
    kinds = sorted({k for _, k, _ in runs}, key=lambda k: [r[1] for r in runs].index(k))
    rows, tests, pred_lines = [], [], ["base_kind,pipeline,model,subject_id,predicted_score"]

    if method == 1:
        for kind in kinds:
            mine = [(f, d) for f, k, d in runs if k == kind]
            models = [Metamodel.load(d / "metamodel") for _, d in mine]
            baselines = [Baseline.load(d / "baseline.json") for _, d in mine]
            meta_report = generalize_direct(models, new_data)
            meta_r = [r for _, _, r in meta_report.per_fold]
            base_r = []
            for (f, _), b in zip(mine, baselines):
                pred = b.predict_subjects(new_data.subjects)
                base_r.append(score_subjects(pred, new_data.subjects))
                pred_lines += [f"{kind},traditional,{f},{s},{repr(pred[s])}" for s in sorted(pred)]
            for (f, _), i in zip(mine, range(len(mine))):
                pred = meta_report.predictions[i]
                pred_lines += [f"{kind},metamodel,{f},{s},{repr(pred[s])}" for s in sorted(pred)]
            for (f, _), mr, br in zip(mine, meta_r, base_r):
                rows.append((f, kind, "metamodel", mr))
                rows.append((f, kind, "traditional", br))
        tests = comparison_tests(rows, kinds)
    elif method == 2:
        g = cfg.generalize
        splits = kfold_split(new_data, g.k_folds, g.val_fraction, cfg.seed)
        for kind in kinds:
            fold0, _, src_dir = next(r for r in runs if r[1] == kind)
            bank_source = Metamodel.load(src_dir / "metamodel")
            mcfg = cfg.metamodel_config(derive_seed(cfg.seed, f"method2/{kind}"))
            meta_report = generalize_retrain_meta(bank_source, splits, new_data, mcfg)
            for f, _, r in meta_report.per_fold:
                rows.append((f, kind, "metamodel", r))
            tests += [dict(t, base_kind=kind) for t in meta_report.tests]
            pooled_meta = meta_report.predictions["pooled"]
            pred_lines += [f"{kind},metamodel,{fold0},{s},{repr(pooled_meta[s])}" for s in sorted(pooled_meta)]

            # traditional regressors trained from scratch on the new folds
            pooled_base = {}
            for f, split in enumerate(splits):
                train_subjects = new_data.subset(split.train)
                spec = FeatureSpec(bank_source.features.length, bank_source.features.stride,
                                   PhenotypeStats.fit(train_subjects))
                views = (view_of(kind),)
                tr = spec.build(train_subjects, views)
                vs = spec.build(new_data.subset(split.val), views)
                ts = spec.build(new_data.subset(split.test), views)
                base = train_baseline(kind, tr, vs, cfg.metamodel_config(
                    derive_seed(cfg.seed, f"method2/{kind}/baseline/{f}")), spec)
                pred = base.predict(ts)
                pooled_base.update(pred)
                rows.append((f, kind, "traditional", score_subjects(pred, new_data.subset(split.test))))
            tests += [dict(t, base_kind=kind) for t in pooled_tests(pooled_base, new_data, "traditional")]
            pred_lines += [f"{kind},traditional,-,{s},{repr(pooled_base[s])}" for s in sorted(pooled_base)]
        tests += [t for t in comparison_tests(rows, kinds) if t["name"] == "paired_ttest"]
    else:
        raise ValueError("method must be 1 or 2")

    rows.sort(key=lambda r: (r[0], kinds.index(r[1]), PIPELINES.index(r[2])))
    lines = [REPORT_HEADER] + [f"{f},{k},{p},{_fmt_r(r)}" for f, k, p, r in rows]
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")
    (out_dir / "predictions.csv").write_text("\n".join(pred_lines) + "\n")
    report = summarize([(f, f"{k}/{p}", r) for f, k, p, r in rows])
    summary = {
        "method": method,
        "table": {k: {p: report.summary.get(f"{k}/{p}") for p in PIPELINES} for k in kinds},
        "tests": tests,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out_dir, cfg, f"generalize --method {method}", {"models": str(models_dir)})
    return summary

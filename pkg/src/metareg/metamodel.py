"""Threshold-classifier bank plus a 4-unit meta-level network.

Training: each ordinal threshold t_k gets a binary classifier for
"score > t_k"; the bank's scores on the training windows then train a small
sigmoid-hidden / linear-output network that regresses the raw score. Window
predictions are averaged per subject.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import learners
from .dataset import Dataset, Split, Subject, aggregate_by_subject
from .errors import ConfigError, DataError, TrainingError
from .features import FC, SEQ, PhenotypeStats, SampleSet, build_samples
from .learners import (
    DEFAULT_GRIDS, REGRESSOR_FOR, ConstantScorer, Model, TrainConfig, class_weights,
    derive_seed, fit_classifier, fit_regressor, roc_auc, view_of,
)
from .learners.base import SCHEMA_VERSION, from_document, register
from .learners.common import Adam, EarlyStopper, sigmoid
from .stats import EvalReport, ZeroVarianceError, corr_significance, pearson, result_dict, summarize

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5)
META_HIDDEN = 4


def check_thresholds(thresholds: Sequence[float]) -> tuple[float, ...]:
    t = tuple(float(x) for x in thresholds)
    if not t:
        raise ConfigError("at least one threshold required")
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ConfigError("thresholds must be strictly increasing")
    if any(x == int(x) for x in t):
        raise ConfigError("thresholds must not coincide with integer scores")
    return t


def threshold_labels(score, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Bit k is 1 iff score > thresholds[k]; works on scalars or arrays."""
    s = np.asarray(score, dtype=float)
    return (s[..., None] > np.asarray(thresholds, dtype=float)).astype(int)


# ---------------------------------------------------------------- meta-level network

@register
class MetaNet(Model):
    """score vector s -> W2 . sigmoid(W1 s + b1) + b2."""

    kind = "MetaNet"
    task = "regression"

    @classmethod
    def init(cls, n_inputs: int, rng, y_mean: float = 0.0) -> "MetaNet":
        return cls({"hidden": META_HIDDEN}, {
            "W1": rng.normal(0.0, 1.0 / np.sqrt(n_inputs), size=(META_HIDDEN, n_inputs)),
            "b1": np.zeros(META_HIDDEN),
            "W2": rng.normal(0.0, 1.0, size=META_HIDDEN),
            "b2": np.asarray(float(y_mean)),
        })

    @classmethod
    def constant(cls, n_inputs: int, value: float) -> "MetaNet":
        return cls({"hidden": META_HIDDEN}, {
            "W1": np.zeros((META_HIDDEN, n_inputs)), "b1": np.zeros(META_HIDDEN),
            "W2": np.zeros(META_HIDDEN), "b2": np.asarray(float(value)),
        })

    def predict(self, S) -> np.ndarray:
        S = self._check_input(S, 2, self.params["W1"].shape[1])
        return meta_forward(self.params, S)[0]


def meta_forward(params, S):
    h = sigmoid(S @ params["W1"].T + params["b1"])
    return h @ params["W2"] + params["b2"], h


def meta_loss_grad(params, S, y):
    """Mean squared error and its gradient for every MetaNet parameter."""
    z, h = meta_forward(params, S)
    r = z - y
    loss = float(np.mean(r * r))
    dz = 2.0 * r / len(y)
    da = np.outer(dz, params["W2"]) * h * (1.0 - h)
    grads = {
        "W1": da.T @ S,
        "b1": da.sum(axis=0),
        "W2": h.T @ dz,
        "b2": np.asarray(dz.sum()),
    }
    return loss, grads


@dataclass(frozen=True)
class MetaConfig:
    epochs: int = 2000
    learning_rates: tuple[float, ...] = (0.01,)
    early_stop_patience: int = 100

    @classmethod
    def from_dict(cls, d: dict) -> "MetaConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown meta config keys: {sorted(unknown)}")
        cfg = cls(**d)
        object.__setattr__(cfg, "learning_rates", tuple(cfg.learning_rates))
        if cfg.epochs < 1 or cfg.early_stop_patience < 1 or not cfg.learning_rates:
            raise ConfigError("invalid meta config")
        return cfg


def train_meta_net(S, y, seed: int, learning_rate: float, epochs: int,
                   monitor=None, patience: int = 100) -> MetaNet:
    """Full-batch Adam on MSE; keeps the epoch with the best monitor value."""
    S = np.asarray(S, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(seed)
    net = MetaNet.init(S.shape[1], rng, float(y.mean()))
    params = net.params
    opt = Adam(params, lr=learning_rate)
    stopper = EarlyStopper(patience) if monitor is not None else None
    for epoch in range(epochs):
        loss, grads = meta_loss_grad(params, S, y)
        if not math.isfinite(loss):
            raise TrainingError("non-finite meta-level loss")
        opt.step(params, grads)
        if stopper is not None and stopper.update(epoch, monitor(MetaNet(net.hyperparams, params)), params):
            break
    if stopper is not None and stopper.best_params is not None:
        params = stopper.best_params
    return MetaNet(net.hyperparams, params)


# ---------------------------------------------------------------- feature spec

@dataclass(frozen=True)
class FeatureSpec:
    """Everything needed to turn subjects into samples the same way as at training."""

    length: int
    stride: int
    pheno_stats: PhenotypeStats

    def build(self, subjects: Sequence[Subject], views=(FC, SEQ)) -> SampleSet:
        return build_samples(subjects, self.length, self.stride, self.pheno_stats, views)

    def to_dict(self) -> dict:
        return {"length": self.length, "stride": self.stride, "pheno_stats": self.pheno_stats.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(int(d["length"]), int(d["stride"]), PhenotypeStats.from_dict(d["pheno_stats"]))


def subject_r(window_pred, samples: SampleSet) -> float:
    """Subject-level Pearson r; NaN when undefined (e.g. constant predictions)."""
    pred = aggregate_by_subject(zip(samples.subject_ids, window_pred))
    truth = samples.subject_scores()
    ids = sorted(pred)
    try:
        return pearson([pred[i] for i in ids], [truth[i] for i in ids])
    except (ZeroVarianceError, ValueError):
        return math.nan


# ---------------------------------------------------------------- metamodel

@dataclass
class MetamodelConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    kind_overrides: dict[int, str] = field(default_factory=dict)
    grids: dict[str, list[dict]] = field(default_factory=dict)
    train: TrainConfig = TrainConfig()
    meta: MetaConfig = MetaConfig()
    seed: int = 0

    def grid_for(self, kind: str) -> list[dict]:
        return list(self.grids.get(kind, DEFAULT_GRIDS[kind]))


class Metamodel:
    def __init__(self, bank: list[Model], meta: MetaNet, thresholds, base_kinds: list[str],
                 features: FeatureSpec | None = None, info: dict | None = None):
        if len(bank) != len(thresholds):
            raise ValueError("bank length must equal threshold count")
        views = {m.view for m in bank}
        if len(views) > 1:
            raise ValueError("all bank members must share one input view")
        self.bank = bank
        self.meta = meta
        self.thresholds = tuple(thresholds)
        self.base_kinds = list(base_kinds)
        self.features = features
        self.info = info or {}

    @property
    def view(self) -> str:
        return self.bank[0].view

    def score_matrix(self, samples: SampleSet) -> np.ndarray:
        """n-column base score matrix; column k always comes from bank[k]."""
        X = samples.view(self.view)
        return np.column_stack([m.predict_score(X) for m in self.bank])

    def predict_windows(self, samples: SampleSet) -> np.ndarray:
        return self.meta.predict(self.score_matrix(samples))

    def predict(self, samples: SampleSet, clip: bool = False) -> dict[str, float]:
        pred = aggregate_by_subject(zip(samples.subject_ids, self.predict_windows(samples)))
        if clip:
            pred = {k: min(8.0, max(0.0, v)) for k, v in pred.items()}
        return pred

    def predict_subjects(self, subjects: Sequence[Subject]) -> dict[str, float]:
        if self.features is None:
            raise ValueError("metamodel has no feature spec")
        return self.predict(self.features.build(subjects, views=(self.view,)))

    def bank_digest(self) -> str:
        h = hashlib.sha256()
        for m in self.bank:
            h.update(learners.dumps(m).encode())
        return h.hexdigest()

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(self.bank):
            learners.save_model(m, d / f"base_{k}.json")
        doc = {
            "schema_version": SCHEMA_VERSION,
            "thresholds": list(self.thresholds),
            "base_kinds": self.base_kinds,
            "meta": self.meta.to_document(),
            "manifest": {
                "n_base": len(self.bank),
                "features": None if self.features is None else self.features.to_dict(),
                "info": self.info,
            },
        }
        (d / "meta.json").write_text(json.dumps(doc, sort_keys=True, indent=1))

    @classmethod
    def load(cls, directory: str | Path) -> "Metamodel":
        d = Path(directory)
        meta_path = d / "meta.json"
        if not meta_path.exists():
            raise DataError(f"no metamodel at {d}")
        doc = json.loads(meta_path.read_text())
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported metamodel schema {doc.get('schema_version')!r}")
        n = doc["manifest"]["n_base"]
        bank = [learners.load_model(d / f"base_{k}.json") for k in range(n)]
        feats = doc["manifest"].get("features")
        return cls(bank, from_document(doc["meta"]), doc["thresholds"], doc["base_kinds"],
                   None if feats is None else FeatureSpec.from_dict(feats),
                   doc["manifest"].get("info", {}))


def _fit_meta_stage(S_tr, y_tr, S_vs, vs: SampleSet, meta_cfg: MetaConfig, seed: int) -> tuple[MetaNet, dict]:
    def evaluate(net):
        return subject_r(net.predict(S_vs), vs)

    def fit(setting):
        return train_meta_net(S_tr, y_tr, seed, setting["learning_rate"], meta_cfg.epochs,
                              monitor=evaluate, patience=meta_cfg.early_stop_patience)

    grid = [{"learning_rate": lr} for lr in meta_cfg.learning_rates]
    res = learners.grid_search(fit, grid, evaluate)
    return res.model, {"meta_setting": res.best, "meta_val_r": res.metric}


def train_metamodel(tr: SampleSet, vs: SampleSet, base_kind: str,
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                    config: MetamodelConfig | None = None,
                    features: FeatureSpec | None = None) -> Metamodel:
    """Train the bank (one classifier per threshold) and then the meta-level net.

    A threshold whose training labels hold one class gets a ConstantScorer
    emitting the class prior, and a warning is recorded in ``info``.
    """
    config = config or MetamodelConfig()
    thresholds = check_thresholds(thresholds)
    if set(map(str, tr.subject_ids)) & set(map(str, vs.subject_ids)):
        raise DataError("training and validation samples share subjects")
    kinds = [config.kind_overrides.get(k, base_kind) for k in range(len(thresholds))]
    for kind in kinds:
        if kind not in learners.CLASSIFIERS:
            raise ConfigError(f"unknown base kind {kind!r}")
    views = {view_of(k) for k in kinds}
    if len(views) > 1:
        raise ConfigError("per-threshold kinds must share one input view")
    view = views.pop()
    X_tr, X_vs = tr.view(view), vs.view(view)

    bank, warnings, selected = [], [], []
    for k, (t, kind) in enumerate(zip(thresholds, kinds)):
        y = (tr.scores > t).astype(float)
        y_val = (vs.scores > t).astype(float)
        if y.min() == y.max():
            prior = float(y.mean())
            bank.append(ConstantScorer.from_prior(prior, view))
            msg = f"threshold {t}: single class in training data, constant scorer {prior}"
            log.warning(msg)
            warnings.append(msg)
            selected.append(None)
            continue
        weights = class_weights(y)
        seed = derive_seed(config.seed, f"base/{k}/{kind}")

        def evaluate(model, X_vs=X_vs, y_val=y_val):
            return roc_auc(model.predict_score(X_vs), y_val)

        def fit(setting, y=y, weights=weights, seed=seed, kind=kind, evaluate=evaluate):
            return fit_classifier(kind, X_tr, y, weights, setting, config.train, seed,
                                  monitor=evaluate)

        res = learners.search(kind, fit, config.grid_for(kind), evaluate)
        bank.append(res.model)
        selected.append({"setting": res.best, "val_auc": res.metric})

    S_tr = np.column_stack([m.predict_score(X_tr) for m in bank])
    S_vs = np.column_stack([m.predict_score(X_vs) for m in bank])
    meta, meta_info = _fit_meta_stage(S_tr, tr.scores, S_vs, vs, config.meta,
                                      derive_seed(config.seed, "meta"))
    info = {"warnings": warnings, "selected": selected, **meta_info}
    return Metamodel(bank, meta, thresholds, kinds, features, info)


# ---------------------------------------------------------------- baselines

class Baseline:
    """A traditional regressor together with the feature spec it was trained on."""

    def __init__(self, regressor: Model, features: FeatureSpec | None = None, info=None):
        self.regressor = regressor
        self.features = features
        self.info = info or {}

    @property
    def view(self) -> str:
        return view_of(self.regressor.kind)

    def predict(self, samples: SampleSet) -> dict[str, float]:
        return aggregate_by_subject(
            zip(samples.subject_ids, self.regressor.predict(samples.view(self.view))))

    def predict_subjects(self, subjects: Sequence[Subject]) -> dict[str, float]:
        return self.predict(self.features.build(subjects, views=(self.view,)))

    def save(self, path: str | Path) -> None:
        doc = {"schema_version": SCHEMA_VERSION, "regressor": self.regressor.to_document(),
               "features": None if self.features is None else self.features.to_dict(),
               "info": self.info}
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Baseline":
        doc = json.loads(Path(path).read_text())
        feats = doc.get("features")
        return cls(from_document(doc["regressor"]),
                   None if feats is None else FeatureSpec.from_dict(feats), doc.get("info"))


def train_baseline(kind: str, tr: SampleSet, vs: SampleSet,
                   config: MetamodelConfig | None = None,
                   features: FeatureSpec | None = None) -> Baseline:
    """Traditional regressor for ``kind`` (a base kind or a regressor kind).

    Hyperparameters are chosen by subject-level Pearson r on ``vs``.
    """
    config = config or MetamodelConfig()
    reg_kind = REGRESSOR_FOR.get(kind, kind)
    if reg_kind not in learners.REGRESSORS:
        raise ConfigError(f"unknown regressor kind {kind!r}")
    view = view_of(reg_kind)
    X_tr, X_vs = tr.view(view), vs.view(view)
    seed = derive_seed(config.seed, f"baseline/{reg_kind}")

    def evaluate(model):
        return subject_r(model.predict(X_vs), vs)

    def fit(setting):
        return fit_regressor(reg_kind, X_tr, tr.scores, setting, config.train, seed,
                             monitor=evaluate)

    res = learners.search(reg_kind, fit, config.grid_for(reg_kind), evaluate)
    return Baseline(res.model, features, {"setting": res.best, "val_r": res.metric})


# ---------------------------------------------------------------- generalization

def score_subjects(pred: dict[str, float], subjects: Sequence[Subject]) -> float | None:
    """Subject-level r between predictions and true scores; None if undefined."""
    pairs = sorted((s.id, pred[s.id], s.score) for s in subjects
                   if s.id in pred and s.score is not None)
    try:
        return pearson([p for _, p, _ in pairs], [t for _, _, t in pairs])
    except (ZeroVarianceError, ValueError):
        return None


def check_schema(model: Metamodel, dataset: Dataset) -> None:
    width = _input_width(model.bank[0])
    if width is None:
        return
    if model.view == FC:
        expected = dataset.rois * (dataset.rois - 1) // 2
    else:
        stats = model.features.pheno_stats if model.features else None
        expected = dataset.rois + (len(stats.names) if stats else 0)
    if width != expected:
        raise DataError(f"ROI count {dataset.rois} incompatible with trained model")


def _input_width(model: Model) -> int | None:
    p = model.params
    for key in ("w", "W1", "Wx"):
        if key in p:
            return int(p[key].shape[0])
    if "n_features" in p:
        return int(p["n_features"])
    return None


def generalize_direct(models: Sequence[Metamodel], new_dataset: Dataset) -> EvalReport:
    """Method 1: apply each frozen metamodel to the whole new dataset."""
    rows, preds = [], {}
    for i, model in enumerate(models):
        check_schema(model, new_dataset)
        pred = model.predict_subjects(new_dataset.subjects)
        preds[i] = pred
        rows.append((i, "metamodel", score_subjects(pred, new_dataset.subjects)))
    report = summarize(rows)
    report.predictions = preds
    return report


def generalize_retrain_meta(bank_source: Metamodel, new_splits: Sequence[Split],
                            new_dataset: Dataset, config: MetamodelConfig | None = None) -> EvalReport:
    """Method 2: frozen bank, fresh meta-level net per fold of the new data.

    Reports per-fold test r plus the pooled correlation over every subject's
    out-of-fold prediction, with its significance test (df = n - 2).
    """
    config = config or MetamodelConfig()
    check_schema(bank_source, new_dataset)
    digest = bank_source.bank_digest()
    feats = bank_source.features
    views = (bank_source.view,)
    rows, pooled = [], {}
    for fold, split in enumerate(new_splits):
        tr = feats.build(new_dataset.subset(split.train), views)
        vs = feats.build(new_dataset.subset(split.val), views)
        ts = feats.build(new_dataset.subset(split.test), views)
        S_tr, S_vs = bank_source.score_matrix(tr), bank_source.score_matrix(vs)
        meta, _ = _fit_meta_stage(S_tr, tr.scores, S_vs, vs, config.meta,
                                  derive_seed(config.seed, f"method2/{fold}"))
        fresh = Metamodel(bank_source.bank, meta, bank_source.thresholds,
                          bank_source.base_kinds, feats)
        pred = fresh.predict(ts)
        pooled.update(pred)
        rows.append((fold, "metamodel", score_subjects(pred, new_dataset.subset(split.test))))
    if bank_source.bank_digest() != digest:
        raise RuntimeError("base bank changed during meta-level retraining")
    report = summarize(rows, pooled_tests(pooled, new_dataset, "metamodel"))
    report.predictions = {"pooled": pooled}
    return report


def pooled_tests(pred: dict[str, float], dataset: Dataset, tag: str) -> list[dict]:
    subjects = [s for s in dataset.subjects if s.id in pred]
    r = score_subjects(pred, subjects)
    entry = {"name": "pooled_correlation", "tag": tag, "n": len(subjects)}
    if r is None or len(subjects) < 4:
        entry["r"] = r
        entry["undefined"] = True
    else:
        entry.update(result_dict(corr_significance(r, len(subjects))))
    return [entry]

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import metareg.metamodel as mm
from helpers import max_rel_error, numeric_grad
from metareg.dataset import kfold_split
from metareg.errors import ConfigError, DataError
from metareg.features import FC, PhenotypeStats, SampleSet
from metareg.learners import ConstantScorer, sigmoid
from metareg.metamodel import (
    DEFAULT_THRESHOLDS, FeatureSpec, MetaConfig, Metamodel, MetamodelConfig, MetaNet,
    check_thresholds, generalize_direct, generalize_retrain_meta, meta_loss_grad, threshold_labels,
    train_baseline, train_meta_net, train_metamodel,
)
from metareg.synth import SynthConfig, generate

QUICK = MetamodelConfig(
    grids={"LR": [{"l2": 1e-2}], "LinearRegression": [{"l2": 1e-2}]},
    meta=MetaConfig(epochs=300, early_stop_patience=50),
)


@pytest.fixture(scope="module")
def small():
    """A small synthetic dataset, one split, and the samples for it."""
    ds = generate(SynthConfig(n_subjects=48, rois=6, time_points=80,
                              signal_pairs=[(0, 1), (2, 3), (4, 5)], signal_strength=0.9, seed=3))
    split = kfold_split(ds, 4, 0.15, seed=1)[0]
    spec = FeatureSpec(40, 10, PhenotypeStats.fit(ds.subset(split.train)))
    parts = {name: spec.build(ds.subset(getattr(split, name)), views=(FC,))
             for name in ("train", "val", "test")}
    return ds, split, spec, parts


# ---------------------------------------------------------------- thresholds

def test_threshold_labels_examples():
    assert threshold_labels(3).tolist() == [1, 1, 1, 0, 0, 0, 0]
    assert threshold_labels(0).tolist() == [0] * 7
    assert threshold_labels(8).tolist() == [1] * 7
    assert threshold_labels([0, 8]).shape == (2, 7)


@given(st.integers(0, 8))
def test_threshold_labels_monotone(score):
    bits = threshold_labels(score)
    assert all(a >= b for a, b in zip(bits, bits[1:]))
    assert bits.sum() == sum(t < score for t in DEFAULT_THRESHOLDS)


def test_check_thresholds():
    assert check_thresholds([0.5, 2.5]) == (0.5, 2.5)
    for bad in ([], [1.5, 0.5], [0.5, 2.0], [0.5, 0.5]):
        with pytest.raises(ConfigError):
            check_thresholds(bad)


# ---------------------------------------------------------------- meta-level network

def test_meta_forward_definition():
    rng = np.random.default_rng(0)
    net = MetaNet.init(7, rng, 2.0)
    net.params["b1"] = rng.normal(size=4)
    s = rng.uniform(size=7)
    expected = net.params["W2"] @ sigmoid(net.params["W1"] @ s + net.params["b1"]) + net.params["b2"]
    assert net.predict(s[None, :])[0] == pytest.approx(float(expected), abs=1e-14)
    assert net.params["W1"].shape == (4, 7)


def test_constant_meta_net():
    net = MetaNet.constant(7, 3.25)
    S = np.random.default_rng(0).uniform(size=(10, 7))
    assert np.all(net.predict(S) == 3.25)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_meta_gradient(seed):
    rng = np.random.default_rng(seed)
    params = MetaNet.init(7, rng, 1.0).params
    params["b1"] = rng.normal(size=4)
    S = rng.uniform(size=(6, 7))
    y = rng.integers(0, 9, size=6).astype(float)
    _, analytic = meta_loss_grad(params, S, y)
    numeric = numeric_grad(lambda p: meta_loss_grad(p, S, y)[0], params)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_stub_bits_recover_scores():
    y = np.repeat(np.arange(9), 10).astype(float)
    S = threshold_labels(y).astype(float)
    net = train_meta_net(S, y, seed=0, learning_rate=0.01, epochs=2000)
    assert np.mean(np.abs(net.predict(S) - y)) < 0.25


# ---------------------------------------------------------------- prediction contract

def stub_samples(ids, n_windows=2):
    sids = np.repeat(np.asarray(ids, dtype=object), n_windows)
    return SampleSet(sids, np.tile(np.arange(n_windows), len(ids)),
                     np.zeros(len(sids)), fc=np.zeros((len(sids), 3)))


def test_score_matrix_column_order():
    bank = [ConstantScorer.from_prior(k / 10) for k in range(7)]
    model = Metamodel(bank, MetaNet.constant(7, 0.0), DEFAULT_THRESHOLDS, ["Constant"] * 7)
    S = model.score_matrix(stub_samples(["a", "b"]))
    assert S.shape == (4, 7)
    assert np.allclose(S, np.arange(7) / 10)


def test_window_predictions_average_per_subject():
    bank = [ConstantScorer.from_prior(0.0) for _ in range(7)]
    model = Metamodel(bank, MetaNet.constant(7, 0.0), DEFAULT_THRESHOLDS, ["Constant"] * 7)
    model.predict_windows = lambda samples: np.array([1.0, 2.0, 4.0, 4.0])
    assert model.predict(stub_samples(["a", "b"])) == {"a": 1.5, "b": 4.0}


def test_clip_flag():
    bank = [ConstantScorer.from_prior(0.0) for _ in range(7)]
    model = Metamodel(bank, MetaNet.constant(7, 9.5), DEFAULT_THRESHOLDS, ["Constant"] * 7)
    samples = stub_samples(["a"])
    assert model.predict(samples) == {"a": 9.5}
    assert model.predict(samples, clip=True) == {"a": 8.0}


def test_metamodel_invariants():
    with pytest.raises(ValueError):
        Metamodel([ConstantScorer.from_prior(0.1)], MetaNet.constant(1, 0), DEFAULT_THRESHOLDS, ["x"])
    mixed = [ConstantScorer.from_prior(0.1, "fc"), ConstantScorer.from_prior(0.1, "seq")]
    with pytest.raises(ValueError):
        Metamodel(mixed, MetaNet.constant(2, 0), (0.5, 1.5), ["x", "y"])


# ---------------------------------------------------------------- training

def test_bank_column_k_trained_on_threshold_k(small, monkeypatch):
    _, _, spec, parts = small
    seen = []

    def recording_fit(kind, X, y, weights, setting, config, seed, monitor=None):
        seen.append(float(np.mean(y)))
        return ConstantScorer.from_prior(float(np.mean(y)))

    monkeypatch.setattr(mm, "fit_classifier", recording_fit)
    model = train_metamodel(parts["train"], parts["val"], "LR", config=QUICK, features=spec)
    tr = parts["train"]
    expected = [float(np.mean(tr.scores > t)) for t in DEFAULT_THRESHOLDS if 0 < np.mean(tr.scores > t) < 1]
    assert seen == expected
    S = model.score_matrix(tr)
    for k, t in enumerate(DEFAULT_THRESHOLDS):
        assert S[0, k] == pytest.approx(float(np.mean(tr.scores > t)))


def test_train_metamodel_structure(small):
    _, _, spec, parts = small
    model = train_metamodel(parts["train"], parts["val"], "LR", config=QUICK, features=spec)
    assert len(model.bank) == 7
    assert model.meta.params["W1"].shape == (4, 7)
    assert model.base_kinds == ["LR"] * 7
    a, b = model.predict(parts["test"]), model.predict(parts["test"])
    assert a == b
    assert sorted(a) == sorted(set(parts["test"].subject_ids))


def test_degenerate_thresholds_get_constant_scorers(small):
    ds, split, spec, parts = small
    tr = parts["train"].take(parts["train"].scores <= 4)
    vs = parts["val"].take(parts["val"].scores <= 4)
    model = train_metamodel(tr, vs, "LR", config=QUICK, features=spec)
    kinds = [m.kind for m in model.bank]
    assert kinds[4:] == ["Constant"] * 3
    assert all(m.predict_score(tr.fc[:1])[0] == 0.0 for m in model.bank[4:])
    assert len(model.info["warnings"]) == 3


def test_train_metamodel_rejects_shared_subjects(small):
    _, _, spec, parts = small
    with pytest.raises(DataError):
        train_metamodel(parts["train"], parts["train"], "LR", config=QUICK)


def test_mixed_kind_bank(small):
    _, _, spec, parts = small
    cfg = MetamodelConfig(grids=QUICK.grids | {"LinearSVM": [{"C": 1.0, "scale": 1.0}]},
                          kind_overrides={0: "LinearSVM"}, meta=QUICK.meta)
    model = train_metamodel(parts["train"], parts["val"], "LR", config=cfg)
    assert model.base_kinds[0] == "LinearSVM" and model.bank[0].kind == "LinearSVM"
    assert model.bank[1].kind == "LR"
    with pytest.raises(ConfigError):
        train_metamodel(parts["train"], parts["val"], "LR",
                        config=MetamodelConfig(kind_overrides={0: "LSTM"}))


def test_save_load_round_trip(small, tmp_path):
    _, _, spec, parts = small
    model = train_metamodel(parts["train"], parts["val"], "LR", config=QUICK, features=spec)
    model.save(tmp_path / "m")
    names = sorted(p.name for p in (tmp_path / "m").iterdir())
    assert names == ["base_0.json", "base_1.json", "base_2.json", "base_3.json", "base_4.json",
                     "base_5.json", "base_6.json", "meta.json"]
    doc = json.loads((tmp_path / "m" / "meta.json").read_text())
    assert doc["thresholds"] == list(DEFAULT_THRESHOLDS)
    back = Metamodel.load(tmp_path / "m")
    assert back.bank_digest() == model.bank_digest()
    a = model.predict_windows(parts["test"])
    b = back.predict_windows(parts["test"])
    assert np.max(np.abs(a - b)) <= 1e-12
    with pytest.raises(DataError):
        Metamodel.load(tmp_path / "missing")


def linear_samples(n_subjects, seed):
    """Window features that carry the score linearly plus noise."""
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 9, size=n_subjects).astype(float)
    ids = np.repeat(np.array([f"{seed}_{i}" for i in range(n_subjects)], dtype=object), 3)
    y = np.repeat(scores, 3)
    fc = np.column_stack([0.5 * y + rng.normal(0, 0.5, len(y)), rng.normal(size=(len(y), 4))])
    return SampleSet(ids, np.tile(np.arange(3), n_subjects), y, fc=fc)


def test_baseline_recovers_linear_signal():
    tr, vs, ts = linear_samples(60, 0), linear_samples(10, 1), linear_samples(30, 2)
    base = train_baseline("LR", tr, vs, config=QUICK)
    assert base.regressor.kind == "LinearRegression"
    pred = base.predict(ts)
    truth = ts.subject_scores()
    ids = sorted(pred)
    assert np.corrcoef([pred[i] for i in ids], [truth[i] for i in ids])[0, 1] >= 0.9


def test_baseline_on_synthetic_split(small, tmp_path):
    _, _, spec, parts = small
    base = train_baseline("LR", parts["train"], parts["val"], config=QUICK, features=spec)
    pred = base.predict(parts["test"])
    assert sorted(pred) == sorted(set(parts["test"].subject_ids))
    base.save(tmp_path / "b.json")
    back = type(base).load(tmp_path / "b.json")
    assert back.predict(parts["test"]) == pred


# ---------------------------------------------------------------- generalization

def test_generalize_direct(small):
    ds, _, spec, parts = small
    model = train_metamodel(parts["train"], parts["val"], "LR", config=QUICK, features=spec)
    new = generate(SynthConfig(n_subjects=20, rois=6, time_points=80,
                               signal_pairs=[(0, 1), (2, 3), (4, 5)], signal_strength=0.9, seed=11))
    one = generalize_direct([model], new)
    assert one.summary["metamodel"]["singleton"] and one.summary["metamodel"]["sd"] == 0.0
    two = generalize_direct([model, model], new)
    assert two.summary["metamodel"]["n"] == 2
    assert two.per_fold[0][2] == two.per_fold[1][2]
    assert generalize_direct([model], new).to_csv() == one.to_csv()
    assert one.per_fold[0][2] > 0.5
    wrong = generate(SynthConfig(n_subjects=5, rois=7, time_points=80, signal_pairs=[(0, 1)]))
    with pytest.raises(DataError):
        generalize_direct([model], wrong)


def test_generalize_retrain_meta(small):
    ds, _, spec, parts = small
    model = train_metamodel(parts["train"], parts["val"], "LR", config=QUICK, features=spec)
    new = generate(SynthConfig(n_subjects=30, rois=6, time_points=80,
                               signal_pairs=[(0, 1), (2, 3), (4, 5)], signal_strength=0.9, seed=12))
    before = [m.params["w"].copy() for m in model.bank]
    splits = kfold_split(new, 5, 0.15, seed=0)
    report = generalize_retrain_meta(model, splits, new, QUICK)
    assert len(report.per_fold) == 5
    assert all(np.array_equal(a, m.params["w"]) for a, m in zip(before, model.bank))
    (pooled,) = report.tests
    assert pooled["n"] == 30
    assert pooled["df"] == 28
    assert set(report.predictions["pooled"]) == set(new.ids)

import json
import subprocess
import sys

import numpy as np
import pytest

from metareg.cli import main

SMALL = {
    "seed": 0,
    "base_kinds": ["LR"],
    "k_folds": 3,
    "window": {"length": 40, "stride": 20},
    "synth": {"n_subjects": 30, "rois": 6, "time_points": 80, "signal_pairs": [[0, 1], [2, 3]]},
    "grids": {"LR": [{"l2": 0.01}], "LinearRegression": [{"l2": 0.01}]},
    "meta": {"epochs": 150},
    "generalize": {"k_folds": 3},
}


def write_config(path, **overrides):
    path.write_text(json.dumps({**SMALL, **overrides}))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Two synthetic datasets and one finished crossval run."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json", data_dir="data", out_dir="run")
    assert main(["synth", "--config", cfg, "--out", str(root / "data")]) == 0
    other = write_config(root / "other.json", synth={**SMALL["synth"], "seed": 9})
    assert main(["synth", "--config", other, "--out", str(root / "data_b")]) == 0
    assert main(["crossval", "--config", cfg]) == 0
    return root, cfg


def test_synth_writes_dataset(workspace, capsys):
    root, cfg = workspace
    assert (root / "data" / "phenotypes.csv").read_text().splitlines()[0] == "id,site,age,fiq,score"
    assert len(list((root / "data" / "series").glob("*.csv"))) == 30
    assert (root / "data" / "manifest.json").exists()
    assert not (root / "data" / ".partial").exists()


def test_synth_default_count_and_rerun_identical(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    out_a, out_b = tmp_path / "nested" / "a", tmp_path / "b"
    assert main(["synth", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(out_b)]) == 0
    files = sorted(p.relative_to(out_a) for p in out_a.rglob("*.csv"))
    assert len(files) == 121
    for rel in files + [out_a / "manifest.json"]:
        rel = rel.relative_to(out_a) if rel.is_absolute() else rel
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes()
    assert "site" in capsys.readouterr().out


def test_crossval_outputs(workspace):
    root, _ = workspace
    run = root / "run"
    lines = (run / "report.csv").read_text().splitlines()
    assert lines[0] == "fold,base_kind,pipeline,r"
    assert len(lines) == 1 + 3 * 2
    assert {ln.split(",")[2] for ln in lines[1:]} == {"traditional", "metamodel"}
    summary = json.loads((run / "summary.json").read_text())
    assert set(summary["table"]["LR"]) == {"traditional", "metamodel"}
    assert summary["tests"][0]["name"] == "paired_ttest"
    manifest = json.loads((run / "manifest.json").read_text())
    assert {"config_sha256", "seed", "versions"} <= set(manifest)
    assert (run / "models" / "fold_2" / "LR" / "metamodel" / "meta.json").exists()
    assert not (run / ".partial").exists()


def test_crossval_two_kinds_adds_anova(tmp_path, workspace):
    root, _ = workspace
    grids = {**SMALL["grids"], "LinearSVM": [{"C": 1.0, "scale": 1.0}],
             "LinearSVR": [{"C": 1.0, "scale": 1.0}]}
    cfg = write_config(tmp_path / "c.json", base_kinds=["LR", "LinearSVM"], grids=grids)
    assert main(["crossval", "--config", cfg, "--data", str(root / "data"),
                 "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "report.csv").read_text().splitlines()
    assert len(lines) - 1 == 2 * 3 * 2  # kinds x folds x pipelines
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    anova = [t for t in summary["tests"] if t["name"] == "rm_anova_2way"]
    assert [t["effect_name"] for t in anova] == ["method", "algorithm", "method:algorithm"]
    assert (anova[0]["df_num"], anova[0]["df_den"]) == (1, 2)


def test_crossval_jobs_identical(tmp_path, workspace):
    root, _ = workspace
    cfg = write_config(tmp_path / "c.json")
    for jobs in ("1", "3"):
        assert main(["crossval", "--config", cfg, "--data", str(root / "data"),
                     "--out", str(tmp_path / jobs), "--jobs", jobs]) == 0
    assert (tmp_path / "1" / "report.csv").read_bytes() == (tmp_path / "3" / "report.csv").read_bytes()


def test_generalize_methods(workspace):
    root, cfg = workspace
    assert main(["generalize", "--config", cfg, "--models", str(root / "run"), "--method", "1",
                 "--data", str(root / "data_b")]) == 0
    out1 = root / "run" / "generalize_method1"
    rows = (out1 / "report.csv").read_text().splitlines()[1:]
    assert len([r for r in rows if ",metamodel," in r]) == 3
    tests = json.loads((out1 / "summary.json").read_text())["tests"]
    assert tests[0]["name"] == "paired_ttest" and tests[0]["n"] == 3

    assert main(["generalize", "--config", cfg, "--models", str(root / "run" / "models"),
                 "--method", "2", "--data", str(root / "data_b")]) == 0
    out2 = root / "run" / "generalize_method2"
    summary = json.loads((out2 / "summary.json").read_text())
    pooled = [t for t in summary["tests"] if t["name"] == "pooled_correlation"]
    assert {t["tag"] for t in pooled} == {"metamodel", "traditional"}
    assert all(t["df"] == 28 for t in pooled)
    assert (out2 / "manifest.json").exists()


def test_predict(workspace, tmp_path):
    root, _ = workspace
    data = root / "data_b"
    np.savetxt(data / "series" / "zzz_new.csv", np.random.default_rng(0).normal(size=(80, 6)),
               delimiter=",")
    try:
        args = ["predict", "--models", str(root / "run" / "models" / "fold_0" / "LR" / "metamodel"),
                "--data", str(data)]
        assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    finally:
        (data / "series" / "zzz_new.csv").unlink()
    text = (tmp_path / "a.csv").read_text()
    assert text == (tmp_path / "b.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "subject_id,predicted_score"
    ids = [ln.split(",")[0] for ln in lines[1:]]
    assert ids == sorted(ids) and "zzz_new" in ids and len(ids) == 31
    assert not (tmp_path / "a.csv.partial").exists()


def test_describe(workspace, capsys, tmp_path):
    root, _ = workspace
    assert main(["describe", "--data", str(root / "data"), "--out", str(tmp_path / "d")]) == 0
    assert capsys.readouterr().out.split()[:7] == ["site", "n", "time_points", "age_mean", "age_sd",
                                                   "fiq_mean", "fiq_sd"]
    assert (tmp_path / "d" / "describe.csv").read_text().startswith("site,n,time_points")


def test_usage_errors(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", data_dir="nowhere")
    with pytest.raises(SystemExit) as exc:
        main(["generalize", "--config", cfg, "--models", "m", "--method", "3"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 0, "colour": "red"}))
    assert main(["crossval", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "unknown config keys" in capsys.readouterr().err
    assert main(["crossval", "--config", cfg, "--jobs", "0", "--out", str(tmp_path / "o")]) == 1
    assert main(["predict", "--models", str(tmp_path), "--data", str(tmp_path)]) == 1


def test_data_errors(tmp_path, workspace):
    root, _ = workspace
    cfg = write_config(tmp_path / "c.json")
    assert main(["crossval", "--config", cfg, "--data", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["predict", "--models", str(tmp_path), "--data", str(root / "data"),
                 "--out", str(tmp_path / "p.csv")]) == 2
    assert main(["generalize", "--config", cfg, "--models", str(tmp_path / "none"),
                 "--method", "1", "--data", str(root / "data"), "--out", str(tmp_path / "g")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_failure_leaves_partial_marker(tmp_path, workspace):
    root, _ = workspace
    # an absurd learning rate makes the regressor's loss overflow on every setting
    grids = {"MLP": [{"hidden": [4, 2]}], "MLPReg": [{"hidden": [4, 2], "learning_rate": 1e300}]}
    cfg = write_config(tmp_path / "c.json", base_kinds=["MLP"], grids=grids, train={"epochs": 3})
    out = tmp_path / "o"
    assert main(["crossval", "--config", cfg, "--data", str(root / "data"), "--out", str(out)]) == 3
    assert (out / ".partial").exists()


def test_module_entry_point(workspace):
    root, _ = workspace
    res = subprocess.run([sys.executable, "-m", "metareg", "describe", "--data", str(root / "data")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("site")

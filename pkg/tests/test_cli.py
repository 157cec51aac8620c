import json
from pathlib import Path

import numpy as np
import pytest

from lobjump import dataset as dsmod
from lobjump import jumps
from lobjump.cli import EXIT_OK, EXIT_STAGE_FAILED, EXIT_USAGE, main
from lobjump.config import PRESETS, PipelineConfig, load_config, preset, to_ini
from lobjump.lob import N_LEVELS, SNAPSHOT_DTYPE, write_snapshots

TINY = """
[scenario]
days = 5
seconds_per_day = 3600
jump_intensity = 6
signal_fraction = 0.8

[detector]
window_K = 60
n_per_day = 60
warmup_days = 1

[dataset]
steps = 12
minutes_per_day = 60

[split]
entries = 1-2:3-3

[train]
epochs = 2
patience = 2

[pipeline]
random_trials = 20
"""


@pytest.fixture(scope="module")
def tiny_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY)
    return path


@pytest.fixture(scope="module")
def pipeline_runs(tiny_ini, tmp_path_factory):
    outs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"run{k}")
        assert main(["pipeline", "--config", str(tiny_ini), "--seed", "3", "--out-dir", str(out)]) == EXIT_OK
        outs.append(out)
    return outs


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_writes_report_grid(pipeline_runs):
    out = pipeline_runs[0]
    report = (out / "report" / "report.txt").read_text()
    assert "F1 by set and stock: CNN_LSTM_A" in report and "Random" in report
    assert (out / "report" / "report_CNN_LSTM_A.csv").read_text().startswith("set,stock,precision")
    assert (out / "report" / "attention_top.txt").exists()
    manifest = json.loads((out / "SYN" / "manifest_dataset.json").read_text())
    assert manifest["seed"] == 3 and len(manifest["config_hash"]) == 64
    assert set(manifest["outputs"]) == {"dataset.bin"}
    assert not list(out.rglob("*.partial"))


def test_pipeline_is_byte_identical(pipeline_runs):
    a, b = (tree(p) for p in pipeline_runs)
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []
    assert any(k.endswith(".ckpt") for k in a) and "SYN/dataset.bin" in a


def test_stages_chain_and_feature_file_path(tiny_ini, pipeline_runs, tmp_path):
    out = tmp_path
    run = lambda *a: main([a[0], "--config", str(tiny_ini), "--seed", "3", "--out-dir", str(out), *a[1:]])  # noqa: E731
    assert run("synth") == EXIT_OK
    assert run("replay", "--events", str(out / "events.csv")) == EXIT_OK
    assert run("detect", "--snapshots", str(out / "snapshots.bin")) == EXIT_OK
    assert run("features", "--snapshots", str(out / "snapshots.bin"), "--events", str(out / "events.csv")) == EXIT_OK
    assert run("dataset", "--labels", str(out / "labels.csv"), "--features", str(out / "features.bin")) == EXIT_OK
    # reading frames from the feature file gives the same dataset as computing them on the fly
    ref = pipeline_runs[0] / "SYN"
    assert (out / "dataset.bin").read_bytes() == (ref / "dataset.bin").read_bytes()
    assert (out / "labels.csv").read_bytes() == (ref / "labels.csv").read_bytes()
    models = out / "models"
    assert main(["train", "--config", str(tiny_ini), "--seed", "3", "--out-dir", str(models),
                 "--dataset", str(out / "dataset.bin")]) == EXIT_OK
    assert (models / "CNN_LSTM_A_set1.ckpt").read_bytes() == (ref / "models" / "CNN_LSTM_A_set1.ckpt").read_bytes()
    assert run("eval", "--dataset", str(out / "dataset.bin"), "--models", str(models)) == EXIT_OK
    assert run("attention", "--dataset", str(out / "dataset.bin"), "--models", str(models)) == EXIT_OK
    assert (out / "report.txt").exists() and (out / "attention.csv").exists()


def test_train_three_class(tiny_ini, pipeline_runs, tmp_path):
    ds_path = pipeline_runs[0] / "SYN" / "dataset.bin"
    assert main(["train", "--config", str(tiny_ini), "--out-dir", str(tmp_path), "--dataset", str(ds_path),
                 "--three-class"]) == EXIT_OK
    assert "three_class" in (tmp_path / "CNN_LSTM_A.ini").read_text()


def test_detect_constant_price_gives_no_jumps(tmp_path):
    n_days, per_day = 4, 23_400
    snaps = np.zeros(n_days * per_day, dtype=SNAPSHOT_DTYPE)
    snaps["second"] = np.arange(1, len(snaps) + 1)
    snaps["ask"][:, :, 0] = 10_001 + np.arange(N_LEVELS)
    snaps["bid"][:, :, 0] = 9_999 - np.arange(N_LEVELS)
    snaps["ask"][:, :, 1] = snaps["bid"][:, :, 1] = 100
    write_snapshots(tmp_path / "snapshots.bin", snaps)
    ini = tmp_path / "c.ini"
    ini.write_text(f"[scenario]\ndays = {n_days}\n")
    assert main(["detect", "--config", str(ini), "--snapshots", str(tmp_path / "snapshots.bin"),
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    labels = jumps.read_labels(tmp_path / "labels.csv")
    assert labels.n_jumps == 0


def test_failed_stage_removes_partial_outputs(tmp_path, capsys):
    events = tmp_path / "events.csv"
    events.write_text("ticksize=0.01\n2000000000,1,A,ADD,10001,100\n1000000000,2,B,ADD,9999,100\n")
    assert main(["replay", "--events", str(events), "--out-dir", str(tmp_path)]) == EXIT_STAGE_FAILED
    err = capsys.readouterr().err
    assert err.startswith("lobjump replay:")
    assert not (tmp_path / "snapshots.bin").exists()
    assert not list(tmp_path.glob("*.partial")) and not (tmp_path / "manifest_replay.json").exists()


def test_missing_input_is_stage_error(tmp_path, capsys):
    assert main(["detect", "--snapshots", str(tmp_path / "nope.bin"), "--out-dir", str(tmp_path)]) == EXIT_STAGE_FAILED
    assert "detect: missing input" in capsys.readouterr().err


def test_config_errors_are_usage_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[detector]\nbogus = 1\n")
    assert main(["synth", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_USAGE
    bad.write_text("[nowhere]\nx = 1\n")
    assert main(["synth", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert "config error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_config_roundtrip_and_presets(tmp_path):
    for name in PRESETS:
        cfg = preset(name)
        path = tmp_path / f"{name}.ini"
        path.write_text(to_ini(cfg))
        assert load_config(path) == cfg
    assert load_config(None) == PipelineConfig()
    demo = preset("demo")
    assert demo.scenario.days == 10 and demo.scenario.signal_fraction == 0.8
    assert len(dsmod.SplitPlan().entries) == 7
    with pytest.raises(KeyError):
        preset("nope")

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from car import arrayio, cli, training
from car import synthdata as sd
from car import config as cfgmod

REG_CFG = """
task = bimodal_regression
seed = 0
out = {out}
gen.n = 256
train.pretrain_iters = 60
train.adv_iters = 24
train.batch_size = 8
eval.m = 10
"""

SEG_CFG = """
task = boundary_seg
seed = 0
out = {out}
gen.n = 160
train.pretrain_iters = 80
train.adv_iters = 12
train.batch_size = 8
train.d_on = 2
train.d_off = 2
eval.n_inputs = 2
eval.n_labels = 4
"""


def _write_cfg(tmp_path, template, name="run.cfg"):
    path = tmp_path / name
    path.write_text(template.format(out=tmp_path / "runs"))
    return path


def test_gradcheck_report(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert cli.main(["gradcheck", "--json", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["max_rel_error"] < 1e-4
    assert "PASS" in capsys.readouterr().err


def test_gradcheck_negative_control(tmp_path):
    out = tmp_path / "report.json"
    assert cli.main(["gradcheck", "--inject-broken", "--json", str(out)]) == 1
    assert not json.loads(out.read_text())["passed"]


def test_generate_outputs_and_idempotence(tmp_path):
    cfg = _write_cfg(tmp_path, SEG_CFG)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["generate", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert cli.main(["generate", "--config", str(cfg), "--out", str(out_b)]) == 0
    names = {n for n, _, _ in arrayio.read_manifest(out_a / "manifest.txt")}
    assert names == {"features", "targets", "labels", "marginal"}
    for f in ("features.card", "targets.card", "labels.card", "marginal.card"):
        assert (out_a / f).read_bytes() == (out_b / f).read_bytes()


def test_generated_marginal_is_analytic(tmp_path):
    cfg_path = tmp_path / "fc.cfg"
    cfg_path.write_text(f"task = flipclass_seg\nout = {tmp_path}\ngen.n = 64\n")
    out = tmp_path / "data"
    assert cli.main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
    written = arrayio.load_array(out / "marginal.card")
    cfg = cfgmod.load_config(cfg_path)
    analytic = sd.ground_truth_pixel_distribution(cfg.build().gen)
    assert np.array_equal(written, analytic)


@pytest.fixture(scope="module")
def reg_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("reg")
    cfg = _write_cfg(tmp_path, REG_CFG)
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return tmp_path, tmp_path / "runs" / "bimodal_regression-s0", cfg


def test_train_run_directory_layout(reg_run):
    _, run, _ = reg_run
    assert (run / "config.snapshot").exists()
    assert (run / "manifest.json").exists()
    assert (run / "checkpoints" / "pretrain.carc").exists()
    assert (run / "checkpoints" / "final.carc").exists()
    assert (run / "logs" / "metrics.jsonl").exists()
    rows = [json.loads(l) for l in
            (run / "logs" / "metrics.jsonl").read_text().splitlines()]
    assert rows, "metric log must not be empty"
    adv = [r for r in rows if "loss_adv" in r]
    for field in ("iter", "loss_adv", "loss_cal", "loss_d", "lr_g", "lr_d",
                  "wall_ms"):
        assert field in adv[-1]
    manifest = cfgmod.RunManifest.load(run / "manifest.json")
    assert manifest.finished
    assert any("final.carc" in a for a in manifest.artifacts)
    snap = cfgmod.parse_config((run / "config.snapshot").read_text())
    assert manifest.config_hash == cfgmod.config_hash(snap)


def test_train_rerun_identical_checkpoint(reg_run, tmp_path):
    base, run, _ = reg_run
    cfg2 = tmp_path / "again.cfg"
    cfg2.write_text(REG_CFG.format(out=tmp_path / "runs"))
    assert cli.main(["train", "--config", str(cfg2)]) == 0
    other = tmp_path / "runs" / "bimodal_regression-s0"
    a = (run / "checkpoints" / "final.carc").read_bytes()
    b = (other / "checkpoints" / "final.carc").read_bytes()
    assert a == b
    assert (run / "logs" / "metrics.jsonl").read_text() != ""  # wall_ms differs, bytes may not match


def test_eval_regression_outputs(reg_run):
    _, run, _ = reg_run
    before = (run / "checkpoints" / "final.carc").read_bytes()
    assert cli.main(["eval", "--run", str(run)]) == 0
    metrics = json.loads((run / "eval" / "metrics.json").read_text())
    assert "loglik_median" in metrics and "flat_dominant_freq" in metrics
    scatter = (run / "eval" / "scatter.csv").read_text().splitlines()
    assert scatter[0] == "kind,x,y"
    kinds = {line.split(",")[0] for line in scatter[1:]}
    assert kinds == {"truth", "sample", "sample_mean", "calibration"}
    # read-only contract
    assert (run / "checkpoints" / "final.carc").read_bytes() == before


def test_eval_rejects_zero_samples(reg_run):
    _, run, _ = reg_run
    assert cli.main(["eval", "--run", str(run), "--samples", "0"]) == 1


def test_eval_oracle_rejected_for_regression(reg_run):
    _, run, _ = reg_run
    assert cli.main(["eval", "--run", str(run), "--oracle"]) == 1


def test_plot_regression(reg_run):
    _, run, _ = reg_run
    assert cli.main(["plot", "--run", str(run)]) == 0
    for name in ("losses.svg", "scatter.svg"):
        root = ET.parse(run / "plots" / name).getroot()
        assert root.tag.endswith("svg")
    # scatter samples in the figure match the csv rows
    scatter_rows = [l for l in (run / "eval" / "scatter.csv").read_text().splitlines()
                    if l.startswith("sample,")]
    root = ET.parse(run / "plots" / "scatter.svg").getroot()
    descs = {e.get("data-series"): e.text for e in root.iter()
             if e.tag.endswith("desc")}
    assert len(descs["sample"].splitlines()) - 1 == len(scatter_rows)


def test_corrupt_checkpoint_is_runtime_failure(reg_run):
    _, run, _ = reg_run
    final = run / "checkpoints" / "final.carc"
    backup = final.read_bytes()
    try:
        final.write_bytes(backup[:100])
        assert cli.main(["eval", "--run", str(run)]) == 2
    finally:
        final.write_bytes(backup)


@pytest.fixture(scope="module")
def seg_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("seg")
    cfg = _write_cfg(tmp_path, SEG_CFG)
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return tmp_path, tmp_path / "runs" / "boundary_seg-s0", cfg


def test_eval_and_plot_segmentation(seg_run):
    _, run, _ = seg_run
    assert cli.main(["eval", "--run", str(run), "--samples", "4", "8"]) == 0
    metrics = json.loads((run / "eval" / "metrics.json").read_text())
    assert set(metrics["ged"]) == {"4", "8"}
    assert "ece" in metrics and "g_offsets" in metrics
    reliability = (run / "eval" / "reliability.csv").read_text().splitlines()
    assert reliability[0] == "bin_low,bin_high,count,mean_conf,accuracy"
    assert cli.main(["plot", "--run", str(run)]) == 0
    for name in ("losses.svg", "reliability.svg", "entropy.svg"):
        ET.parse(run / "plots" / name)


def test_eval_oracle_segmentation(seg_run):
    _, run, _ = seg_run
    assert cli.main(["eval", "--run", str(run), "--oracle", "--samples", "8"]) == 0
    oracle = json.loads((run / "eval" / "oracle.json").read_text())
    assert "8" in oracle["ged"]


def test_train_with_generated_dataset(seg_run, tmp_path):
    base, _, cfg = seg_run
    data = tmp_path / "data"
    assert cli.main(["generate", "--config", str(cfg), "--out", str(data)]) == 0
    cfg2 = tmp_path / "d.cfg"
    cfg2.write_text(SEG_CFG.format(out=tmp_path / "runs"))
    assert cli.main(["train", "--config", str(cfg2), "--data", str(data)]) == 0
    assert (tmp_path / "runs" / "boundary_seg-s0" / "checkpoints" / "final.carc").exists()


def test_train_missing_dataset_is_actionable(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, REG_CFG)
    assert cli.main(["train", "--config", str(cfg), "--data",
                     str(tmp_path / "nowhere")]) == 1
    err = capsys.readouterr().err
    assert "car generate" in err


def test_car_seed_env_override(tmp_path, monkeypatch):
    cfg = _write_cfg(tmp_path, REG_CFG)
    monkeypatch.setenv("CAR_SEED", "5")
    assert cli.main(["train", "--config", str(cfg)]) == 0
    assert (tmp_path / "runs" / "bimodal_regression-s5").is_dir()
    monkeypatch.setenv("CAR_SEED", "not-a-number")
    assert cli.main(["train", "--config", str(cfg)]) == 1


def test_repeat_runs_consecutive_seeds(tmp_path):
    cfg = _write_cfg(tmp_path, REG_CFG)
    assert cli.main(["train", "--config", str(cfg), "--repeat", "2"]) == 0
    assert (tmp_path / "runs" / "bimodal_regression-s0").is_dir()
    assert (tmp_path / "runs" / "bimodal_regression-s1").is_dir()


def test_plot_empty_log_warns_but_succeeds(tmp_path, capsys):
    run = tmp_path / "empty"
    (run / "logs").mkdir(parents=True)
    (run / "logs" / "metrics.jsonl").write_text("")
    assert cli.main(["plot", "--run", str(run)]) == 0
    assert "empty" in capsys.readouterr().err
    ET.parse(run / "plots" / "losses.svg")


def test_plot_missing_log_fails(tmp_path):
    assert cli.main(["plot", "--run", str(tmp_path / "void")]) == 1

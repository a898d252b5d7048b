import numpy as np
import pytest

from car import experiments, nn, training
from car import synthdata as sd


def tiny_regression(seed=0, lambda_cal=1.0, adv_iters=40, pretrain_iters=300):
    return experiments.build_regression(
        pi=0.5, sigma=0.02, n=2000, seed=seed, lambda_cal=lambda_cal,
        m_samples=4, hidden=24, pretrain_iters=pretrain_iters,
        adv_iters=adv_iters, batch_size=16)


def tiny_flipclass(seed=0, adv_iters=30):
    return experiments.build_flipclass(
        seed=seed, n=512, hidden=32, m_samples=3, pretrain_iters=60,
        adv_iters=adv_iters, batch_size=8, d_on=2, d_off=3)


def test_d_update_active_cycle():
    for it in range(50):
        assert training.d_update_active(it, 50, 200)
    assert not training.d_update_active(50, 50, 200)
    assert not training.d_update_active(249, 50, 200)
    assert training.d_update_active(250, 50, 200)
    # alternating
    assert [training.d_update_active(i, 1, 1) for i in range(4)] == [
        True, False, True, False]
    with pytest.raises(ValueError):
        training.d_update_active(0, 0, 5)


def test_holdout_split():
    train, hold = training.holdout_split(100, 0.1)
    assert len(train) == 90 and len(hold) == 10
    assert train[-1] == 89 and hold[0] == 90
    t2, h2 = training.holdout_split(100, 0.1)
    assert np.array_equal(train, t2) and np.array_equal(hold, h2)


def test_pretrain_zero_iterations_keeps_init():
    exp = tiny_regression()
    exp.train.pretrain_iters = 0
    features, targets, _ = exp.generate()
    params, log = training.pretrain_calibration((features, targets),
                                                exp.f_spec, exp.train)
    init = nn.mlp_new(exp.f_spec, exp.train.seed)
    for k in init:
        assert np.array_equal(params[k], init[k])
    assert log == []


def test_pretrain_regression_learns_conditional_mean():
    # biased task: the zero-ish init is wrong, so training must improve it
    exp = experiments.build_regression(pi=0.9, sigma=0.02, n=2000, seed=0,
                                       hidden=24, pretrain_iters=1500,
                                       batch_size=16)
    features, targets, _ = exp.generate()
    data = (features, targets)
    before = training.holdout_loss(
        data, exp.f_spec, nn.mlp_new(exp.f_spec, exp.train.seed), exp.train)
    params, _ = training.pretrain_calibration(data, exp.f_spec, exp.train)
    after = training.holdout_loss(data, exp.f_spec, params, exp.train)
    assert after < before
    probes = np.linspace(0.05, 0.95, 30)
    preds = nn.mlp_apply(params, exp.f_spec, probes[:, None])[:, 0]
    want = sd.bimodal_conditional_mean(exp.gen, probes)
    assert np.abs(preds - want).mean() < 0.06


def test_pretrain_symmetric_modes_cancel():
    # pi=0.5: conditional mean on the sloped branch is identically 0
    exp = tiny_regression(pretrain_iters=1200)
    features, targets, _ = exp.generate()
    params, _ = training.pretrain_calibration((features, targets), exp.f_spec,
                                              exp.train)
    probes = np.linspace(0.45, 0.75, 20)[:, None]
    preds = nn.mlp_apply(params, exp.f_spec, probes)
    assert np.abs(preds).mean() < 0.05


def test_pretrain_diverged_reports_iteration():
    exp = tiny_regression()
    features, targets, _ = exp.generate()
    record = training.RunRecord()
    record.f_params = nn.mlp_new(exp.f_spec, 0)
    record.f_params["w0"][:] = np.nan
    record.f_adam = nn.adam_new(record.f_params)
    with pytest.raises(training.TrainingDiverged, match="iteration 0"):
        training.pretrain_calibration((features, targets), exp.f_spec,
                                      exp.train, record=record)


def test_refinement_freezes_f_and_respects_schedule():
    exp = tiny_flipclass()
    features, targets, _ = exp.generate()
    data = (features, targets)
    f_params, _ = training.pretrain_calibration(data, exp.f_spec, exp.train)
    f_before = {k: v.copy() for k, v in f_params.items()}

    d_snapshots = {}
    record = training.RunRecord(f_params=f_params)
    calib = training.make_calibration(f_params, exp.f_spec)

    # run iteration by iteration to snapshot D params around the schedule
    cfg = exp.train
    step_cfg = experiments.build_flipclass(seed=0, n=512, hidden=32, m_samples=3,
                                           pretrain_iters=60, adv_iters=1,
                                           batch_size=8, d_on=2, d_off=3).train
    for it in range(10):
        before = {k: v.copy() for k, v in record.d_params.items()} \
            if record.d_params else None
        record = training.train_refinement(data, calib, exp.g_spec, exp.d_spec,
                                           step_cfg, record=record)
        if before is not None:
            changed = any(not np.array_equal(before[k], record.d_params[k])
                          for k in before)
            d_snapshots[it] = changed
    # iterations 1..9 judged against the 2-on/3-off cycle
    for it, changed in d_snapshots.items():
        assert changed == training.d_update_active(it, cfg.d_on, cfg.d_off)

    for k in f_before:  # stage-1 parameters bit-identical
        assert np.array_equal(f_before[k], record.f_params[k] if record.f_params
                              else f_params[k])
    assert np.array_equal(f_before["w0"], f_params["w0"])


def test_refinement_deterministic_and_logged():
    def run():
        exp = tiny_regression(adv_iters=25)
        features, targets, _ = exp.generate()
        data = (features, targets)
        f_params, _ = training.pretrain_calibration(data, exp.f_spec, exp.train)
        record = training.RunRecord(f_params=f_params)
        record = training.train_refinement(
            data, (f_params, exp.f_spec), exp.g_spec, exp.d_spec, exp.train,
            record=record)
        return record

    a, b = run(), run()
    for k in a.g_params:
        assert np.array_equal(a.g_params[k], b.g_params[k])
    for k in a.d_params:
        assert np.array_equal(a.d_params[k], b.d_params[k])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"}
                          for r in rows]
    assert strip(a.log) == strip(b.log)
    assert a.log[-1]["iter"] == 24
    for key in ("loss_adv", "loss_cal", "loss_g", "loss_d", "lr_g", "lr_d",
                "wall_ms"):
        assert key in a.log[-1]


def test_infer_samples_contract():
    exp = tiny_regression(adv_iters=5)
    features, targets, _ = exp.generate()
    data = (features, targets)
    f_params, _ = training.pretrain_calibration(data, exp.f_spec, exp.train)
    record = training.train_refinement(data, (f_params, exp.f_spec), exp.g_spec,
                                       exp.d_spec, exp.train,
                                       record=training.RunRecord(f_params=f_params))
    x = features[:7]
    s1 = training.infer_samples((f_params, exp.f_spec), record.g_params,
                                exp.g_spec, x, 6, seed=3, noise_dim=1)
    s2 = training.infer_samples((f_params, exp.f_spec), record.g_params,
                                exp.g_spec, x, 6, seed=3, noise_dim=1)
    assert np.array_equal(s1, s2)
    assert s1.shape == (7, 6, 1)
    s3 = training.infer_samples((f_params, exp.f_spec), record.g_params,
                                exp.g_spec, x, 6, seed=4, noise_dim=1)
    assert not np.allclose(s1, s3)
    empty = training.infer_samples((f_params, exp.f_spec), record.g_params,
                                   exp.g_spec, x, 0, seed=3, noise_dim=1)
    assert empty.shape == (7, 0, 1)


def test_checkpoint_roundtrip(tmp_path):
    exp = tiny_regression(adv_iters=8)
    features, targets, _ = exp.generate()
    data = (features, targets)
    f_params, _ = training.pretrain_calibration(data, exp.f_spec, exp.train)
    record = training.train_refinement(data, (f_params, exp.f_spec), exp.g_spec,
                                       exp.d_spec, exp.train,
                                       record=training.RunRecord(f_params=f_params))
    path = tmp_path / "ckpt.carc"
    training.checkpoint_save(record, path)
    back = training.checkpoint_load(path)
    for group in ("f_params", "g_params", "d_params"):
        a, b = getattr(record, group), getattr(back, group)
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k], b[k])
    assert back.g_adam.t == record.g_adam.t
    assert back.g_adam.beta1 == record.g_adam.beta1
    for k in record.g_adam.m:
        assert np.array_equal(back.g_adam.m[k], record.g_adam.m[k])
        assert np.array_equal(back.g_adam.v[k], record.g_adam.v[k])
    assert back.adv_iter == record.adv_iter
    assert back.pretrain_iter == record.pretrain_iter
    # wall clock is deliberately not persisted (keeps checkpoints of
    # identical runs bit-identical); everything else must survive
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"}
                          for r in rows]
    assert back.log == strip(record.log)
    # identical records serialize to identical bytes
    path2 = tmp_path / "ckpt2.carc"
    training.checkpoint_save(back, path2)
    assert training.checkpoint_hash(path) == training.checkpoint_hash(path2)


def test_checkpoint_corruption_detected(tmp_path):
    record = training.RunRecord(f_params={"w0": np.ones((2, 2))})
    path = tmp_path / "c.carc"
    training.checkpoint_save(record, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(Exception, match="checksum|truncated|payload"):
        training.checkpoint_load(path)
    bad_version = raw[:4] + (99).to_bytes(4, "little") + raw[8:]
    path.write_bytes(bad_version)
    with pytest.raises(Exception, match="version"):
        training.checkpoint_load(path)


def test_resumed_run_continues_counters(tmp_path):
    exp = tiny_regression(adv_iters=6)
    features, targets, _ = exp.generate()
    data = (features, targets)
    f_params, _ = training.pretrain_calibration(data, exp.f_spec, exp.train)
    record = training.train_refinement(data, (f_params, exp.f_spec), exp.g_spec,
                                       exp.d_spec, exp.train,
                                       record=training.RunRecord(f_params=f_params))
    path = tmp_path / "resume.carc"
    training.checkpoint_save(record, path)
    resumed = training.checkpoint_load(path)
    assert resumed.adv_iter == 6
    exp.train.adv_iters = 4
    resumed = training.train_refinement(data, (f_params, exp.f_spec), exp.g_spec,
                                        exp.d_spec, exp.train, record=resumed)
    iters = [row["iter"] for row in resumed.log if "loss_g" in row]
    assert iters[0] == 0 and resumed.adv_iter == 10
    assert any(it >= 6 for it in iters)


def test_oracle_calibration_constant():
    marg = sd.ground_truth_pixel_distribution(sd.FlipClassConfig())
    calib = training.constant_calibration(marg.reshape(-1))
    out = calib(np.zeros((5, 3)))
    assert out.shape == (5, marg.size)
    assert np.array_equal(out[0], out[4])

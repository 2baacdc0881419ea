import math
import os

import numpy as np
import pytest

from conftest import TINY_DOWN, TINY_UP
from scatterhsd import trainer as tr
from scatterhsd.corpus import COMPOSITE_CLASSES
from scatterhsd.downstream import part_ious
from scatterhsd.errors import InvalidInput, NumericsError
from scatterhsd.geometry import chamfer
from scatterhsd.trainer import (AblationRun, EvalReport, TrainConfig, ablation_rows, accuracy,
                                evaluate, evaluate_checkpoint, load_model, random_labeler_miou,
                                suite_configs, train_model, train_two_stage)

FAST = TrainConfig(epochs=2, batch_size=8)


def state_bytes(model):
    return b"".join(v.tobytes() for v in model.state_dict().values())


def test_train_config_validation():
    with pytest.raises(InvalidInput):
        TrainConfig(gamma=1.5)
    with pytest.raises(InvalidInput):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidInput):
        TrainConfig(schedule="linear")
    c = TrainConfig()
    assert (c.alpha, c.beta, c.gamma) == (1.0, 0.001, 0.8)
    assert c.lr_init == 0.001 and c.views == 8


def test_schedules():
    c = TrainConfig(epochs=200)
    assert [c.lr(e) for e in (0, 49, 50, 120)] == [0.001, 0.001, 0.001 * 0.8, 0.001 * 0.8 ** 2]
    cos = TrainConfig(epochs=100, schedule="cosine")
    assert cos.lr(0) == pytest.approx(0.001)
    assert cos.lr(100) == pytest.approx(0.001 * 0.005)


def test_prepared_shapes(tiny_data):
    d = tiny_data
    assert d.train_x.shape == (32, 2, 64, 3)
    assert d.train_gt.shape == (32, 32, 3)
    assert d.test_x.shape == (8, 64, 3)
    assert d.classes == 8


def test_training_logs_and_identity(tiny_data, tmp_path):
    res = train_model(tiny_data, TINY_UP, TINY_DOWN, FAST, str(tmp_path))
    assert len(res.steps) == 2 * 4
    assert res.max_identity_residual <= 1e-12
    assert set(os.listdir(tmp_path)) >= {"steps.csv", "epochs.csv", "levels.csv", "model.ckpt"}
    header = (tmp_path / "steps.csv").read_text().splitlines()[0]
    assert header == "step,epoch,rec,ce1,ce2,ce3,kl1,kl2,total,lr"
    assert len(res.traces) == 2 * 3
    for t in res.traces:
        assert 0 <= t.i_yz <= math.log(8) + 1e-12


def test_determinism_and_roundtrip(tiny_data, tmp_path):
    a = train_model(tiny_data, TINY_UP, TINY_DOWN, FAST, str(tmp_path))
    b = train_model(tiny_data, TINY_UP, TINY_DOWN, FAST)
    assert a.checkpoint_hash == b.checkpoint_hash
    c = train_model(tiny_data, TINY_UP, TINY_DOWN, TrainConfig(epochs=2, batch_size=8, seed=1))
    assert c.checkpoint_hash != a.checkpoint_hash
    rep = evaluate(a.model, tiny_data)
    again = evaluate_checkpoint(a.checkpoint_path, tiny_data)
    assert rep == again


def test_gamma_one_equals_explicit_dsn(tiny_data):
    g1 = train_model(tiny_data, TINY_UP, TINY_DOWN, TrainConfig(epochs=2, batch_size=8, gamma=1.0))
    dsn = train_model(tiny_data, TINY_UP, TINY_DOWN,
                      TrainConfig(epochs=2, batch_size=8, gamma=1.0, objective="dsn"))
    assert g1.steps == dsn.steps
    assert state_bytes(g1.model) == state_bytes(dsn.model)


def test_beta_zero_gives_downstream_no_gradient(tiny_data):
    from scatterhsd import autodiff as ad
    model = tr.JointModel(TINY_UP, TINY_DOWN, 0)
    cfg = TrainConfig(beta=0.0)
    with ad.Tape() as tape:
        lb = tr._forward_loss(model, cfg, tiny_data.train_x[:4, 0], tiny_data.train_gt[:4],
                              tiny_data.train_y[:4], tiny_data.train_parts[:4])
        tape.backward(lb.tensor)
    assert lb.total == lb.rec
    for name, p in model.down.named_parameters():
        assert p.grad is None or not p.grad.any(), name
    assert any(p.grad.any() for p in model.up.parameters())


def test_numerics_failure_keeps_last_good(tiny_data, tmp_path, monkeypatch):
    calls = {"n": 0}
    real = tr._forward_loss

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NumericsError("injected")
        return real(*a, **k)

    monkeypatch.setattr(tr, "_forward_loss", flaky)
    with pytest.raises(NumericsError):
        train_model(tiny_data, TINY_UP, TINY_DOWN, FAST, str(tmp_path))
    monkeypatch.setattr(tr, "_forward_loss", real)
    saved, _ = load_model(tmp_path / "last_good.ckpt")
    # two completed steps; compare against a run stopped after two steps
    assert state_bytes(saved) == state_bytes(_run_steps(tiny_data, 2))


def _run_steps(data, n):
    calls = {"n": 0}
    real = tr._forward_loss

    def stop(*a, **k):
        calls["n"] += 1
        if calls["n"] > n:
            raise NumericsError("stop")
        return real(*a, **k)

    model = tr.JointModel(TINY_UP, TINY_DOWN, 0)
    tr._forward_loss = stop
    try:
        train_model(data, TINY_UP, TINY_DOWN, FAST, model=model)
    except NumericsError:
        pass
    finally:
        tr._forward_loss = real
    return model


def test_accuracy_metrics():
    y = np.array([0, 0, 1, 2, 2, 2])
    assert accuracy(y, y, 3) == (1.0, 1.0)
    oa, macc = accuracy(np.array([0, 1, 1, 2, 0, 0]), y, 3)
    assert oa == pytest.approx(3 / 6)
    assert macc == pytest.approx((0.5 + 1 + 1 / 3) / 3)
    with pytest.warns(UserWarning):
        accuracy(y, y, 4)


def test_random_predictor_binomial():
    rng = np.random.default_rng(0)
    n = 4000
    y = rng.integers(0, 8, n)
    oa, _ = accuracy(rng.integers(0, 8, n), y, 8)
    assert abs(oa - 0.125) < 3 * math.sqrt(0.125 * 0.875 / n)


def test_cd_zero_for_exact_reconstruction(tiny_data):
    g = tiny_data.test_gt[0]
    assert chamfer(g, g) * 1000 == 0.0


def test_random_labeler_expectation():
    rng = np.random.default_rng(0)
    labels = (rng.random((20, 400)) < 0.3).astype(int)
    expected = random_labeler_miou(labels, 2)
    sim = np.mean([np.mean([part_ious(rng.integers(0, 2, 400), lab, 2).mean() for lab in labels])
                   for _ in range(20)])
    assert abs(sim - expected) < 0.01
    assert expected < 0.5


def test_perfect_segmentation_is_one():
    truth = np.array([0, 0, 1, 1, 1])
    assert part_ious(truth, truth, 2).mean() == 1.0


def test_segment_mode_trains_and_scores(tiny_data):
    data = tiny_data.subset_classes(COMPOSITE_CLASSES)
    res = train_model(data, TINY_UP, TINY_DOWN, TrainConfig(epochs=2, batch_size=4,
                                                            mode="segment"))
    rep = evaluate(res.model, data)
    assert 0 <= rep.miou <= 1 and 0 <= rep.ciou <= 1
    assert res.max_identity_residual <= 1e-12


def test_two_stage_runs(tiny_data):
    res = train_two_stage(tiny_data, TINY_UP, TINY_DOWN, FAST)
    rep = evaluate(res.model, tiny_data)
    assert 0 <= rep.oa <= 1 and rep.cd_x1000 > 0


def test_suite_configs():
    down = TINY_DOWN
    _, dsn = suite_configs("dsn", down, FAST)
    _, full = suite_configs("full_hsd", down, FAST)
    assert dsn.gamma == 1.0 and full.gamma == 0.8
    assert {k: v for k, v in vars(dsn).items() if k != "gamma"} == \
        {k: v for k, v in vars(full).items() if k != "gamma"}
    scl, _ = suite_configs("scl", down, FAST)
    assert scl.level_widths[-1] == scl.level_widths[-2]
    _, base = suite_configs("baseline", down, FAST)
    assert base.supervision == "teacher"
    with pytest.raises(InvalidInput):
        suite_configs("nope", down, FAST)


def test_ablation_table_layout():
    runs = []
    for suite in ("baseline", "dsn", "scl", "full_hsd"):
        for seed in range(3):
            rep = EvalReport(0.5, 0.5, 10.0, [(0.3, 0.3), (0.4, 0.4), (0.5, 0.5)])
            runs.append(AblationRun(suite, seed, rep, None))
    rows = ablation_rows(runs)
    assert [r["suite"] for r in rows] == ["baseline", "dsn", "scl", "full_hsd"]
    for r in rows:
        assert {"L1", "L2", "L3", "CDx1000"} <= set(r)
    assert rows[0]["L1"] == "-" and rows[0]["L2"] == "-"
    assert rows[1]["L1"] == "30.0/30.0"

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeclab.datagen import GenConfig, load_example, make_corpus
from aeclab.losses import esw_weights, mask_mse, sdw_weights, weighted_mask_loss
from aeclab.nn import AecModel, ModelConfig
from aeclab.training import (AdamState, PlateauScheduler, TrainConfig, adam_update, batch_from_examples,
                             clip_global_norm, evaluate_loss, finetune_step, group_data, plateau_schedule,
                             pretrain_step, run_training)
from aeclab.contrastive import build_group

GEN = GenConfig(n_train=4, n_val=2, n_test=0, segment_seconds=0.5, source_seconds=1.0,
                n_near_sources=6, n_far_sources=6, n_music_sources=2, n_noise_sources=2)
SMALL = ModelConfig(conv_filters=8, gru_units=8, score_dim=4, seed=0)


@pytest.fixture(scope="module")
def rows():
    return make_corpus(GEN, 17)


@pytest.fixture(scope="module")
def batch(rows):
    return batch_from_examples([load_example(r) for r in rows if r["split"] == "train"])


# -- Adam ---------------------------------------------------------------------------

def _adam_scalar(grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    theta, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(theta)
    return out


def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.zeros(3)}
    adam_update(p, {"w": np.array([1.0, -4.0, 1e-3])}, AdamState(), lr=0.1)
    np.testing.assert_allclose(p["w"], [-0.1, 0.1, -0.1], rtol=1e-4)


def test_adam_matches_scalar_trace():
    grads = [1.0, -2.0, 0.5, 0.0, 3.0]
    p = {"w": np.zeros(1)}
    st_ = AdamState()
    got = []
    for g in grads:
        adam_update(p, {"w": np.array([g])}, st_, lr=0.01)
        got.append(float(p["w"][0]))
    np.testing.assert_allclose(got, _adam_scalar(grads, 0.01), rtol=1e-12, atol=1e-15)
    assert st_.step == 5


def test_adam_zero_gradient_is_identity():
    w = np.array([0.3, -1.2])
    p = {"w": w.copy()}
    adam_update(p, {"w": np.zeros(2)}, AdamState(), lr=1.0)
    np.testing.assert_array_equal(p["w"], w)


def test_adam_rejects_non_finite():
    p = {"w": np.zeros(2)}
    st_ = AdamState()
    with pytest.raises(FloatingPointError):
        adam_update(p, {"w": np.array([np.nan, 0.0])}, st_, 0.1)
    assert st_.step == 0 and not np.any(p["w"])


# -- clipping and schedule ------------------------------------------------------------

def test_clip_global_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    assert clip_global_norm(g, 10.0) == pytest.approx(5.0)
    np.testing.assert_array_equal(g["a"], [3.0, 0.0])
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(g["a"], [0.6, 0.0], rtol=1e-10)
    np.testing.assert_allclose(g["b"], [[0.8]], rtol=1e-10)


def test_plateau_flat_six_epochs():
    cfg = TrainConfig(stage="pretrain")
    assert plateau_schedule([1.0] * 5, cfg) == 1e-3
    assert plateau_schedule([1.0] * 6, cfg) == pytest.approx(1e-4)
    assert plateau_schedule([1.0] * 11, cfg) == pytest.approx(1e-5)


def test_plateau_clamps_at_floor():
    assert plateau_schedule([1.0] * 200, TrainConfig()) == 1e-10


def test_plateau_tiny_improvement_counts_as_flat():
    hist = [1.0] + [1.0 - 1e-7 * k for k in range(1, 6)]
    assert plateau_schedule(hist, TrainConfig()) == pytest.approx(1e-4)


def test_plateau_finetune_start():
    assert plateau_schedule([0.5], TrainConfig(stage="finetune")) == 1e-5


def test_plateau_empty_history():
    with pytest.raises(ValueError):
        plateau_schedule([], TrainConfig())


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=40))
def test_plateau_lr_is_monotone_and_bounded(hist):
    s = PlateauScheduler(1e-3)
    prev = 1e-3
    for h in hist:
        lr = s.step(h)
        assert 1e-10 <= lr <= prev
        prev = lr


def test_strictly_improving_never_decays():
    assert plateau_schedule([1.0 / k for k in range(1, 30)], TrainConfig()) == 1e-3


@pytest.mark.parametrize("kw", [dict(stage="warmup"), dict(lr_init=1e-12), dict(patience=0),
                                dict(factor=1.0), dict(alpha=-1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_train_config_stage_defaults():
    p, f = TrainConfig(stage="pretrain"), TrainConfig(stage="finetune")
    assert (p.lr_init, p.alpha, f.lr_init, f.alpha) == (1e-3, 1.0, 1e-5, 0.0)
    assert f.lambda_err == 0.1 and f.error_mode == "product" and f.grad_clip == 5.0
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 1.0})


# -- steps ---------------------------------------------------------------------------

def test_pretrain_alpha_zero_equals_mask_mse(batch):
    m = AecModel(SMALL)
    lb = pretrain_step(m, batch, {}, AdamState(), 1e-3, TrainConfig(alpha=0.0), update=False)
    mask, _, _, _ = m.forward(batch.Y, batch.X)
    assert lb.mask_mse == pytest.approx(mask_mse(batch.M, mask), rel=1e-6)
    assert lb.total == lb.mask_mse and lb.contrastive == 0.0


def test_pretrain_total_readds(rows, batch):
    m = AecModel(SMALL)
    g = group_data(build_group(rows, batch.ids[0], 1, 4, 0, GEN))
    cfg = TrainConfig(alpha=0.5)
    lb = pretrain_step(m, batch, {0: g}, AdamState(), 1e-3, cfg, update=False)
    assert lb.total == pytest.approx(lb.mask_mse + 0.5 * lb.contrastive, rel=1e-12)
    assert lb.contrastive == pytest.approx(math.log(5), abs=1e-5)


def test_finetune_total_readds(batch):
    m = AecModel(SMALL)
    lb = finetune_step(m, batch, AdamState(), 1e-5, TrainConfig(stage="finetune"), update=False)
    mask, _, _, _ = m.forward(batch.Y, batch.X)
    # product mode: one loss under the combined weight, sdw/esw terms are diagnostics
    w = sdw_weights(batch.M, 2.0, 10.0) * esw_weights(batch.M, -1.0, 10.0)
    assert lb.total == pytest.approx(weighted_mask_loss(batch.M, mask, w) + 0.1 * lb.error_loss, rel=1e-10)
    assert lb.contrastive == 0.0 and lb.alpha == 0.0


def _fixed_batch_descent(m, batch, step, cfg, n=50):
    opt = AdamState()
    first = step(m, batch, opt, cfg.lr_init, cfg).total
    for _ in range(n - 1):
        last = step(m, batch, opt, cfg.lr_init, cfg, update=True).total
    return first, step(m, batch, opt, cfg.lr_init, cfg, update=False).total


def test_pretrain_descends(batch):
    m = AecModel(SMALL)
    cfg = TrainConfig(alpha=0.0)
    first, last = _fixed_batch_descent(m, batch, lambda *a, **k: pretrain_step(a[0], a[1], {}, *a[2:], **k), cfg)
    assert last < 0.9 * first


def test_finetune_descends_and_leaves_score_head(batch):
    m = AecModel(SMALL)
    r = np.random.default_rng(0)
    for name in ("fen_proj", "mon_proj"):
        for k, p in m.layers[name].params.items():
            m.set_param(f"{name}.{k}", r.normal(0, 0.05, p.shape).astype(p.dtype))
    score = {n: p.copy() for n, p in m.named_params() if n.startswith("score.")}
    cfg = TrainConfig(stage="finetune")
    first, last = _fixed_batch_descent(m, batch, finetune_step, cfg)
    assert last < first
    for n, p in m.named_params():
        if n.startswith("score."):
            np.testing.assert_array_equal(p, score[n])


# -- run_training -------------------------------------------------------------------

def _params(model):
    return {n: p.copy() for n, p in model.named_params()}


def test_run_training_logs_and_checkpoints(tmp_path, rows):
    cfg = TrainConfig(epochs=3, batch_size=2, contrastive_anchors=1)
    res = run_training(cfg, rows, model=AecModel(SMALL), out_dir=tmp_path, gen_cfg=GEN)
    assert len(res.epochs) == 3 and len(res.steps) == 6
    lines = (tmp_path / "metrics.log").read_text().splitlines()
    assert len(lines) == 6
    assert [l.split()[2] for l in lines] == ["kind=train", "kind=val"] * 3
    steps = (tmp_path / "steps.log").read_text().splitlines()
    assert len(steps) == 6 and all("mask_mse=" in s and "contrastive=" in s for s in steps)
    for f in ("best.aecl", "last.aecl", "last.state.npz"):
        assert (tmp_path / f).exists()
    assert res.best_val == min(e["val_loss"] for e in res.epochs)


def test_run_training_deterministic(rows):
    cfg = TrainConfig(epochs=2, batch_size=2, contrastive_anchors=1)
    a = run_training(cfg, rows, model=AecModel(SMALL), gen_cfg=GEN)
    b = run_training(cfg, rows, model=AecModel(SMALL), gen_cfg=GEN)
    for (n, p), (_, q) in zip(a.model.named_params(), b.model.named_params()):
        np.testing.assert_array_equal(p, q, err_msg=n)
    assert [s["total"] for s in a.steps] == [s["total"] for s in b.steps]


def test_resume_matches_uninterrupted(tmp_path, rows):
    cfg = TrainConfig(epochs=4, batch_size=2, contrastive_anchors=1)
    full = run_training(cfg, rows, model=AecModel(SMALL), out_dir=tmp_path / "full", gen_cfg=GEN)
    run_training(cfg, rows, model=AecModel(SMALL), out_dir=tmp_path / "cut", gen_cfg=GEN, stop_after_epoch=1)
    resumed = run_training(cfg, rows, out_dir=tmp_path / "cut", gen_cfg=GEN, resume=True)
    assert [e["epoch"] for e in resumed.epochs] == [0, 1, 2, 3]
    for (n, p), (_, q) in zip(full.model.named_params(), resumed.model.named_params()):
        np.testing.assert_array_equal(p, q, err_msg=n)
    assert (tmp_path / "cut" / "metrics.log").read_text() == (tmp_path / "full" / "metrics.log").read_text()
    assert (tmp_path / "cut" / "steps.log").read_text() == (tmp_path / "full" / "steps.log").read_text()


def test_max_steps_stops_early(rows):
    res = run_training(TrainConfig(epochs=50, max_steps=3, batch_size=2, alpha=0.0), rows, model=AecModel(SMALL))
    assert len(res.steps) == 3 and len(res.epochs) == 2


def test_run_training_errors(tmp_path, rows):
    with pytest.raises(ValueError, match="input model"):
        run_training(TrainConfig(stage="finetune"), rows)
    with pytest.raises(ValueError, match="no training rows"):
        run_training(TrainConfig(), [r for r in rows if r["split"] == "val"])
    mixed = [dict(r) for r in rows]
    mixed[1]["segment_len"] = 4000
    with pytest.raises(ValueError, match="segment lengths"):
        run_training(TrainConfig(), mixed)
    with pytest.raises(FileNotFoundError):
        run_training(TrainConfig(), rows, out_dir=tmp_path / "none", resume=True)


def test_evaluate_loss_matches_direct(batch):
    m = AecModel(SMALL)
    ev = evaluate_loss(m, [batch], TrainConfig())
    mask, _, _, _ = m.forward(batch.Y, batch.X)
    assert ev["loss"] == ev["mask_mse"] == pytest.approx(mask_mse(batch.M, mask), rel=1e-6)

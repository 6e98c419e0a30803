import pytest

from aeclab.config import ConfigError, load_config, parse_config
from aeclab.dsp import FrameConfig
from aeclab.nn import ModelConfig


def test_defaults():
    cfg = parse_config("")
    assert cfg.seed == 0 and cfg.frame == FrameConfig() and cfg.model == ModelConfig()
    assert cfg.eval.nlms_taps == 512 and cfg.eval.nlms_mu == 0.5
    t = cfg.train_config("finetune")
    assert t.lr_init == 1e-5 and t.alpha == 0.0


def test_full_config(tmp_path):
    text = """
[experiment]
seed = 42
[gen]
n_train = 10
test_snr_levels = [10, 20]
[model]
gru_units = 64
[train]
batch_size = 2
[pretrain]
lr_init = 0.002
[finetune]
lambda_err = 0.2
error_mode = "sum"
[eval]
workers = 3
"""
    p = tmp_path / "c.ini"
    p.write_text(text)
    cfg = load_config(p)
    assert cfg.seed == 42 and cfg.gen.n_train == 10 and cfg.gen.test_snr_levels == [10, 20]
    assert cfg.model.gru_units == 64 and cfg.eval.workers == 3
    pre, ft = cfg.train_config("pretrain"), cfg.train_config("finetune")
    assert pre.lr_init == 0.002 and pre.batch_size == 2 and pre.seed == 42
    assert ft.lr_init == 1e-5 and ft.lambda_err == 0.2 and ft.error_mode == "sum" and ft.batch_size == 2
    assert cfg.train_config("pretrain", epochs=3, max_steps=None).epochs == 3


@pytest.mark.parametrize("text,match", [
    ("[bogus]\na = 1", "unknown config sections"),
    ("[gen]\nn_trian = 3", "unknown keys"),
    ("[train]\nlearning_rate = 1", "unknown keys"),
    ("[experiment]\nseed = -1", "seed"),
    ("[experiment]\nseed = 1\nname = x", "unknown keys"),
    ("[gen]\ntest_snr_levels = 10", "JSON list"),
    ("[gen]\np_near_only = 0.9", "probabilities"),
    ("[pretrain]\nlr_init = 0", "lr_init"),
    ("[frame]\nhop = 0", "frame"),
    ("not ini at all", "unreadable"),
])
def test_rejects_bad_config(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_roundtrip_dict():
    d = parse_config("[experiment]\nseed = 5").to_dict()
    assert d["seed"] == 5 and d["frame"]["frame_len"] == 512 and d["eval"]["nlms_taps"] == 512

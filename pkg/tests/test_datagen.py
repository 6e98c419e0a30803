import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeclab.datagen import (GenConfig, active_power, load_example, make_corpus, mix_example, ratio_db,
                            read_manifest, render_example, scenario_counts, synth_echo_path, write_corpus)

SMALL = dict(n_near_sources=6, n_far_sources=6, n_music_sources=2, n_noise_sources=2)


@pytest.fixture(scope="module")
def small_rows():
    return make_corpus(GenConfig(n_train=6, n_val=2, n_test=4, **SMALL), 21)


def _signals(rng, n=8000):
    t = np.arange(n)
    s = np.sin(2 * np.pi * 220 * t / 16000) * (1 + 0.5 * np.sin(2 * np.pi * t / 4000))
    return s, rng.standard_normal(n), rng.standard_normal(n) * 0.3, rng.standard_normal(n)


# -- mixing ---------------------------------------------------------------------------

def test_mixture_signal_model_exact(small_rows):
    for row in small_rows:
        ex = render_example(row)
        assert ex.mic.dtype == np.float32 and ex.mic.size == 64000
        np.testing.assert_array_equal(ex.mic, ex.near_end + ex.echo + ex.noise)


def test_levels_hit_targets_after_normalisation(small_rows):
    for row in small_rows:
        ex = render_example(row)
        if row["scenario"] == "double_talk":
            assert abs(ratio_db(ex.near_end, ex.echo) - row["ser_db"]) <= 0.01
        if row["scenario"] != "far_only":
            assert abs(ratio_db(ex.near_end, ex.noise) - row["snr_db"]) <= 0.01
        peak = 20 * np.log10(np.max(np.abs(ex.mic.astype(np.float64))))
        assert abs(peak - row["level_dbfs"]) <= 0.01


def test_scenario_zeroing(small_rows):
    for row in small_rows:
        ex = render_example(row)
        if row["scenario"] == "near_only":
            assert not np.any(ex.echo) and not np.any(ex.far_end) and np.any(ex.near_end)
        elif row["scenario"] == "far_only":
            assert not np.any(ex.near_end) and np.any(ex.echo) and np.any(ex.far_end)
        else:
            assert np.any(ex.near_end) and np.any(ex.echo)


def test_mix_example_hand_values():
    s = np.array([1.0, -1.0] * 160)  # two 20 ms frames at power 1
    d = np.full(320, 3.0)  # power 9
    v = np.full(320, 0.5)  # power 0.25
    ex = mix_example(s, d, v, ser_db=10.0, snr_db=20.0, dtype=np.float64)
    np.testing.assert_allclose(ex.echo, np.full(320, np.sqrt(0.1)), rtol=1e-12)
    np.testing.assert_allclose(ex.noise, np.full(320, 0.1), rtol=1e-12)
    np.testing.assert_array_equal(ex.near_end, s)
    ex = mix_example(s, d, v, 0.0, 0.0, level_dbfs=-6.0, dtype=np.float64)
    assert np.max(np.abs(ex.mic)) == pytest.approx(10 ** (-6 / 20), rel=1e-12)


def test_mix_example_errors(rng):
    s, d, v, _ = _signals(rng)
    with pytest.raises(ValueError, match="scenario"):
        mix_example(s, d, v, 0, 0, scenario="both")
    with pytest.raises(ValueError, match="same length"):
        mix_example(s, d[:-1], v, 0, 0)
    with pytest.raises(ValueError, match="zero power"):
        mix_example(np.zeros_like(s), d, v, 0, 0)


@given(st.floats(-20, 20), st.floats(-10, 30), st.floats(0.01, 100))
def test_active_power_scales_with_gain(ser, snr, g):
    rng = np.random.default_rng(0)
    s, d, v, _ = _signals(rng)
    assert active_power(g * s) == pytest.approx(g * g * active_power(s), rel=1e-10)
    ex = mix_example(s, d, v, ser, snr, dtype=np.float64)
    assert ratio_db(ex.near_end, ex.echo) == pytest.approx(ser, abs=1e-9)
    assert ratio_db(ex.near_end, ex.noise) == pytest.approx(snr, abs=1e-9)


# -- echo path -------------------------------------------------------------------------

def test_echo_path_gain_ir_and_delay():
    x = np.zeros(1000)
    x[5] = 1.0
    e = synth_echo_path(x, [1.0, 0.5], -6.0, 10.0, 0.0, highpass_hz=None, band=None)
    g = 10 ** (-6 / 20)
    expect = np.zeros(1000)
    expect[165], expect[166] = g, 0.5 * g
    np.testing.assert_allclose(e, expect, atol=1e-12)


def test_echo_path_fractional_delay_and_filters():
    x = np.zeros(2000)
    x[100] = 1.0
    e = synth_echo_path(x, [1.0], 0.0, 2.5, 0.0, highpass_hz=None, band=None)
    assert int(np.argmax(np.abs(e))) == 140
    # the filters remove DC and the tilt keeps finite output
    dc = synth_echo_path(np.ones(16000), [1.0], 0.0, 0.0, 8 / 3)
    assert abs(np.mean(dc[8000:])) < 1e-3
    assert np.all(np.isfinite(dc))


# -- corpus ----------------------------------------------------------------------------

def test_row_parameter_ranges(small_rows):
    for r in small_rows:
        assert 0.0 <= r["delay_ms"] <= 100.0
        assert abs(r["tilt_slope"]) <= 8 / 3
        assert -25.0 <= r["level_dbfs"] <= 0.0
        if r["split"] == "test":
            assert r["ser_db"] in (0.0, 5.0, 10.0, 15.0)
            assert r["snr_db"] in (10.0, 15.0, 20.0, 25.0, 30.0)
    assert [r["split"] for r in small_rows] == ["train"] * 6 + ["val"] * 2 + ["test"] * 4


def test_scenario_rates_1000_rows():
    rows = make_corpus(GenConfig(n_train=1000, n_val=0, n_test=0, **SMALL), 5)
    counts = scenario_counts(rows)
    for scen in ("near_only", "far_only"):
        assert abs(counts[("train", scen)] / 1000 - 0.2) <= 0.03
    assert abs(counts[("train", "double_talk")] / 1000 - 0.6) <= 0.03
    sers = np.array([r["ser_db"] for r in rows])
    assert abs(sers.mean() + 10) < 1.5 and abs(sers.std() - 10) < 1.5
    gains = np.array([r["ir_gain_db"] for r in rows])
    assert abs(gains.mean() + 10) < 0.5 and abs(gains.std() - 3) < 0.5


def test_corpus_deterministic_and_seed_sensitive():
    g = GenConfig(n_train=5, n_val=1, n_test=2, **SMALL)
    assert make_corpus(g, 3) == make_corpus(g, 3)
    assert make_corpus(g, 3) != make_corpus(g, 4)


def test_write_corpus_byte_identical(tmp_path, small_rows):
    rows = small_rows[:3]
    a = write_corpus(rows, tmp_path / "a")
    write_corpus(rows, tmp_path / "b")
    for name in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    back = read_manifest(tmp_path / "a" / "manifest.jsonl")
    assert back == a
    ex = load_example(back[0], tmp_path / "a")
    ref = render_example(rows[0])
    np.testing.assert_array_equal(ex.mic, ref.mic)
    np.testing.assert_array_equal(ex.far_end, ref.far_end)


def test_render_from_row_regenerates():
    g = GenConfig(n_train=2, n_val=0, n_test=0, **SMALL)
    row = make_corpus(g, 9)[1]
    a, b = render_example(row), render_example(dict(row))
    for ch in ("mic", "near", "far", "echo", "noise"):
        np.testing.assert_array_equal(a.channel(ch), b.channel(ch))


def test_bad_manifest_line(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"id": 1}\nnot json\n')
    with pytest.raises(ValueError, match=":2:"):
        read_manifest(p)


@pytest.mark.parametrize("kw", [dict(p_near_only=0.7, p_far_only=0.5), dict(segment_seconds=0.0),
                                dict(level_min_dbfs=-30.0), dict(tilt_bound=3.0)])
def test_genconfig_validation(kw):
    with pytest.raises(ValueError):
        make_corpus(GenConfig(**kw), 0)


def test_genconfig_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        GenConfig.from_dict({"n_trian": 3})


def test_wav_directory_pool(tmp_path):
    from aeclab.datagen.sources import synth_speech
    from aeclab.dsp import write_wav

    r = np.random.default_rng(0)
    for i in range(6):
        write_wav(tmp_path / f"talker{i}.wav", 0.3 * synth_speech(r, 1.5))
    g = GenConfig(n_train=3, n_val=0, n_test=0, segment_seconds=1.0, source_seconds=1.5,
                  near_dir=str(tmp_path), **SMALL)
    rows = make_corpus(g, 2)
    assert all(r_["near_source"].startswith("wav:") for r_ in rows)
    ex = render_example(rows[0])
    np.testing.assert_array_equal(ex.mic, ex.near_end + ex.echo + ex.noise)
    with pytest.raises(FileNotFoundError):
        make_corpus(GenConfig(near_dir=str(tmp_path / "empty"), **SMALL), 0)

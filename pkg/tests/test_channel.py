import csv

import numpy as np
import pytest

from ganstego import codec, pipeline
from ganstego.channel import ChannelConfig, apply_channel, apply_channel_traced, evaluate_reliability
from ganstego.codec import build_dictionary

DICT = build_dictionary(list("abcdefghijklmnopqrstuvwxyz "))
ORACLE = dict(renderer=pipeline.stamp_renderer, classifier=pipeline.stamp_classifier)
TEXT = "a quiet channel carries many fragments of plain text"


def images(n, seed=0):
    r = np.random.default_rng(seed)
    return [r.integers(0, 256, (224, 224), dtype=np.uint8) for _ in range(n)]


def test_zero_rates_identity():
    imgs = images(5)
    out = apply_channel(imgs, ChannelConfig(shuffle=False), np.random.default_rng(0))
    assert len(out) == 5 and all(np.array_equal(a, b) for a, b in zip(out, imgs))


def test_shuffle_preserves_multiset():
    imgs = images(6)
    out, src = apply_channel_traced(imgs, ChannelConfig(seed=4))
    assert sorted(src) == list(range(6))
    assert sorted(x.tobytes() for x in out) == sorted(x.tobytes() for x in imgs)


def test_duplicate_all():
    out, src = apply_channel_traced(images(3), ChannelConfig(duplicate_prob=1.0, shuffle=False))
    assert len(out) == 6 and src == [0, 1, 2, 0, 1, 2]


def test_seeded_realization():
    cfg = ChannelConfig(seed=9, duplicate_prob=0.5, corruption_rate=0.1)
    a = apply_channel(images(4), cfg)
    b = apply_channel(images(4), cfg)
    assert [x.tobytes() for x in a] == [x.tobytes() for x in b]


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        apply_channel([], ChannelConfig())


@pytest.mark.parametrize("kw", [dict(duplicate_prob=1.5), dict(corruption_rate=1.0),
                                dict(corruption_rate=-0.1), dict(corrupt_tiles=61),
                                dict(noise_low=30, noise_high=20)])
def test_config_ranges(kw):
    with pytest.raises(ValueError):
        ChannelConfig(**kw)


def test_corruption_moves_exactly_the_chosen_tiles():
    img = pipeline.compose_tiles(pipeline.stamp_renderer(np.arange(64) % 10))
    cfg = ChannelConfig(corrupt_tiles=3, shuffle=False)
    out = apply_channel([img], cfg, np.random.default_rng(2))[0]
    before = pipeline.split_tiles(img).reshape(64, -1).mean(axis=1) * 127.5
    after = pipeline.split_tiles(out).reshape(64, -1).mean(axis=1) * 127.5
    moved = np.flatnonzero(np.abs(after - before) > 1e-6)
    assert len(moved) == 3 and moved.min() >= 4
    assert (np.abs(after - before)[moved] >= cfg.noise_low - 0.5).all()
    assert (np.abs(after - before)[moved] <= cfg.noise_high + 0.5).all()


def test_clean_channel_recovers_everything():
    st = evaluate_reliability(TEXT, DICT, ChannelConfig(shuffle=False), 5, **ORACLE)
    assert st.recovery_rate == 1.0 and st.label_accuracy == 1.0


def test_shuffle_matches_identity():
    plain = evaluate_reliability(TEXT, DICT, ChannelConfig(seed=1, shuffle=False), 100, **ORACLE)
    mixed = evaluate_reliability(TEXT, DICT, ChannelConfig(seed=1, shuffle=True), 100, **ORACLE)
    assert plain.recovery_rate == mixed.recovery_rate == 1.0


def test_single_wrong_label_is_always_detected():
    text = "fits in a single image"[:14]
    cfg = ChannelConfig(seed=3, corrupt_tiles=1)
    st = evaluate_reliability(text, DICT, cfg, 40, ecc=True, **ORACLE)
    assert st.ecc_detected == st.trials == 40
    assert all(r.labels_correct == 63 for r in st.rows)
    assert st.ecc_corrected == 40 and st.recovery_rate == 1.0


def test_corruption_without_ecc_breaks_messages():
    text = "fits in a single image"[:15]
    st = evaluate_reliability(text, DICT, ChannelConfig(seed=3, corrupt_tiles=1), 20, **ORACLE)
    assert st.ecc_detected == 0
    assert st.recovery_rate < 1.0


def test_duplicates_fail_trials_without_aborting():
    st = evaluate_reliability(TEXT, DICT, ChannelConfig(seed=0, duplicate_prob=1.0), 3, **ORACLE)
    assert st.trials == 3 and st.recovery_rate == 0.0
    assert all("more than once" in r.error for r in st.rows)
    assert st.label_accuracy == 1.0


def test_trials_must_be_positive():
    with pytest.raises(ValueError):
        evaluate_reliability(TEXT, DICT, ChannelConfig(), 0, **ORACLE)


def test_stats_csv(tmp_path):
    st = evaluate_reliability(TEXT, DICT, ChannelConfig(corrupt_tiles=1), 4, ecc=True, **ORACLE)
    st.write_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["trial", "recovered", "labels_correct", "ecc_detected", "ecc_corrected"]
    assert len(rows) == 5
    assert 0 <= st.recovery_rate <= 1 and 0 <= st.label_accuracy <= 1
    assert st.ecc_corrected <= st.ecc_detected
    assert "trials 4" in st.summary()

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ganstego import codec, pipeline
from ganstego.acgan.nets import Generator
from ganstego.codec import build_dictionary
from ganstego.engine import precision
from ganstego.pipeline import (DuplicateSequenceError, compose_tiles, extract, hide, read_fragment,
                               retry_candidates, split_tiles, stamp_classifier, stamp_renderer)

CHARS = "abcdefghijklmnopqrstuvwxyz .,"
DICT = build_dictionary(list(CHARS) + ["th", "he", "the ", "ing"])
ORACLE = dict(renderer=stamp_renderer, classifier=stamp_classifier)


def hide_oracle(text, seed=0, ecc=False):
    return hide(text, DICT, rng=np.random.default_rng(seed), ecc=ecc, renderer=stamp_renderer)


def lively_generator(seed=0):
    with precision(np.float64):
        g = Generator(np.random.default_rng(seed), noise_dim=6, width=2)
    for name, p in g.params.items():
        if "kernel" in name or "weight" in name:
            p.data = p.data * 25
    return g


def one_hot_probs(labels, conf=0.99):
    p = np.full((64, 10), (1 - conf) / 9)
    p[np.arange(64), labels] = conf
    return p


# composition


def test_endpoints():
    assert not compose_tiles(-np.ones((64, 1, 28, 28))).any()
    assert (compose_tiles(np.ones((64, 1, 28, 28))) == 255).all()
    assert compose_tiles(np.zeros((64, 28, 28))).dtype == np.uint8


def test_tile_positions():
    tiles = np.repeat(np.linspace(-1, 1, 64)[:, None, None, None], 28, axis=2).repeat(28, axis=3)
    img = compose_tiles(tiles)
    for k in (0, 7, 8, 35, 63):
        r, c = divmod(k, 8)
        block = img[r * 28:(r + 1) * 28, c * 28:(c + 1) * 28]
        assert (block == np.rint((tiles[k, 0, 0, 0] + 1) * 127.5)).all()


def test_shape_errors():
    with pytest.raises(ValueError):
        compose_tiles(np.zeros((63, 1, 28, 28)))
    with pytest.raises(ValueError):
        split_tiles(np.zeros((224, 223), dtype=np.uint8))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_quantization_bound(seed):
    x = np.random.default_rng(seed).uniform(-1, 1, size=(64, 1, 28, 28))
    back = split_tiles(compose_tiles(x), dtype=np.float64)
    assert np.abs(back - x).max() <= 1 / 127.5
    assert compose_tiles(back).tobytes() == compose_tiles(x).tobytes()


# hiding


def test_fifteen_characters_fill_one_image():
    assert len(hide_oracle("abcdefghijklmno")) == 1
    assert len(hide_oracle("abcdefghijklmnop")) == 2


def test_empty_text():
    assert hide_oracle("") == []
    assert extract([], DICT, **{"classifier": stamp_classifier})[0] == ""


def test_hide_needs_a_renderer():
    with pytest.raises(ValueError):
        hide("abc", DICT)


def test_hide_propagates_codec_errors():
    with pytest.raises(codec.SegmentationError):
        hide_oracle("ABC")


def test_generator_images_are_seeded():
    g = lively_generator()
    a = hide("hello world", DICT, gen=g, rng=np.random.default_rng(4))
    b = hide("hello world", DICT, gen=g, rng=np.random.default_rng(4))
    c = hide("hello world", DICT, gen=g, rng=np.random.default_rng(5))
    assert [x.tobytes() for x in a] == [x.tobytes() for x in b]
    assert a[0].tobytes() != c[0].tobytes()
    # padding tiles share a label but each draws its own noise
    tiles = split_tiles(a[0])
    assert not np.array_equal(tiles[60], tiles[61])


# extraction with the oracle stand-in


text_strategy = st.text(alphabet=CHARS, min_size=1, max_size=120)


@settings(max_examples=100, deadline=None)
@given(text_strategy, st.integers(0, 1000), st.booleans())
def test_oracle_round_trip_any_order(text, seed, ecc):
    images = hide_oracle(text, seed, ecc=ecc)
    order = np.random.default_rng(seed).permutation(len(images))
    got, reports = extract([images[i] for i in order], DICT, ecc=ecc, classifier=stamp_classifier)
    assert got == text
    assert [r.seq_no for r in reports] == list(range(len(images)))
    assert all(((r.confidences > 0) & (r.confidences <= 1)).all() for r in reports)


def test_duplicates_are_reported():
    images = hide_oracle("x" * 40)
    with pytest.raises(DuplicateSequenceError) as err:
        extract(images + [images[1], images[1]], DICT, classifier=stamp_classifier)
    assert err.value.duplicates == [1]


def test_bad_fragment_keeps_the_rest():
    images = hide_oracle("a" * 15 + "b" * 15 + "c" * 5)
    broken = images[1].copy()
    # turn payload group 1 of fragment 1 into the unknown code 8888
    tiles = split_tiles(broken, dtype=np.float64)
    tiles[4:8] = pipeline.STAMP_LEVELS[8]
    images[1] = compose_tiles(tiles)
    text, reports = extract(images, DICT, classifier=stamp_classifier)
    assert text == "a" * 15 + "c" * 5
    assert [r.status for r in reports] == ["ok", "decode-error", "ok"]
    assert "8888" in reports[1].error


# parity-guided retry


def test_retry_candidates_are_lowest_confidence():
    conf = np.ones(64)
    conf[[0, 1]] = 0.1          # marker tiles never count
    conf[[40, 9, 22]] = [0.5, 0.3, 0.5]
    assert retry_candidates(conf, 1) == [9]
    assert retry_candidates(conf, 2) == [9, 22]
    assert retry_candidates(conf, 3) == [9, 22, 40]


def test_single_error_is_corrected():
    frag = codec.Fragment(5, list("hello world"))
    d = build_dictionary(list("helo wrd"))
    truth = codec.encode_fragment(frag, d, ecc=True).labels
    probs = one_hot_probs(truth)
    bad = 17
    wrong = (truth[bad] + 3) % 10
    probs[bad] = 0.0
    probs[bad, wrong], probs[bad, truth[bad]] = 0.6, 0.4
    rep = read_fragment(probs, d, ecc=True)
    assert rep.status == "corrected" and rep.substituted == [bad]
    assert rep.raw_labels[bad] == wrong and rep.labels[bad] == truth[bad]
    assert rep.text == "hello world" and rep.parity_failed


def test_two_errors_need_two_substitutions():
    d = build_dictionary(list("helo wrd"))
    truth = codec.encode_fragment(codec.Fragment(0, list("hello")), d, ecc=True).labels
    probs = one_hot_probs(truth)
    for tile, c in ((9, 0.55), (14, 0.6)):
        probs[tile] = 0.0
        probs[tile, (truth[tile] + 1) % 10], probs[tile, truth[tile]] = c, 1 - c
    rep = read_fragment(probs, d, ecc=True)
    assert rep.status == "corrected" and rep.substituted == [9, 14]
    assert rep.text == "hello"


def test_uncorrectable_reports_parity_error():
    d = build_dictionary(list("helo wrd"))
    truth = codec.encode_fragment(codec.Fragment(0, list("hello")), d, ecc=True).labels
    probs = one_hot_probs(truth)
    probs[20] = 0.0
    probs[20, (truth[20] + 4) % 10] = 1.0   # confident and wrong: runner-up is not the truth
    rep = read_fragment(probs, d, ecc=True)
    assert rep.status == "parity-error" and rep.tokens == []
    assert not rep.decoded


def test_without_ecc_no_retry():
    d = build_dictionary(list("helo wrd"))
    truth = codec.encode_fragment(codec.Fragment(0, list("hello")), d).labels
    rep = read_fragment(one_hot_probs(truth), d)
    assert rep.status == "ok" and rep.text == "hello" and not rep.parity_failed

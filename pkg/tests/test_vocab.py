import pytest
from hypothesis import given, settings, strategies as st

from livr_lab.vocab import (BASE_SYMBOLS, EOS, LatentConfig, VocabError, Vocabulary, build_layout,
                            build_vocab, decode_answer, encode_answer, encode_example, span_len)


def test_latent_ids_follow_base_ids():
    v = build_vocab(K=5)
    assert v.total_size == len(BASE_SYMBOLS) + 5
    assert list(v.latent_ids) == list(range(v.base_size, v.base_size + 5))
    assert v.symbol(v.base_size) == "<lat0>"
    assert v.id("<lat4>") == v.total_size - 1


def test_duplicate_and_unknown_symbols_rejected():
    with pytest.raises(VocabError):
        Vocabulary(("a", "b", "a"), 0)
    with pytest.raises(VocabError):
        build_vocab().id("nope")
    with pytest.raises(VocabError):
        build_vocab(K=2).symbol(10_000)


def test_vocab_round_trips_through_dict():
    v = build_vocab(K=3)
    assert Vocabulary.from_dict(v.to_dict()) == v
    assert v.decode(v.ids(["A", "<eos>", "<lat2>"])) == ["A", "<eos>", "<lat2>"]


def test_answer_encoding():
    v = build_vocab()
    assert encode_answer(v, "C") == [v.id("C")]
    assert encode_answer(v, 17) == [v.id("1"), v.id("7"), v.id(EOS)]
    for ans in ("A", "D", 0, 9, 10, 123):
        assert decode_answer(v, encode_answer(v, ans)) == ans
    assert decode_answer(v, [v.id("<pad>")]) is None
    for bad in ("E", -1, True, 1.5):
        with pytest.raises(VocabError):
            encode_answer(v, bad)


def test_encode_example_uses_prompt_symbols():
    v = build_vocab()
    p, a = encode_example(v, ["<bos>", "A", "B"], "B")
    assert p == v.ids(["<bos>", "A", "B"]) and a == [v.id("B")]


def test_latent_config_validation_and_rows():
    assert LatentConfig(K=8).n_rows == 8
    assert LatentConfig(K=8, embeddings="shared").n_rows == 1
    assert LatentConfig(K=0).n_rows == 0
    for kw in ({"K": -1}, {"placement": "middle"}, {"embeddings": "tied"}):
        with pytest.raises(ValueError):
            LatentConfig(**kw)


def test_layout_order_after_prompt():
    lay = build_layout(4, 3, 2, 1)
    assert lay.kinds() == ["image"] * 4 + ["prompt"] * 3 + ["latent"] * 2 + ["answer"]
    before = build_layout(4, 3, 2, 1, placement="before_prompt")
    assert before.kinds() == ["image"] * 4 + ["latent"] * 2 + ["prompt"] * 3 + ["answer"]


def test_image_copies_double_the_image_span():
    lay = build_layout(4, 1, 0, 1, image_copies=2)
    assert lay.image_span == (0, 8) and lay.total_len == 10


def test_padding_and_bad_arguments():
    lay = build_layout(2, 2, 2, 2)
    p = lay.padded(12)
    assert p.pad_span == (8, 12) and p.content_len == 8 and p.kinds()[-1] == "pad"
    assert lay.padded(8).pad_span == (8, 8)
    with pytest.raises(ValueError):
        lay.padded(7)
    with pytest.raises(ValueError):
        build_layout(2, 2, -1, 1)
    with pytest.raises(ValueError):
        build_layout(2, 2, 1, 1, placement="x")


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 6), st.integers(0, 5), st.integers(0, 5), st.integers(1, 4),
       st.sampled_from(["after_prompt", "before_prompt"]), st.integers(0, 4))
def test_without_latents_keeps_other_spans(n_img, n_prompt, K, n_ans, placement, extra):
    lay = build_layout(n_img, n_prompt, K, n_ans, placement).padded(n_img + n_prompt + K + n_ans + extra)
    dropped = lay.without_latents()
    assert dropped.total_len == lay.total_len - K
    assert span_len(dropped.latent_span) == 0
    kept = [k for k in lay.kinds() if k != "latent"]
    assert dropped.kinds() == kept

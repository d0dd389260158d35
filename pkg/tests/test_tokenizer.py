import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syllogistic.model import encode
from syllogistic.model.tokenizer import BPETokenizer, default_tokenizer_paths


@pytest.fixture(scope="module")
def reference():
    """HF ``tokenizers`` byte-level BPE over the same tables, as an independent encoder."""
    tk = pytest.importorskip("tokenizers")
    vocab, merges = default_tokenizer_paths()
    ref = tk.Tokenizer(tk.models.BPE.from_file(str(vocab), str(merges)))
    ref.pre_tokenizer = tk.pre_tokenizers.ByteLevel(add_prefix_space=False)
    return ref


def test_barbara_prompt_is_fifteen_tokens(tokenizer):
    assert len(tokenizer.encode("All A are B. All B are C. Therefore, all A are")) == 15


def test_empty_string(tokenizer):
    assert tokenizer.encode("") == []
    assert tokenizer.decode([]) == ""


def test_space_letter_matches_vocab_file(tokenizer):
    vocab_path, _ = default_tokenizer_paths()
    vocab = json.loads(vocab_path.read_text(encoding="utf-8"))
    # "Ġ" is the byte-level stand-in for a leading space.
    assert tokenizer.encode(" A") == [vocab["ĠA"]]


def test_module_level_encode_uses_bundled_tables(tokenizer):
    assert encode(" men") == tokenizer.encode(" men")


def test_long_word_is_multi_token(tokenizer):
    assert not tokenizer.is_single_token(" electromagnetism")
    with pytest.raises(ValueError):
        tokenizer.token_id(" electromagnetism")


@pytest.mark.parametrize(
    "text",
    [
        "All men are humans. All humans are mortal. Therefore, all men are",
        "Each A is B. Each B is C. Therefore, each A is",
        "Some 1 are not 2.",
        "I'll say it's   spaced\n\nout\ttabs  ",
        "naïve café — “quotes” 日本語 🙂",
        "  leading and trailing  ",
        "numbers 12345 and 3.14159, mixed1with2digits",
    ],
)
def test_matches_reference_encoder(tokenizer, reference, text):
    assert tokenizer.encode(text) == reference.encode(text).ids


@settings(max_examples=150, deadline=None)
@given(st.text(max_size=40))
def test_matches_reference_on_random_text(tokenizer, reference, text):
    assert tokenizer.encode(text) == reference.encode(text).ids


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60))
def test_decode_inverts_encode(tokenizer, text):
    assert tokenizer.decode(tokenizer.encode(text)) == text


def test_encoding_is_deterministic(tokenizer):
    vocab, merges = default_tokenizer_paths()
    fresh = BPETokenizer.from_files(vocab, merges)
    text = "Therefore, some A are not"
    assert fresh.encode(text) == tokenizer.encode(text) == tokenizer.encode(text)

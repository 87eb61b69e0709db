import string
import unicodedata

import pytest
from hypothesis import given
from hypothesis import strategies as st

from permstr.textcodec import (
    FULL_CHARSET,
    MalformedSequenceError,
    Rejected,
    TokenCodec,
    UnsupportedCharsetError,
    charset_slice,
    decode_ids,
    encode_label,
    preprocess_label,
)

CS94 = charset_slice(94)
CS36 = charset_slice(36)


def test_full_ordering():
    assert FULL_CHARSET[:10] == string.digits
    assert FULL_CHARSET[10:36] == string.ascii_lowercase
    assert FULL_CHARSET[36:62] == string.ascii_uppercase
    assert FULL_CHARSET[62:] == "".join(sorted(string.punctuation))
    assert len(FULL_CHARSET) == 94


def test_slices():
    assert CS36.chars == string.digits + string.ascii_lowercase and CS36.case_mode == "lower"
    cs62 = charset_slice(62)
    assert cs62.chars == CS36.chars + string.ascii_uppercase and cs62.case_mode == "mixed"
    assert len(CS94) == 94 and CS94.case_mode == "mixed"
    assert CS94.chars.startswith(cs62.chars)


def test_unsupported_size():
    with pytest.raises(UnsupportedCharsetError):
        charset_slice(50)


def test_preprocess_examples():
    assert preprocess_label("a b", CS94, 25) == "ab"
    # NFKD splits é into e + U+0301; the combining mark is not ASCII
    assert unicodedata.normalize("NFKD", "é") == "é"
    assert preprocess_label("héllo", CS94, 25) == "hello"
    assert preprocess_label("MiXeD", CS36, 25) == "mixed"
    r = preprocess_label("x" * 26, CS94, 25)
    assert isinstance(r, Rejected) and r.reason == "too-long"
    r = preprocess_label("日本", CS94, 25)
    assert isinstance(r, Rejected) and r.reason == "empty"


def test_preprocess_upper_charset():
    from permstr.textcodec import Charset

    assert preprocess_label("abc1", Charset("ABC1"), 25) == "ABC1"


@given(st.text(max_size=40))
def test_preprocess_idempotent(raw):
    once = preprocess_label(raw, CS36, 25)
    if isinstance(once, Rejected):
        return
    assert preprocess_label(once, CS36, 25) == once


def test_encode_examples():
    codec = TokenCodec(CS94, 4)
    e = encode_label("ab", codec)
    B, E, P = codec.bos_id, codec.eos_id, codec.pad_id
    assert (B, E, P) == (95, 94, 96)
    assert e.context_ids.tolist() == [B, 10, 11, P, P]
    assert e.target_ids.tolist() == [10, 11, E, P, P]
    e = encode_label("0", TokenCodec(CS94, 2))
    assert e.context_ids.tolist() == [B, 0, P] and e.target_ids.tolist() == [0, E, P]


def test_encode_rejects_bad_input():
    codec = TokenCodec(CS36, 4)
    with pytest.raises(ValueError):
        encode_label("", codec)
    with pytest.raises(ValueError):
        encode_label("A", codec)


def test_specials_and_head_width():
    codec = TokenCodec(CS36, 25)
    assert codec.num_classes == 37
    assert {codec.eos_id, codec.bos_id, codec.pad_id} == {36, 37, 38}


def test_decode_examples():
    codec = TokenCodec(CS94, 4)
    E = codec.eos_id
    assert decode_ids([10, 11, E, 10], codec) == "ab"
    assert decode_ids([E, 3, 4], codec) == ""
    assert decode_ids([10, 11], codec) == "ab"
    with pytest.raises(MalformedSequenceError):
        decode_ids([10, codec.pad_id, E], codec)


@given(st.text(alphabet=FULL_CHARSET, min_size=1, max_size=25))
def test_round_trip_and_target_count(s):
    codec = TokenCodec(CS94, 25)
    e = encode_label(s, codec)
    assert decode_ids(e.target_ids, codec) == s
    assert int((e.target_ids != codec.pad_id).sum()) == len(s) + 1
    assert e.context_ids[0] == codec.bos_id and e.target_ids[e.length] == codec.eos_id

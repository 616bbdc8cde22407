import io
import json
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockbpe import IntegrityError, MergeTable, ParseError, SpecialTokenSet, decode, load_merge_table, load_specials, rank_of
from blockbpe.exceptions import DecodeError, UsageError
from blockbpe.vocab import ABSENT, bytes_to_gpt2_string, bytes_to_unicode, dump_canonical_json, gpt2_string_to_bytes

TOY_VOCAB = json.dumps({"a": 0, "b": 1, "c": 2, "ab": 3, "abc": 4}).encode()
TOY_MERGES = b"#version: 0.2\na b\nab c\n"


@pytest.fixture
def loaded_toy():
    return load_merge_table(TOY_VOCAB, TOY_MERGES, "gpt2")


def test_toy_loader_transcribes_ranks(loaded_toy):
    assert loaded_toy.pair_rank == {(0, 1): 0, (3, 2): 1}
    assert loaded_toy.pair_merged == {(0, 1): 3, (3, 2): 4}
    assert len(loaded_toy) == 5
    assert loaded_toy.n_merges == 2


def test_header_is_optional():
    t = load_merge_table(TOY_VOCAB, b"a b\nab c", "gpt2")
    assert t.pair_rank == {(0, 1): 0, (3, 2): 1}


def test_loader_accepts_streams_and_paths(tmp_path):
    v = tmp_path / "v.json"
    v.write_bytes(TOY_VOCAB)
    t = load_merge_table(str(v), io.BytesIO(TOY_MERGES))
    assert t.pair_rank[(3, 2)] == 1


@pytest.mark.parametrize(
    "pair, expected",
    [((0, 1), 0), ((1, 0), None), ((3, 2), 1), ((2, 2), None)],
)
def test_rank_of(loaded_toy, pair, expected):
    assert rank_of(loaded_toy, pair) == expected
    assert loaded_toy.rank_of(pair) == expected


@pytest.mark.parametrize("ids, expected", [([3, 2], b"abc"), ([4], b"abc"), ([], b""), ([0, 0, 1], b"aab")])
def test_decode_examples(loaded_toy, ids, expected):
    assert decode(loaded_toy, None, ids) == expected


def test_decode_unknown_id_names_index(loaded_toy):
    with pytest.raises(DecodeError) as info:
        decode(loaded_toy, None, [0, 77])
    assert info.value.index == 1 and info.value.token_id == 77
    assert "77" in str(info.value)


def test_decode_specials_first(loaded_toy):
    sp = SpecialTokenSet({"<eos>": 9})
    assert decode(loaded_toy, sp, [4, 9]) == b"abc<eos>"


def test_duplicate_merge_line_is_integrity_error():
    with pytest.raises(IntegrityError, match="duplicate"):
        load_merge_table(TOY_VOCAB, b"a b\nab c\na b\n")


def test_malformed_line_reports_line_number():
    with pytest.raises(ParseError) as info:
        load_merge_table(TOY_VOCAB, b"#version: 0.2\na b\nabc\n")
    assert info.value.line == 3
    assert ":3" in str(info.value) or "line 3" in str(info.value)


def test_unknown_merge_token_names_pair():
    with pytest.raises(IntegrityError, match="'b', 'c'"):
        load_merge_table(TOY_VOCAB, b"a b\nb c\n")


def test_concatenation_invariant_enforced():
    with pytest.raises(IntegrityError, match="is not"):
        MergeTable({0: b"a", 1: b"b", 2: b"ba"}, [(0, 0, 1, 2)])


def test_duplicate_rank_rejected():
    with pytest.raises(IntegrityError, match="duplicate rank"):
        MergeTable({0: b"a", 1: b"b", 2: b"ab", 3: b"ba"}, [(0, 0, 1, 2), (0, 1, 0, 3)])


def test_bad_json_is_parse_error():
    with pytest.raises(ParseError):
        load_merge_table(b"{not json", TOY_MERGES)


def test_unknown_format():
    with pytest.raises(UsageError):
        load_merge_table(TOY_VOCAB, TOY_MERGES, "tiktoken")


def test_missing_file_is_usage_error(tmp_path):
    with pytest.raises(UsageError):
        load_merge_table(tmp_path / "nope.json", TOY_MERGES)


def test_canonical_round_trip(loaded_toy):
    sp = SpecialTokenSet({"<eos>": 9})
    doc = dump_canonical_json(loaded_toy, sp).encode()
    again = load_merge_table(doc, format="canonical_json")
    assert again == loaded_toy
    assert load_specials(doc) == sp


def test_table_is_immutable_and_picklable(loaded_toy):
    with pytest.raises(AttributeError):
        loaded_toy.base_size = 3
    assert pickle.loads(pickle.dumps(loaded_toy)) == loaded_toy


def test_lookup_matches_dicts(toy8):
    ids = np.array(sorted(toy8.token_bytes))
    left, right = np.meshgrid(ids, ids)
    ranks, merged = toy8.lookup(left.ravel(), right.ravel())
    for a, b, r, m in zip(left.ravel(), right.ravel(), ranks, merged):
        expect = toy8.rank_of((int(a), int(b)))
        if expect is None:
            assert r == ABSENT
        else:
            assert r == expect and m == toy8.merged_of((int(a), int(b)))


def test_byte_unicode_bijection():
    table = bytes_to_unicode()
    assert len(table) == 256 and len(set(table.values())) == 256
    assert table[ord("A")] == "A"
    assert table[ord(" ")] == "Ġ"


@given(st.binary(max_size=64))
def test_gpt2_string_round_trip(data):
    assert gpt2_string_to_bytes(bytes_to_gpt2_string(data)) == data


def test_specials_longest_first():
    sp = SpecialTokenSet({"<e>": 1, "<eos>": 2})
    assert list(sp.entries) == [b"<eos>", b"<e>"]
    assert sp.id_of("<eos>") == 2 and sp.bytes_of(1) == b"<e>"
    assert 2 in sp and 3 not in sp


def test_specials_check_against_table(loaded_toy):
    SpecialTokenSet({"<eos>": 9}).check_against(loaded_toy)
    with pytest.raises(IntegrityError):
        SpecialTokenSet({"<eos>": 3}).check_against(loaded_toy)


def test_gpt2_counts(gpt2):
    assert len(gpt2) == 50257
    assert gpt2.n_merges == 50000
    assert gpt2.is_rank_ordered()
    assert gpt2.id_of_bytes(b"<|endoftext|>") == 50256

import csv
import io
import json
import statistics

import pytest

from blockbpe import BenchConfig, EngineMismatch, MergeTable, emit_report, ingest_corpus, occupancy_estimate, run_benchmark
from blockbpe.bench import CSV_HEADER, BenchRow, _utf8_backoff, correctness_gate, time_callable
from blockbpe.exceptions import UsageError


@pytest.fixture
def ascii_file(tmp_path):
    path = tmp_path / "ascii.txt"
    path.write_bytes(bytes(65 + i % 26 for i in range(1 << 20)))
    return path


def test_ingest_sequential_chunks(ascii_file):
    data = ascii_file.read_bytes()
    chunks = ingest_corpus(ascii_file, 128, 4)
    assert chunks == [data[o : o + 128] for o in (0, 128, 256, 384)]


def test_ingest_wraps(tmp_path):
    path = tmp_path / "short.txt"
    path.write_bytes(b"abcdefghij")
    assert ingest_corpus(path, 4, 4) == [b"abcd", b"efgh", b"ijab", b"cdef"]


def test_ingest_utf8_backoff(tmp_path):
    path = tmp_path / "utf8.txt"
    path.write_bytes(b"ab\xe2\x82\xacxyz")  # "ab€xyz"
    chunks = ingest_corpus(path, 4, 2)
    assert chunks[0] == b"ab"
    assert chunks[1] == b"\xe2\x82\xacx"


@pytest.mark.parametrize(
    "chunk, expected",
    [(b"abc", b"abc"), (b"a\xe2", b"a"), (b"a\xe2\x82", b"a"), (b"a\xe2\x82\xac", b"a\xe2\x82\xac"),
     (b"\xf0\x9f\x98", b""), (b"\xf0\x9f\x98\x80", b"\xf0\x9f\x98\x80"), (b"", b"")],
)
def test_utf8_backoff(chunk, expected):
    out = _utf8_backoff(chunk)
    assert out == expected
    assert len(chunk) - len(out) <= 3


def test_ingest_file_shorter_than_seq_len(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_bytes(b"abc")
    assert ingest_corpus(path, 7, 2) == [b"abcabca", b"bcabcab"]


@pytest.mark.parametrize("content, seq", [(b"", 4), (b"abc", 0)])
def test_ingest_errors(tmp_path, content, seq):
    path = tmp_path / "c.txt"
    path.write_bytes(content)
    with pytest.raises(UsageError):
        ingest_corpus(path, seq, 1)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(UsageError):
        ingest_corpus(tmp_path / "missing.txt", 4, 1)


@pytest.mark.parametrize("args, expected", [((1024, 114, 1024), 114), ((256, 114, 1024), 456), ((1024, 1, 1024), 1)])
def test_occupancy(args, expected):
    assert occupancy_estimate(*args) == expected


def test_occupancy_rejects_oversized_block():
    with pytest.raises(UsageError):
        occupancy_estimate(2048, 114, 1024)


def _row(**kw):
    base = dict(engine="block", block_size=256, batch_size=4, seq_len=512, wall_time_median=0.5,
                bytes_per_s=4096.0, tokens_per_s=1000.0, passes_mean=3.0, d=2)
    base.update(kw)
    return BenchRow(**base)


def test_emit_report_csv():
    assert emit_report([], "csv").decode().splitlines() == [",".join(CSV_HEADER)]
    lines = emit_report([_row()], "csv").decode().splitlines()
    assert len(lines) == 2 and len(lines[1].split(",")) == 9
    assert "wall_time_s" in lines[0]


def test_emit_report_json():
    doc = json.loads(emit_report([_row(), _row(engine="heap")], "json"))
    assert len(doc) == 2 and doc[1]["engine"] == "heap"


def test_emit_report_unknown_format():
    with pytest.raises(UsageError):
        emit_report([], "xml")


def test_median_of_five_is_third_order_statistic():
    calls = []
    measured = time_callable(lambda: calls.append(1), repetitions=5, warmup=2)
    assert len(calls) == 7 and len(measured) == 5
    assert statistics.median(measured) == sorted(measured)[2]


@pytest.mark.parametrize(
    "kwargs",
    [{"batch_sizes": []}, {"engines": ["gpu"]}, {"repetitions": 2}, {"seq_lens": [0]}, {"warmup": 0}],
)
def test_bench_config_validation(kwargs):
    base = dict(corpus_path="c.txt", batch_sizes=[1], seq_lens=[8])
    base.update(kwargs)
    with pytest.raises(UsageError):
        BenchConfig(**base)


def test_bench_config_from_dict(tmp_path):
    cfg = BenchConfig.from_dict({"corpus_path": "c.txt", "batch_sizes": [1], "seq_lens": [8]}, str(tmp_path))
    assert cfg.corpus_path == str(tmp_path / "c.txt")
    with pytest.raises(UsageError, match="unknown"):
        BenchConfig.from_dict({"corpus_path": "c.txt", "batch_sizes": [1], "seq_lens": [8], "gpu": 1})


def test_run_benchmark_two_engines(gpt2, corpus_path):
    cfg = BenchConfig(str(corpus_path), batch_sizes=[2], seq_lens=[64], block_sizes=[256],
                      engines=["naive", "block"], repetitions=3, warmup=1)
    rows = run_benchmark(cfg, gpt2)
    assert [(r.engine, r.block_size) for r in rows] == [("block", 256), ("naive", 1)]
    assert rows[0].tokens_per_s * rows[0].wall_time_median == pytest.approx(rows[1].tokens_per_s * rows[1].wall_time_median)
    assert all(r.wall_time_median > 0 for r in rows)


def test_run_benchmark_reports_d(gpt2, corpus_path):
    cfg = BenchConfig(str(corpus_path), batch_sizes=[1], seq_lens=[2048], block_sizes=[256, 1024],
                      repetitions=3, warmup=1, merges_only=True)
    rows = run_benchmark(cfg, gpt2)
    assert {r.block_size: r.d for r in rows} == {256: 8, 1024: 2}
    assert all(r.passes_mean > 0 for r in rows)


def test_gate_reports_minimized_mismatch():
    # (ab, a) outranks (a, b): not a trained table, so block and naive disagree
    table = MergeTable({0: b"a", 1: b"b", 2: b"ab", 3: b"aba"}, [(0, 2, 0, 3), (1, 0, 1, 2)])
    with pytest.raises(EngineMismatch) as info:
        correctness_gate([b"ba", b"bbababb"], table, None, [("naive", 1), ("block", 256)])
    assert info.value.data == b"abab"
    assert info.value.outputs == ([3, 1], [2, 2])


def test_bench_csv_parses(gpt2, corpus_path):
    cfg = BenchConfig(str(corpus_path), batch_sizes=[1], seq_lens=[32], block_sizes=[32, 64], repetitions=3)
    data = emit_report(run_benchmark(cfg, gpt2), "csv").decode()
    records = list(csv.DictReader(io.StringIO(data)))
    assert [int(r["block_size"]) for r in records] == [32, 64]

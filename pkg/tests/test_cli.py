import json
import subprocess
import sys

import pytest

from blockbpe.batch import BatchEncoding
from blockbpe.cli import main

from conftest import DATA, GPT2_MERGES, GPT2_VOCAB

TABLE = ["--vocab", str(GPT2_VOCAB), "--merges", str(GPT2_MERGES)]


@pytest.fixture
def lines_file(tmp_path):
    path = tmp_path / "in.txt"
    path.write_bytes(b"hello world\nhi\n")
    return path


@pytest.fixture
def specials_file(tmp_path):
    path = tmp_path / "specials.json"
    path.write_text(json.dumps({"<|endoftext|>": 50256}))
    return path


def test_tokenize_jsonl(lines_file, capsysbinary):
    assert main(["tokenize", *TABLE, str(lines_file)]) == 0
    out = capsysbinary.readouterr().out.decode().splitlines()
    assert json.loads(out[0]) == {"ids": [31373, 995], "len": 2}
    assert len(out) == 2


@pytest.mark.parametrize("engine", ["naive", "heap", "block"])
def test_tokenize_bin_with_eos(lines_file, specials_file, tmp_path, engine):
    out = tmp_path / "out.bin"
    args = ["tokenize", *TABLE, "--specials", str(specials_file), "--eos", "--engine", engine, "--out", "bin", "-o", str(out), str(lines_file)]
    assert main(args) == 0
    enc = BatchEncoding.from_bin(out.read_bytes())
    assert enc.pad_id == 50256
    assert enc.ids[0].tolist() == [31373, 995, 50256]


def test_tokenize_canonical_json(tmp_path, lines_file, capsysbinary):
    from blockbpe import load_merge_table
    from blockbpe.vocab import dump_canonical_json

    doc = tmp_path / "toy.json"
    table = load_merge_table(GPT2_VOCAB, GPT2_MERGES)
    doc.write_text(dump_canonical_json(table))
    assert main(["tokenize", "--vocab", str(doc), "--format", "json", str(lines_file)]) == 0
    assert b"31373" in capsysbinary.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["tokenize", *TABLE, "missing-input.txt"],
        ["tokenize", "--vocab", "nope.json", "--merges", "nope.txt", "IN"],
        ["tokenize", *TABLE, "--bos", "IN"],
        ["tokenize", *TABLE, "--out", "bin", "IN"],
        ["tokenize", *TABLE, "--block-size", "0", "IN"],
    ],
)
def test_usage_errors_exit_1(argv, lines_file, capsys):
    argv = [str(lines_file) if a == "IN" else a for a in argv]
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("blockbpe tokenize:")


@pytest.mark.parametrize("argv", [["frobnicate"], ["tokenize", "--vocab", "x.json"], []])
def test_argparse_errors_exit_1(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_integrity_error_exits_2(tmp_path, lines_file, capsys):
    vocab = tmp_path / "v.json"
    merges = tmp_path / "m.txt"
    vocab.write_text(json.dumps({"a": 0, "b": 1}))
    merges.write_text("a b\n")
    assert main(["tokenize", "--vocab", str(vocab), "--merges", str(merges), str(lines_file)]) == 2
    assert "unknown token" in capsys.readouterr().err


def test_compare(tmp_path, capsys):
    src = tmp_path / "cmp.txt"
    src.write_bytes(b"hello\nthe end.\n\nNext\n")
    assert main(["compare", *TABLE, "--pattern", "gpt2", "--whole", "--json", str(src)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["count"] == 1 and doc["divergent"] == 1


def test_compare_bad_pattern(lines_file, capsys):
    assert main(["compare", *TABLE, "--pattern", "(oops", str(lines_file)]) == 1


def test_eval(tmp_path, capsys):
    refs = tmp_path / "refs.jsonl"
    cands = tmp_path / "cands.jsonl"
    lens = tmp_path / "lens.txt"
    refs.write_text('{"ids": [1, 2]}\n')
    cands.write_text('{"ids": [1]}\n')
    lens.write_text("4\n")
    assert main(["eval", "--refs", str(refs), "--cands", str(cands), "--source-lens", str(lens), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["aggregate_sim"] == 0.75
    lens.write_text("0\n")
    assert main(["eval", "--refs", str(refs), "--cands", str(cands), "--source-lens", str(lens)]) == 1


def test_eval_bad_jsonl_exits_2(tmp_path):
    refs = tmp_path / "refs.jsonl"
    refs.write_text("not json\n")
    lens = tmp_path / "lens.txt"
    lens.write_text("1\n")
    assert main(["eval", "--refs", str(refs), "--cands", str(refs), "--source-lens", str(lens)]) == 2


def test_bench_csv(tmp_path, capsysbinary):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({
        "vocab": str(GPT2_VOCAB), "merges": str(GPT2_MERGES), "corpus_path": str(DATA / "corpus.txt"),
        "batch_sizes": [2], "seq_lens": [64], "block_sizes": [64], "engines": ["heap", "block"], "repetitions": 3,
    }))
    assert main(["bench", "--config", str(cfg)]) == 0
    lines = capsysbinary.readouterr().out.decode().splitlines()
    assert lines[0].startswith("engine,block_size") and len(lines) == 3


def test_bench_bad_config(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text("[1, 2]")
    assert main(["bench", "--config", str(cfg)]) == 1
    assert main(["bench", "--config", str(tmp_path / "missing.json")]) == 1


def test_module_entry_point(lines_file):
    proc = subprocess.run([sys.executable, "-m", "blockbpe", "tokenize", *TABLE, str(lines_file)], capture_output=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith(b'{"ids": [31373, 995]')

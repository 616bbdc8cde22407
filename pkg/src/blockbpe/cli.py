"""Command line entry point: ``blockbpe {tokenize,compare,eval,bench}``.

Exit status is 0 on success, 1 for usage errors and 2 for integrity or
engine-mismatch errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .batch import ENGINES, encode_batch, read_jsonl_ids
from .bench import BenchConfig, emit_report, run_benchmark
from .block import BlockConfig
from .eval import divergence_report, similarity
from .exceptions import BPEError, UsageError
from .vocab import SpecialTokenSet, load_merge_table, load_specials

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INTEGRITY = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_table_args(p):
    p.add_argument("--vocab", required=True, help="vocab.json (gpt2) or canonical JSON table")
    p.add_argument("--merges", help="merges.txt (gpt2 format only)")
    p.add_argument("--format", choices=("gpt2", "json"), default="gpt2")
    p.add_argument("--specials", help="JSON object of special token string -> id")
    p.add_argument("--block-size", type=int, default=256)
    p.add_argument("--workers", type=int, default=None, help="parallel rows (default: $BLOCKBPE_WORKERS or all)")


def _add_input_args(p):
    p.add_argument("input", help="input file, one sequence per line ('-' for stdin)")
    p.add_argument("--whole", action="store_true", help="treat the whole file as a single sequence")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blockbpe", description="Block-parallel byte-level BPE tokenization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tokenize", help="encode a file to JSON-lines or the BBPE binary format")
    _add_table_args(p)
    _add_input_args(p)
    p.add_argument("--engine", choices=ENGINES, default="block")
    p.add_argument("--bos", action="store_true")
    p.add_argument("--eos", action="store_true")
    p.add_argument("--bos-token", help="special token string used for --bos")
    p.add_argument("--eos-token", help="special token string used for --eos and padding")
    p.add_argument("--pad-id", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--out", choices=("jsonl", "bin"), default="jsonl")
    p.add_argument("-o", "--output", help="write here instead of stdout")

    p = sub.add_parser("compare", help="byte-level vs pattern pre-tokenization divergence report")
    _add_table_args(p)
    _add_input_args(p)
    p.add_argument("--pattern", required=True, help="splitter regex, or a name: gpt2, llama3")
    p.add_argument("--json", action="store_true", help="machine-readable report")

    p = sub.add_parser("eval", help="similarity between reference and candidate token streams")
    p.add_argument("--refs", required=True, help='JSON-lines of {"ids": [...]}')
    p.add_argument("--cands", required=True, help='JSON-lines of {"ids": [...]}')
    p.add_argument("--source-lens", required=True, help="one source byte length per line")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("bench", help="run a throughput sweep")
    p.add_argument("--config", required=True, help="BenchConfig as JSON")
    _add_table_args_optional(p)
    p.add_argument("--report", choices=("csv", "json"), default="csv")
    p.add_argument("-o", "--output")
    return parser


def _add_table_args_optional(p):
    p.add_argument("--vocab", help="overrides 'vocab' in the config")
    p.add_argument("--merges", help="overrides 'merges' in the config")
    p.add_argument("--format", choices=("gpt2", "json"))
    p.add_argument("--specials")
    p.add_argument("--workers", type=int, default=None)


def _read_input(path: str, whole: bool) -> list[bytes]:
    if path == "-":
        data = sys.stdin.buffer.read()
    else:
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if whole:
        return [data]
    return data.splitlines()


def _load(args):
    fmt = "canonical_json" if args.format == "json" else (args.format or "gpt2")
    table = load_merge_table(args.vocab, args.merges, fmt)
    if args.specials:
        specials = load_specials(args.specials)
    elif fmt == "canonical_json":
        specials = load_specials(args.vocab)
    else:
        specials = SpecialTokenSet()
    specials.check_against(table)
    return table, specials


def _write(out_path, data: bytes):
    if out_path:
        with open(out_path, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _special_id(specials: SpecialTokenSet, token: str | None, flag: str):
    if token is None:
        return None
    tid = specials.id_of(token)
    if tid is None:
        raise UsageError(f"{flag} {token!r} is not a known special token")
    return tid


def cmd_tokenize(args) -> int:
    table, specials = _load(args)
    inputs = _read_input(args.input, args.whole)
    pad_id = args.pad_id
    if pad_id is None and args.out == "jsonl" and args.eos_token is None and len(specials) != 1:
        pad_id = 0  # JSON-lines rows are written unpadded
    enc = encode_batch(
        inputs,
        table,
        specials,
        BlockConfig(args.block_size),
        pad_id=pad_id,
        add_bos=args.bos,
        add_eos=args.eos,
        bos_id=_special_id(specials, args.bos_token, "--bos-token"),
        eos_id=_special_id(specials, args.eos_token, "--eos-token"),
        max_len=args.max_len,
        engine=args.engine,
        n_workers=args.workers,
    )
    if enc.truncated:
        logging.getLogger("blockbpe").warning("%d rows truncated to %d tokens", enc.truncated, args.max_len)
    _write(args.output, enc.to_bin() if args.out == "bin" else enc.to_jsonl().encode("utf-8"))
    return EXIT_OK


def cmd_compare(args) -> int:
    table, specials = _load(args)
    inputs = [x for x in _read_input(args.input, args.whole) if x]
    report = divergence_report(inputs, table, specials, args.pattern, BlockConfig(args.block_size))
    text = report.to_json() + "\n" if args.json else report.to_text(table)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    def read(path):
        try:
            with open(path, "rb") as fh:
                return fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc

    refs = read_jsonl_ids(read(args.refs))
    cands = read_jsonl_ids(read(args.cands))
    try:
        lens = [int(x) for x in read(args.source_lens).split()]
    except ValueError as exc:
        raise UsageError(f"--source-lens must hold one integer per line: {exc}") from None
    report = similarity(refs, cands, lens)
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_text())
    return EXIT_OK


def cmd_bench(args) -> int:
    """The config may carry ``vocab``/``merges``/``format``/``specials`` next to
    the :class:`BenchConfig` fields; command-line flags take precedence."""
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read bench config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"bench config {args.config} is not JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("bench config must be a JSON object")
    base = os.path.dirname(os.path.abspath(args.config))

    def rel(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    args.vocab = args.vocab or rel(raw.pop("vocab", None))
    args.merges = args.merges or rel(raw.pop("merges", None))
    args.format = args.format or raw.pop("format", "gpt2")
    args.specials = args.specials or rel(raw.pop("specials", None))
    raw.pop("format", None)
    if not args.vocab:
        raise UsageError("bench needs --vocab or a 'vocab' key in the config")
    if args.workers is not None:
        raw["workers"] = args.workers
    config = BenchConfig.from_dict(raw, base)
    table, specials = _load(args)
    rows = run_benchmark(config, table, specials)
    _write(args.output, emit_report(rows, args.report))
    return EXIT_OK


COMMANDS = {"tokenize": cmd_tokenize, "compare": cmd_compare, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"blockbpe {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BPEError as exc:
        print(f"blockbpe {args.command}: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (OSError, json.JSONDecodeError) as exc:
        print(f"blockbpe {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

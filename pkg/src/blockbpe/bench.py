"""Throughput sweeps over engine x block size x batch size x sequence length."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .batch import encode_batch, encode_rows, worker_threads
from .block import BlockConfig, coarsening_factor
from .exceptions import EngineMismatch, UsageError
from .pretokenize import bytes_to_initial_tokens, split_specials
from .reference import heap_bpe, naive_bpe
from .vocab import MergeTable, SpecialTokenSet

log = logging.getLogger(__name__)

BENCH_ENGINES = ("naive", "heap", "block")
CSV_HEADER = (
    "engine",
    "block_size",
    "batch_size",
    "seq_len",
    "wall_time_s",
    "bytes_per_s",
    "tokens_per_s",
    "passes_mean",
    "d",
)


@dataclass
class BenchConfig:
    corpus_path: str
    batch_sizes: list[int]
    seq_lens: list[int]
    block_sizes: list[int] = field(default_factory=lambda: [256, 512, 1024])
    engines: list[str] = field(default_factory=lambda: ["block"])
    repetitions: int = 5
    warmup: int = 1
    workers: int | None = None
    merges_only: bool = False

    def __post_init__(self):
        for name in ("batch_sizes", "seq_lens", "block_sizes", "engines"):
            if not getattr(self, name):
                raise UsageError(f"{name} must be non-empty")
        for name in ("batch_sizes", "seq_lens", "block_sizes"):
            if any(int(v) < 1 for v in getattr(self, name)):
                raise UsageError(f"{name} must be positive")
        unknown = set(self.engines) - set(BENCH_ENGINES)
        if unknown:
            raise UsageError(f"unknown engines {sorted(unknown)}")
        if self.repetitions < 3:
            raise UsageError("repetitions must be >= 3")
        if self.warmup < 1:
            raise UsageError("warmup must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | None = None) -> "BenchConfig":
        """Build from a JSON object; a relative ``corpus_path`` is resolved against ``base_dir``."""
        extra = set(obj) - set(cls.__dataclass_fields__)
        if extra:
            raise UsageError(f"unknown bench config keys {sorted(extra)}")
        if "corpus_path" not in obj:
            raise UsageError("bench config needs 'corpus_path'")
        try:
            cfg = cls(**obj)
        except TypeError as exc:
            raise UsageError(f"bad bench config: {exc}") from None
        if base_dir and not os.path.isabs(cfg.corpus_path):
            cfg.corpus_path = os.path.join(base_dir, cfg.corpus_path)
        return cfg

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read bench config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"bench config {path} is not JSON: {exc}") from exc
        return cls.from_dict(obj, os.path.dirname(os.path.abspath(path)))


@dataclass
class BenchRow:
    engine: str
    block_size: int
    batch_size: int
    seq_len: int
    wall_time_median: float
    bytes_per_s: float
    tokens_per_s: float
    passes_mean: float
    d: int

    def as_record(self) -> dict:
        rec = asdict(self)
        rec["wall_time_s"] = rec.pop("wall_time_median")
        return {k: rec[k] for k in CSV_HEADER}


# --------------------------------------------------------------------------
# corpus


def _utf8_backoff(chunk: bytes) -> bytes:
    """Drop a multi-byte UTF-8 sequence cut off at the end of ``chunk`` (at most 3 bytes)."""
    for i in range(1, min(3, len(chunk)) + 1):
        b = chunk[-i]
        if b < 0x80:
            return chunk
        if b >= 0xC0:
            need = 2 if b < 0xE0 else 3 if b < 0xF0 else 4
            return chunk[:-i] if i < need else chunk
    return chunk


def ingest_corpus(path, seq_len: int, batch_size: int) -> list[bytes]:
    """Cut ``batch_size`` consecutive chunks of ``seq_len`` bytes from a file.

    Reading wraps to the start of the file when it runs out, so a file
    shorter than ``seq_len`` is repeated within a chunk.  A chunk that
    would end inside a multi-byte UTF-8 character is shortened by up to 3
    bytes and the next chunk starts at the cut.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read corpus {path}: {exc.strerror or exc}") from exc
    if not data:
        raise UsageError(f"corpus {path} is empty")
    if seq_len < 1 or batch_size < 0:
        raise UsageError("seq_len must be >= 1 and batch_size >= 0")
    size = len(data)
    ring = data * (seq_len // size + 2)
    chunks = []
    pos = 0
    for _ in range(batch_size):
        chunk = _utf8_backoff(ring[pos : pos + seq_len])
        if not chunk:
            chunk = ring[pos : pos + seq_len]
        chunks.append(chunk)
        pos = (pos + len(chunk)) % size
    return chunks


# --------------------------------------------------------------------------
# occupancy


def occupancy_estimate(block_size: int, sm_count: int = 114, max_threads_per_sm: int = 1024) -> int:
    """Blocks resident at once: ``sm_count * (max_threads_per_sm // block_size)``.

    A planning number only; nothing schedules by it.
    """
    if block_size < 1 or sm_count < 1 or max_threads_per_sm < 1:
        raise UsageError("block_size, sm_count and max_threads_per_sm must be positive")
    if block_size > max_threads_per_sm:
        raise UsageError(f"block_size {block_size} exceeds {max_threads_per_sm} threads per SM")
    return sm_count * (max_threads_per_sm // block_size)


# --------------------------------------------------------------------------
# timing


def _minimize(data: bytes, same) -> bytes:
    """Shrink ``data`` while ``same(candidate)`` stays False (greedy chunk removal)."""
    step = max(1, len(data) // 2)
    while step >= 1:
        i = 0
        shrunk = False
        while i < len(data):
            cand = data[:i] + data[i + step :]
            if cand and not same(cand):
                data = cand
                shrunk = True
            else:
                i += step
        if not shrunk:
            step //= 2
    return data


def _engine_variants(config: BenchConfig) -> list[tuple[str, int]]:
    out = []
    for engine in sorted(set(config.engines)):
        if engine == "block":
            out.extend(("block", int(b)) for b in sorted(set(config.block_sizes)))
        else:
            # sequential engines run as a single logical thread
            out.append((engine, 1))
    return out


def correctness_gate(inputs: list[bytes], table: MergeTable, specials, variants) -> list[list[int]]:
    """Every engine variant must produce identical ids on every input."""
    outputs = {}
    for engine, bs in variants:
        outputs[(engine, bs)] = encode_rows(inputs, table, specials, engine, BlockConfig(bs))
    base_key = variants[0]
    base = outputs[base_key]
    for key in variants[1:]:
        for i, (x, y) in enumerate(zip(base, outputs[key])):
            if x == y:
                continue

            def agree(data, a=base_key, b=key):
                ra = encode_rows([data], table, specials, a[0], BlockConfig(a[1]))
                rb = encode_rows([data], table, specials, b[0], BlockConfig(b[1]))
                return ra == rb

            small = _minimize(inputs[i], agree)
            ra = encode_rows([small], table, specials, base_key[0], BlockConfig(base_key[1]))[0]
            rb = encode_rows([small], table, specials, key[0], BlockConfig(key[1]))[0]
            raise EngineMismatch((f"{base_key[0]}/{base_key[1]}", f"{key[0]}/{key[1]}"), small, (ra, rb))
    return base


def _merge_only_runner(engine, inputs, table, specials, block_size, workers):
    pieces = []
    for data in inputs:
        for seg in split_specials(data, specials):
            if not seg.is_special:
                pieces.append(bytes_to_initial_tokens(seg, table))
    if engine == "block":
        starts = np.zeros(len(pieces) + 1, dtype=np.int64)
        np.cumsum([p.size for p in pieces], out=starts[1:])
        flat = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
        k = len(pieces)

        def run():
            tokens = flat.copy()
            out_len = np.zeros(k, dtype=np.int64)
            out_passes = np.zeros(k, dtype=np.int64)
            out_status = np.zeros(k, dtype=np.int64)
            with worker_threads(workers):
                _kernels.block_bpe_rows(tokens, starts, *table.kernel_args, block_size, 0, out_len, out_passes, out_status)

        return run
    fn = naive_bpe if engine == "naive" else heap_bpe
    lists = [p.tolist() for p in pieces]

    def run():
        for p in lists:
            fn(p, table)

    return run


def time_callable(fn, repetitions: int, warmup: int) -> list[float]:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def _passes(engine, inputs, table, specials, block_size) -> float:
    """Mean merge passes per sequence (one merge per pass for sequential engines)."""
    if not inputs:
        return 0.0
    if engine == "block":
        total = 0
        for data in inputs:
            for seg in split_specials(data, specials):
                if seg.is_special:
                    continue
                ids = bytes_to_initial_tokens(seg, table)
                n = ids.size
                tr = np.empty(max(n, 1), dtype=np.int64)
                tm = np.empty(max(n, 1), dtype=np.int64)
                _, passes, _ = _kernels.block_bpe_kernel(ids.copy(), *table.kernel_args, block_size, max(n, 1), tr, tm)
                total += passes
        return total / len(inputs)
    total = 0
    for data in inputs:
        for seg in split_specials(data, specials):
            if not seg.is_special:
                n = len(seg.data)
                total += n - len(heap_bpe(bytes_to_initial_tokens(seg, table).tolist(), table))
    return total / len(inputs)


def run_benchmark(config: BenchConfig, table: MergeTable, specials: SpecialTokenSet | None = None) -> list[BenchRow]:
    """Time every cell of the sweep after checking that all engines agree on it."""
    variants = _engine_variants(config)
    rows = []
    for batch_size, seq_len in itertools.product(sorted(set(config.batch_sizes)), sorted(set(config.seq_lens))):
        inputs = ingest_corpus(config.corpus_path, seq_len, batch_size)
        outputs = correctness_gate(inputs, table, specials, variants)
        total_bytes = sum(len(x) for x in inputs)
        total_tokens = sum(len(x) for x in outputs)
        for engine, bs in variants:
            if config.merges_only:
                fn = _merge_only_runner(engine, inputs, table, specials, bs, config.workers)
            else:

                def fn(engine=engine, bs=bs):
                    encode_batch(inputs, table, specials, BlockConfig(bs), pad_id=0, engine=engine, n_workers=config.workers)

            times = time_callable(fn, config.repetitions, config.warmup)
            med = statistics.median(times)
            log.info("%s bs=%d batch=%d seq=%d median %.6fs", engine, bs, batch_size, seq_len, med)
            rows.append(
                BenchRow(
                    engine=engine,
                    block_size=bs,
                    batch_size=batch_size,
                    seq_len=seq_len,
                    wall_time_median=med,
                    bytes_per_s=total_bytes / med if med > 0 else float("inf"),
                    tokens_per_s=total_tokens / med if med > 0 else float("inf"),
                    passes_mean=_passes(engine, inputs, table, specials, bs),
                    d=coarsening_factor(seq_len, bs),
                )
            )
    rows.sort(key=lambda r: (r.engine, r.block_size, r.batch_size, r.seq_len))
    return rows


def measure_scaling(
    inputs: list[bytes],
    table: MergeTable,
    specials: SpecialTokenSet | None = None,
    workers: tuple[int, ...] = (1, 8),
    block_size: int = 256,
    repetitions: int = 5,
    warmup: int = 1,
) -> dict[int, float]:
    """Block-engine batch throughput (bytes/s) at each worker count."""
    total = sum(len(x) for x in inputs)
    out = {}
    for w in workers:

        def fn(w=w):
            encode_batch(inputs, table, specials, BlockConfig(block_size), pad_id=0, n_workers=w)

        out[w] = total / statistics.median(time_callable(fn, repetitions, warmup))
    return out


def emit_report(rows: list[BenchRow], format: str = "csv") -> bytes:
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            rec = row.as_record()
            writer.writerow([rec[k] for k in CSV_HEADER])
        return buf.getvalue().encode("utf-8")
    if format == "json":
        return json.dumps([row.as_record() for row in rows], indent=2).encode("utf-8")
    raise UsageError(f"unknown report format {format!r}; expected csv or json")

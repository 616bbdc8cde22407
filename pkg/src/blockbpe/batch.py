"""Batch encoding: one block per sequence, padded id matrices, serialisation."""

from __future__ import annotations

import contextlib
import io
import json
import os
import struct
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from . import _kernels
from .block import BlockConfig, block_bpe
from .exceptions import BatchRowError, BPEError, DecodeError, MaxPassesExceeded, ParseError, UsageError
from .pretokenize import bytes_to_initial_tokens, split_specials
from .reference import encode_reference
from .vocab import MergeTable, SpecialTokenSet, decode

ENGINES = ("naive", "heap", "block")
BIN_MAGIC = b"BBPE"
_BIN_HEADER = struct.Struct("<4sIII")
WORKERS_ENV = "BLOCKBPE_WORKERS"


def resolve_workers(n_workers: int | None = None) -> int:
    """Worker count: explicit value, else ``$BLOCKBPE_WORKERS``, else every available thread.

    The result is clamped to the threads numba was started with
    (``NUMBA_NUM_THREADS``).
    """
    if n_workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                n_workers = int(env)
            except ValueError:
                raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    limit = numba.config.NUMBA_NUM_THREADS
    if n_workers is None:
        return limit
    if n_workers < 1:
        raise UsageError(f"worker count must be >= 1, got {n_workers}")
    return min(n_workers, limit)


@contextlib.contextmanager
def worker_threads(n_workers: int | None):
    previous = numba.get_num_threads()
    numba.set_num_threads(resolve_workers(n_workers))
    try:
        yield
    finally:
        numba.set_num_threads(previous)


def _check_inputs(inputs) -> list[bytes]:
    if inputs is None:
        raise UsageError("inputs must be a list of byte strings, got None")
    if isinstance(inputs, (bytes, str)):
        raise UsageError("inputs must be a list of byte strings, not a single string")
    out = []
    for row, item in enumerate(inputs):
        if isinstance(item, str):
            item = item.encode("utf-8")
        elif isinstance(item, (bytearray, memoryview)):
            item = bytes(item)
        elif not isinstance(item, bytes):
            raise UsageError(f"row {row}: expected bytes or str, got {type(item).__name__}")
        out.append(item)
    return out


def encode(
    data: bytes | str,
    table: MergeTable,
    specials: SpecialTokenSet | None = None,
    engine: str = "block",
    config: BlockConfig | None = None,
) -> list[int]:
    """Byte-level encode one string with the chosen engine."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    if engine == "block":
        out: list[int] = []
        for seg in split_specials(data, specials):
            if seg.is_special:
                out.append(seg.special_id)
            else:
                out.extend(block_bpe(bytes_to_initial_tokens(seg, table), table, config))
        return out
    if engine in ("naive", "heap"):
        return encode_reference(data, table, specials, pre="byte_level", engine=engine)
    raise UsageError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def _encode_rows_block(rows: list[bytes], table, specials, config, n_workers) -> list[list[int]]:
    """Fan every literal segment of every row out to the parallel row kernel."""
    plan: list[list[tuple[str, int]]] = []  # per row: ("lit", segment index) or ("sp", id)
    pieces: list[np.ndarray] = []
    for r, data in enumerate(rows):
        items = []
        try:
            for seg in split_specials(data, specials):
                if seg.is_special:
                    items.append(("sp", seg.special_id))
                else:
                    items.append(("lit", len(pieces)))
                    pieces.append(bytes_to_initial_tokens(seg, table))
        except BPEError as exc:
            raise BatchRowError(r, exc) from exc
        plan.append(items)

    lengths = np.array([p.size for p in pieces], dtype=np.int64)
    starts = np.zeros(len(pieces) + 1, dtype=np.int64)
    np.cumsum(lengths, out=starts[1:])
    tokens = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    out_len = np.zeros(len(pieces), dtype=np.int64)
    out_passes = np.zeros(len(pieces), dtype=np.int64)
    out_status = np.zeros(len(pieces), dtype=np.int64)
    max_passes = config.max_passes if config.max_passes is not None else 0
    if pieces:
        with worker_threads(n_workers):
            _kernels.block_bpe_rows(
                tokens, starts, *table.kernel_args, config.block_size, max_passes, out_len, out_passes, out_status
            )

    result = []
    for r, items in enumerate(plan):
        row: list[int] = []
        for kind, value in items:
            if kind == "sp":
                row.append(value)
                continue
            status = out_status[value]
            seg = tokens[starts[value] : starts[value] + out_len[value]]
            if status == _kernels.ERR_MAX_PASSES:
                raise BatchRowError(r, MaxPassesExceeded(seg.tolist(), int(out_passes[value])))
            if status != _kernels.OK:
                raise BatchRowError(r, BPEError("a flagged pair is not in the merge table"))
            row.extend(seg.tolist())
        result.append(row)
    return result


def encode_rows(
    inputs: Sequence[bytes | str],
    table: MergeTable,
    specials: SpecialTokenSet | None = None,
    engine: str = "block",
    config: BlockConfig | None = None,
    n_workers: int | None = None,
) -> list[list[int]]:
    """Encode each input; returns unpadded id lists in input order."""
    rows = _check_inputs(inputs)
    config = config or BlockConfig()
    if engine == "block":
        return _encode_rows_block(rows, table, specials, config, n_workers)
    if engine not in ENGINES:
        raise UsageError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    out = []
    for r, data in enumerate(rows):
        try:
            out.append(encode(data, table, specials, engine, config))
        except BPEError as exc:
            raise BatchRowError(r, exc) from exc
    return out


@dataclass
class BatchEncoding:
    """Right-padded id matrix with per-row lengths and a 0/1 attention mask."""

    ids: np.ndarray
    lengths: np.ndarray
    mask: np.ndarray
    pad_id: int
    truncated: int = 0

    @property
    def batch_size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.ids.shape[1])

    def __len__(self):
        return self.batch_size

    def rows(self) -> list[list[int]]:
        return [self.ids[r, : self.lengths[r]].tolist() for r in range(self.batch_size)]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]], pad_id: int | None, max_len: int | None = None) -> "BatchEncoding":
        truncated = 0
        if max_len is not None:
            if max_len < 0:
                raise UsageError("max_len must be non-negative")
            clipped = []
            for row in rows:
                if len(row) > max_len:
                    truncated += 1
                    row = row[:max_len]
                clipped.append(row)
            rows = clipped
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        width = max_len if max_len is not None else (int(lengths.max()) if len(rows) else 0)
        if pad_id is None:
            if (lengths < width).any():
                raise UsageError("rows need padding but no pad_id was given and no EOS token is known")
            pad_id = 0
        ids = np.full((len(rows), width), pad_id, dtype=np.int64)
        for r, row in enumerate(rows):
            ids[r, : len(row)] = row
        mask = (np.arange(width)[None, :] < lengths[:, None]).astype(np.uint8)
        return cls(ids=ids, lengths=lengths, mask=mask, pad_id=int(pad_id), truncated=truncated)

    # -- serialisation ------------------------------------------------------

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        for r in range(self.batch_size):
            n = int(self.lengths[r])
            buf.write(json.dumps({"ids": self.ids[r, :n].tolist(), "len": n}))
            buf.write("\n")
        return buf.getvalue()

    def to_bin(self) -> bytes:
        """``BBPE`` magic, u32 batch, u32 max_len, u32 pad_id, then row-major u32 ids (little-endian)."""
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() > 0xFFFFFFFF):
            raise UsageError("ids do not fit in u32")
        if not 0 <= self.pad_id <= 0xFFFFFFFF:
            raise UsageError("pad_id does not fit in u32")
        header = _BIN_HEADER.pack(BIN_MAGIC, self.batch_size, self.max_len, self.pad_id)
        return header + self.ids.astype("<u4").tobytes()

    @classmethod
    def from_jsonl(cls, text: str | bytes, pad_id: int = 0) -> "BatchEncoding":
        return cls.from_rows(read_jsonl_ids(text), pad_id)

    @classmethod
    def from_bin(cls, data: bytes) -> "BatchEncoding":
        """Inverse of :meth:`to_bin`.

        The binary layout carries no lengths, so each row's length is taken
        as the position after its last non-pad id.
        """
        if len(data) < _BIN_HEADER.size:
            raise ParseError("binary batch shorter than its header")
        magic, batch, width, pad_id = _BIN_HEADER.unpack_from(data)
        if magic != BIN_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {BIN_MAGIC!r}")
        expected = _BIN_HEADER.size + 4 * batch * width
        if len(data) != expected:
            raise ParseError(f"binary batch is {len(data)} bytes, header implies {expected}")
        ids = np.frombuffer(data, dtype="<u4", offset=_BIN_HEADER.size).astype(np.int64).reshape(batch, width)
        real = ids != pad_id
        lengths = np.where(real.any(axis=1), width - np.argmax(real[:, ::-1], axis=1), 0).astype(np.int64)
        mask = (np.arange(width)[None, :] < lengths[:, None]).astype(np.uint8)
        return cls(ids=ids, lengths=lengths, mask=mask, pad_id=int(pad_id))


def read_jsonl_ids(text: str | bytes) -> list[list[int]]:
    """Parse JSON-lines rows of the form ``{"ids": [...]}`` (other keys ignored)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            ids = [int(v) for v in obj["ids"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad ids row: {exc}", line=lineno) from None
        rows.append(ids)
    return rows


def encode_batch(
    inputs: Sequence[bytes | str],
    table: MergeTable,
    specials: SpecialTokenSet | None = None,
    config: BlockConfig | None = None,
    pad_id: int | None = None,
    add_bos: bool = False,
    add_eos: bool = False,
    *,
    bos_id: int | None = None,
    eos_id: int | None = None,
    max_len: int | None = None,
    engine: str = "block",
    n_workers: int | None = None,
) -> BatchEncoding:
    """Encode a list of strings into a padded :class:`BatchEncoding`.

    Rows are independent and may run on parallel workers; the result is the
    same as encoding each row alone.  ``pad_id`` defaults to ``eos_id``.
    When ``specials`` holds a single token it is used as the default BOS and
    EOS.  ``max_len`` truncates long rows from the right and counts them in
    ``truncated``.
    """
    if specials is not None and len(specials) == 1:
        (only,) = specials.ids
        bos_id = only if bos_id is None else bos_id
        eos_id = only if eos_id is None else eos_id
    if add_bos and bos_id is None:
        raise UsageError("add_bos needs a bos_id")
    if add_eos and eos_id is None:
        raise UsageError("add_eos needs an eos_id")
    if pad_id is None:
        pad_id = eos_id

    rows = encode_rows(inputs, table, specials, engine, config, n_workers)
    if add_bos or add_eos:
        rows = [([bos_id] if add_bos else []) + row + ([eos_id] if add_eos else []) for row in rows]
    return BatchEncoding.from_rows(rows, pad_id, max_len)


def decode_batch(
    encoding: BatchEncoding,
    table: MergeTable,
    specials: SpecialTokenSet | None = None,
    skip_specials: bool = False,
) -> list[bytes]:
    out = []
    special_ids = specials.ids if specials else frozenset()
    for r in range(encoding.batch_size):
        row = encoding.ids[r, : encoding.lengths[r]].tolist()
        keep = [c for c, t in enumerate(row) if not (skip_specials and t in special_ids)]
        try:
            out.append(decode(table, specials, [row[c] for c in keep]))
        except DecodeError as exc:
            col = keep[exc.index]
            raise DecodeError(
                f"unknown token id {exc.token_id} at row {r}, column {col}",
                index=col,
                token_id=exc.token_id,
                row=r,
            ) from None
    return out

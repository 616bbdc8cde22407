"""Merge tables, special tokens and the on-disk formats they are read from.

Two formats are understood:

``gpt2``
    a ``vocab.json`` mapping token strings to ids plus a ``merges.txt`` with
    one ``left right`` pair per line.  Token strings are spelled with the
    printable-codepoint alphabet that GPT-2 style files use for raw bytes.

``canonical_json``
    a single JSON object carrying raw byte values directly::

        {"tokens": [[id, [byte, ...]], ...],
         "merges": [[rank, left_id, right_id, merged_id], ...],
         "specials": [[string, id], ...]}
"""

from __future__ import annotations

import io
import json
import os
from functools import lru_cache
from typing import BinaryIO, Iterable, Mapping, Sequence, Union

import numpy as np

from . import _kernels
from .exceptions import DecodeError, IntegrityError, ParseError, UsageError

Source = Union[str, os.PathLike, bytes, BinaryIO]
Pair = tuple[int, int]

FORMATS = ("gpt2", "canonical_json")
ABSENT = -1


@lru_cache(maxsize=None)
def bytes_to_unicode() -> dict[int, str]:
    """Return the fixed byte -> printable character map used by GPT-2 files.

    Bytes that are already printable (33-126, 161-172, 174-255) keep their own
    codepoint; the remaining 68 bytes are assigned 256, 257, ... in ascending
    byte order.
    """
    printable = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    mapping = {b: chr(b) for b in printable}
    extra = 0
    for b in range(256):
        if b not in mapping:
            mapping[b] = chr(256 + extra)
            extra += 1
    return mapping


@lru_cache(maxsize=None)
def unicode_to_bytes() -> dict[str, int]:
    return {c: b for b, c in bytes_to_unicode().items()}


def gpt2_string_to_bytes(token: str) -> bytes:
    table = unicode_to_bytes()
    try:
        return bytes(table[c] for c in token)
    except KeyError as exc:
        raise ParseError(f"character {exc.args[0]!r} in token {token!r} is not a byte symbol")


def bytes_to_gpt2_string(data: bytes) -> str:
    table = bytes_to_unicode()
    return "".join(table[b] for b in data)


class MergeTable:
    """Immutable BPE merge table.

    Holds the pair -> rank and pair -> merged-token maps together with every
    token's surface bytes.  The pair maps are mirrored into an open-addressing
    hash table over packed pair keys so compiled kernels, and
    :meth:`lookup` on whole arrays, can probe it without Python dicts.

    Use :func:`load_merge_table` or :meth:`from_merges` to build one; the
    constructor validates every invariant and raises :class:`IntegrityError`.
    """

    __slots__ = (
        "pair_rank",
        "pair_merged",
        "token_bytes",
        "base_size",
        "byte_ids",
        "_bytes_to_id",
        "_stride",
        "_hash",
        "_rank_pairs",
    )

    def __init__(
        self,
        token_bytes: Mapping[int, bytes],
        merges: Iterable[tuple[int, int, int, int]],
        base_size: int | None = None,
    ):
        tb = {int(k): bytes(v) for k, v in token_bytes.items()}
        if any(k < 0 for k in tb):
            raise IntegrityError("token ids must be non-negative")
        bytes_to_id: dict[bytes, int] = {}
        for tid, data in tb.items():
            if data in bytes_to_id:
                raise IntegrityError(
                    f"tokens {bytes_to_id[data]} and {tid} share surface bytes {data!r}"
                )
            bytes_to_id[data] = tid

        pair_rank: dict[Pair, int] = {}
        pair_merged: dict[Pair, int] = {}
        rank_pairs: dict[int, Pair] = {}
        for rank, left, right, merged in merges:
            pair = (int(left), int(right))
            rank = int(rank)
            if rank < 0:
                raise IntegrityError(f"negative rank {rank} for pair {pair}")
            if pair in pair_rank:
                raise IntegrityError(f"duplicate merge pair {pair} (ranks {pair_rank[pair]} and {rank})")
            if rank in rank_pairs:
                raise IntegrityError(f"duplicate rank {rank} for pairs {rank_pairs[rank]} and {pair}")
            for tid in (pair[0], pair[1], int(merged)):
                if tid not in tb:
                    raise IntegrityError(f"merge pair {pair} references unknown token {tid}")
            if tb[int(merged)] != tb[pair[0]] + tb[pair[1]]:
                raise IntegrityError(
                    f"merge pair {pair} -> {merged}: {tb[int(merged)]!r} is not "
                    f"{tb[pair[0]]!r} + {tb[pair[1]]!r}"
                )
            pair_rank[pair] = rank
            pair_merged[pair] = int(merged)
            rank_pairs[rank] = pair

        single = {data[0]: tid for data, tid in bytes_to_id.items() if len(data) == 1}
        if base_size is None:
            base_size = len(single)
        if base_size == 256 and len(single) != 256:
            missing = sorted(set(range(256)) - set(single))
            raise IntegrityError(f"byte-level table lacks single-byte tokens for {missing[:8]}")

        byte_ids = np.full(256, ABSENT, dtype=np.int64)
        for b, tid in single.items():
            byte_ids[b] = tid

        stride = (max(tb) + 1) if tb else 1
        if pair_rank:
            pairs = np.array(list(pair_rank), dtype=np.int64)
            keys = pairs[:, 0] * stride + pairs[:, 1]
            ranks = np.fromiter(pair_rank.values(), dtype=np.int64, count=len(pair_rank))
            merged_ids = np.fromiter(pair_merged.values(), dtype=np.int64, count=len(pair_merged))
        else:
            keys = ranks = merged_ids = np.zeros(0, dtype=np.int64)
        bits = max(4, int(2 * len(pair_rank) - 1).bit_length())
        hkeys, hranks, hmerged = _kernels.build_pair_hash(keys, ranks, merged_ids, bits)

        for arr in (byte_ids, hkeys, hranks, hmerged):
            arr.setflags(write=False)

        s = object.__setattr__
        s(self, "token_bytes", tb)
        s(self, "pair_rank", pair_rank)
        s(self, "pair_merged", pair_merged)
        s(self, "base_size", int(base_size))
        s(self, "byte_ids", byte_ids)
        s(self, "_bytes_to_id", bytes_to_id)
        s(self, "_stride", stride)
        s(self, "_hash", (hkeys, hranks, hmerged, bits))
        s(self, "_rank_pairs", rank_pairs)

    def __setattr__(self, name, value):
        raise AttributeError("MergeTable is immutable")

    def __reduce__(self):
        merges = [(r, a, b, self.pair_merged[(a, b)]) for (a, b), r in self.pair_rank.items()]
        return (MergeTable, (self.token_bytes, merges, self.base_size))

    def __eq__(self, other):
        if not isinstance(other, MergeTable):
            return NotImplemented
        return (
            self.token_bytes == other.token_bytes
            and self.pair_rank == other.pair_rank
            and self.pair_merged == other.pair_merged
            and self.base_size == other.base_size
        )

    __hash__ = None

    def __len__(self):
        return len(self.token_bytes)

    def __repr__(self):
        return f"MergeTable(tokens={len(self.token_bytes)}, merges={len(self.pair_rank)}, base_size={self.base_size})"

    @classmethod
    def from_merges(cls, token_bytes, merges, base_size=None) -> "MergeTable":
        return cls(token_bytes, merges, base_size)

    @property
    def n_merges(self) -> int:
        return len(self.pair_rank)

    def rank_of(self, pair: Pair) -> int | None:
        return self.pair_rank.get(pair)

    def merged_of(self, pair: Pair) -> int | None:
        return self.pair_merged.get(pair)

    def pair_at_rank(self, rank: int) -> Pair | None:
        return self._rank_pairs.get(rank)

    def id_of_bytes(self, data: bytes) -> int | None:
        return self._bytes_to_id.get(data)

    def lookup(self, left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised rank and merged-id lookup for arrays of pairs.

        Returns ``(ranks, merged)``; both hold ``ABSENT`` (-1) where the pair
        is not a merge.  Ids outside the table (special tokens) never match.
        """
        left = np.ascontiguousarray(left, dtype=np.int64).reshape(-1)
        right = np.ascontiguousarray(right, dtype=np.int64).reshape(-1)
        ranks = np.empty(left.size, dtype=np.int64)
        merged = np.empty(left.size, dtype=np.int64)
        hkeys, hranks, hmerged, bits = self._hash
        _kernels.lookup_pairs(left, right, self._stride, hkeys, hranks, hmerged, bits, ranks, merged)
        return ranks, merged

    @property
    def kernel_args(self):
        """``(stride, hkeys, hranks, hmerged, bits)`` for the compiled kernels."""
        hkeys, hranks, hmerged, bits = self._hash
        return self._stride, hkeys, hranks, hmerged, bits

    def is_rank_ordered(self) -> bool:
        """True when every merge only combines tokens created by earlier merges.

        This holds for tables produced by BPE training and is what makes
        merging all occurrences of the minimum pair in one pass equivalent to
        merging them one at a time.
        """
        created = {m: self.pair_rank[p] for p, m in self.pair_merged.items()}
        for (a, b), rank in self.pair_rank.items():
            if created.get(a, -1) >= rank or created.get(b, -1) >= rank:
                return False
        return True


class SpecialTokenSet:
    """Reserved byte strings matched before BPE and mapped to fixed ids.

    ``entries`` is ordered longest-first so a left-to-right scan can take the
    first hit as the longest match.
    """

    __slots__ = ("entries", "_by_id", "_first_bytes")

    def __init__(self, entries: Mapping[bytes | str, int] | Iterable[tuple[bytes | str, int]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        seen: dict[bytes, int] = {}
        for key, tid in items:
            data = key.encode("utf-8") if isinstance(key, str) else bytes(key)
            if not data:
                raise UsageError("special token byte string must be non-empty")
            if data in seen:
                raise UsageError(f"special token {data!r} listed twice")
            seen[data] = int(tid)
        ordered = dict(sorted(seen.items(), key=lambda kv: (-len(kv[0]), kv[0])))
        by_id: dict[int, bytes] = {}
        for data, tid in ordered.items():
            if tid in by_id:
                raise UsageError(f"special tokens {by_id[tid]!r} and {data!r} share id {tid}")
            by_id[tid] = data
        object.__setattr__(self, "entries", ordered)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_first_bytes", frozenset(d[0] for d in ordered))

    def __setattr__(self, name, value):
        raise AttributeError("SpecialTokenSet is immutable")

    def __reduce__(self):
        return (SpecialTokenSet, (list(self.entries.items()),))

    def __len__(self):
        return len(self.entries)

    def __bool__(self):
        return bool(self.entries)

    def __contains__(self, tid):
        return tid in self._by_id

    def __eq__(self, other):
        if not isinstance(other, SpecialTokenSet):
            return NotImplemented
        return self.entries == other.entries

    __hash__ = None

    def __repr__(self):
        return f"SpecialTokenSet({ {k.decode('utf-8', 'replace'): v for k, v in self.entries.items()} })"

    def bytes_of(self, tid: int) -> bytes | None:
        return self._by_id.get(tid)

    def id_of(self, data: bytes | str) -> int | None:
        if isinstance(data, str):
            data = data.encode("utf-8")
        return self.entries.get(data)

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(self._by_id)

    @property
    def first_bytes(self) -> frozenset[int]:
        return self._first_bytes

    def check_against(self, table: MergeTable) -> None:
        """Raise if a special id collides with a merge-derived token id."""
        derived = set(table.pair_merged.values())
        for data, tid in self.entries.items():
            if tid in derived:
                raise IntegrityError(f"special token {data!r} reuses merge-derived id {tid}")
            known = table.token_bytes.get(tid)
            if known is not None and known != data:
                raise IntegrityError(
                    f"special token {data!r} has id {tid}, which the table spells {known!r}"
                )


# --------------------------------------------------------------------------
# loading


def _read_source(source: Source) -> tuple[bytes, str]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source), "<bytes>"
    if isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        try:
            with open(path, "rb") as fh:
                return fh.read(), path
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    data = source.read()
    if isinstance(data, str):
        data = data.encode("utf-8")
    return data, getattr(source, "name", "<stream>")


def _parse_json(data: bytes, name: str):
    try:
        return json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", source=name) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, source=name, line=exc.lineno) from exc


def _load_gpt2(vocab_source: Source, merges_source: Source) -> MergeTable:
    vocab_data, vocab_name = _read_source(vocab_source)
    merges_data, merges_name = _read_source(merges_source)

    vocab = _parse_json(vocab_data, vocab_name)
    if not isinstance(vocab, dict):
        raise ParseError("vocab must be a JSON object of token string -> id", source=vocab_name)
    token_bytes: dict[int, bytes] = {}
    str_to_id: dict[str, int] = {}
    for token, tid in vocab.items():
        if not isinstance(tid, int) or isinstance(tid, bool):
            raise ParseError(f"id for token {token!r} is not an integer", source=vocab_name)
        if tid in token_bytes:
            raise IntegrityError(f"id {tid} assigned to more than one token")
        try:
            token_bytes[tid] = gpt2_string_to_bytes(token)
        except ParseError as exc:
            raise ParseError(str(exc), source=vocab_name) from None
        str_to_id[token] = tid

    try:
        text = merges_data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", source=merges_name) from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    start = 1 if lines and lines[0].startswith("#version") else 0

    merges = []
    for lineno in range(start, len(lines)):
        line = lines[lineno].rstrip("\r")
        parts = line.split(" ")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError(f"expected 'left right', got {line!r}", source=merges_name, line=lineno + 1)
        left, right = parts
        ids = []
        for piece in (left, right, left + right):
            tid = str_to_id.get(piece)
            if tid is None:
                raise IntegrityError(
                    f"{merges_name}:{lineno + 1}: merge pair ({left!r}, {right!r}) needs unknown token {piece!r}"
                )
            ids.append(tid)
        merges.append((lineno - start, ids[0], ids[1], ids[2]))
    return MergeTable(token_bytes, merges)


def _canonical_obj(source: Source):
    data, name = _read_source(source)
    obj = _parse_json(data, name)
    if not isinstance(obj, dict) or "tokens" not in obj:
        raise ParseError("canonical JSON needs a top-level object with 'tokens'", source=name)
    return obj, name


def _load_canonical(vocab_source: Source, merges_source: Source | None) -> MergeTable:
    obj, name = _canonical_obj(vocab_source)
    merges_obj = obj
    if merges_source is not None:
        data, merges_name = _read_source(merges_source)
        merges_obj = _parse_json(data, merges_name)
        if not isinstance(merges_obj, dict):
            raise ParseError("expected a JSON object with 'merges'", source=merges_name)
    token_bytes = {}
    for i, entry in enumerate(obj["tokens"]):
        try:
            tid, values = entry
            tid = int(tid)
            data = bytes(values)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad token entry #{i}: {entry!r} ({exc})", source=name) from None
        if tid in token_bytes:
            raise IntegrityError(f"token id {tid} listed twice")
        token_bytes[tid] = data
    merges = []
    for i, entry in enumerate(merges_obj.get("merges", [])):
        if not (isinstance(entry, list) and len(entry) == 4 and all(isinstance(v, int) for v in entry)):
            raise ParseError(f"bad merge entry #{i}: {entry!r}", source=name)
        merges.append(tuple(entry))
    return MergeTable(token_bytes, merges)


def load_merge_table(vocab_source: Source, merges_source: Source | None = None, format: str = "gpt2") -> MergeTable:
    """Load a :class:`MergeTable` from disk, bytes or an open binary stream.

    For ``format="canonical_json"`` the merges may live in the same document
    as the tokens, in which case ``merges_source`` can be omitted.
    """
    if format == "gpt2":
        if merges_source is None:
            raise UsageError("gpt2 format needs both a vocab and a merges source")
        return _load_gpt2(vocab_source, merges_source)
    if format in ("canonical_json", "json"):
        return _load_canonical(vocab_source, merges_source)
    raise UsageError(f"unknown table format {format!r}; expected one of {FORMATS}")


def load_specials(source: Source) -> SpecialTokenSet:
    """Read special tokens from JSON.

    Accepts an object ``{"<eos>": 50256}``, a list of ``[string, id]`` pairs,
    or a canonical-JSON table document carrying a ``"specials"`` key.
    """
    data, name = _read_source(source)
    obj = _parse_json(data, name)
    if isinstance(obj, dict) and "tokens" in obj:
        obj = obj.get("specials", [])
    if isinstance(obj, dict):
        return SpecialTokenSet(obj)
    if isinstance(obj, list):
        try:
            return SpecialTokenSet([(str(s), int(i)) for s, i in obj])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad specials list: {exc}", source=name) from None
    raise ParseError("specials must be a JSON object or a list of [string, id] pairs", source=name)


def dump_canonical_json(table: MergeTable, specials: SpecialTokenSet | None = None) -> str:
    tokens = [[tid, list(data)] for tid, data in sorted(table.token_bytes.items())]
    merges = sorted([r, a, b, table.pair_merged[(a, b)]] for (a, b), r in table.pair_rank.items())
    obj = {"tokens": tokens, "merges": merges}
    if specials:
        obj["specials"] = [[data.decode("utf-8"), tid] for data, tid in specials.entries.items()]
    out = io.StringIO()
    json.dump(obj, out, separators=(",", ":"))
    return out.getvalue()


# --------------------------------------------------------------------------
# queries


def rank_of(table: MergeTable, pair: Pair) -> int | None:
    return table.pair_rank.get(pair)


def decode(table: MergeTable, specials: SpecialTokenSet | None, ids: Sequence[int]) -> bytes:
    """Concatenate the surface bytes of ``ids``.

    Special ids are looked up in ``specials`` first so they decode even when
    the table does not list them.
    """
    out = bytearray()
    tb = table.token_bytes
    for index, tid in enumerate(ids):
        tid = int(tid)
        data = specials.bytes_of(tid) if specials else None
        if data is None:
            data = tb.get(tid)
        if data is None:
            raise DecodeError(f"unknown token id {tid} at index {index}", index=index, token_id=tid)
        out += data
    return bytes(out)

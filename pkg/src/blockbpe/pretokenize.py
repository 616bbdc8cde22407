"""Byte-level pre-tokenization, special-token splitting and the pattern splitter.

The block engine only ever sees the output of :func:`split_specials` and
:func:`bytes_to_initial_tokens`.  :func:`pattern_pretokenize` exists for the
sequential reference path and divergence studies.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import regex

from .exceptions import ConfigurationError, IntegrityError, UsageError
from .vocab import ABSENT, MergeTable, SpecialTokenSet

GPT2_PATTERN = r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""

# Llama-3 / cl100k style: case-insensitive contractions and digits in groups of at most three.
LLAMA3_PATTERN = (
    r"""(?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*"""
    r"""|\s*[\r\n]+|\s+(?!\S)|\s+"""
)

NAMED_PATTERNS = {"gpt2": GPT2_PATTERN, "llama3": LLAMA3_PATTERN}


@dataclass(frozen=True)
class Segment:
    kind: str  # "literal" or "special"
    data: bytes
    special_id: int | None = None

    def __post_init__(self):
        if self.kind == "literal":
            if not self.data:
                raise UsageError("literal segments must be non-empty")
            if self.special_id is not None:
                raise UsageError("literal segments carry no special id")
        elif self.kind == "special":
            if self.special_id is None:
                raise UsageError("special segments need an id")
        else:
            raise UsageError(f"unknown segment kind {self.kind!r}")

    @property
    def is_special(self) -> bool:
        return self.kind == "special"


def split_specials(data: bytes, specials: SpecialTokenSet | None) -> list[Segment]:
    """Cut ``data`` into literal runs and special-token hits.

    Scans left to right; at each offset the longest special byte string that
    matches is consumed.  Matches never overlap.
    """
    data = bytes(data)
    if not data:
        return []
    if not specials:
        return [Segment("literal", data)]

    entries = list(specials.entries.items())  # longest first
    first = specials.first_bytes
    out: list[Segment] = []
    lit_start = 0
    i = 0
    n = len(data)
    while i < n:
        hit = None
        if data[i] in first:
            for token, tid in entries:
                if data.startswith(token, i):
                    hit = (token, tid)
                    break
        if hit is None:
            i += 1
            continue
        if lit_start < i:
            out.append(Segment("literal", data[lit_start:i]))
        out.append(Segment("special", hit[0], hit[1]))
        i += len(hit[0])
        lit_start = i
    if lit_start < n:
        out.append(Segment("literal", data[lit_start:]))
    return out


def bytes_to_initial_tokens(segment: Segment | bytes, table: MergeTable) -> np.ndarray:
    """Map every byte of a literal segment to its single-byte token id."""
    if isinstance(segment, Segment):
        if segment.is_special:
            raise UsageError("special segments have no byte tokens")
        data = segment.data
    else:
        data = bytes(segment)
    if not data:
        return np.zeros(0, dtype=np.int64)
    ids = table.byte_ids[np.frombuffer(data, dtype=np.uint8)]
    if (ids == ABSENT).any():
        missing = sorted({data[i] for i in np.flatnonzero(ids == ABSENT)})
        raise IntegrityError(f"table has no single-byte token for byte values {missing}")
    return ids


@lru_cache(maxsize=32)
def compile_pattern(pattern: str):
    pattern = NAMED_PATTERNS.get(pattern, pattern)
    try:
        return regex.compile(pattern)
    except regex.error as exc:
        raise ConfigurationError(f"invalid splitter pattern {pattern!r}: {exc}") from exc


def pattern_pretokenize(data: bytes, pattern: str) -> list[bytes]:
    """Split ``data`` into chunks the way a regex pre-tokenizer would.

    ``pattern`` is either a regular expression (the pattern string published
    with the tokenizer being compared against) or one of the names in
    ``NAMED_PATTERNS``.  Input is decoded as UTF-8 with ``surrogateescape`` so
    arbitrary bytes survive; bytes the pattern does not cover are emitted as
    their own chunks, so the chunks always reassemble to the input.
    """
    compiled = compile_pattern(pattern)
    data = bytes(data)
    if not data:
        return []
    text = data.decode("utf-8", errors="surrogateescape")
    chunks: list[bytes] = []
    pos = 0
    for match in compiled.finditer(text):
        if not match.group():
            continue
        if match.start() > pos:
            chunks.append(text[pos : match.start()].encode("utf-8", "surrogateescape"))
        chunks.append(match.group().encode("utf-8", "surrogateescape"))
        pos = match.end()
    if pos < len(text):
        chunks.append(text[pos:].encode("utf-8", "surrogateescape"))
    return chunks

"""Tokenization-similarity metrics and byte-level vs pattern divergence reports."""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .batch import encode_rows
from .block import BlockConfig
from .exceptions import UsageError
from .reference import encode_reference
from .vocab import MergeTable, SpecialTokenSet

_PUNCT = frozenset(string.punctuation.encode())
_DIGITS = frozenset(string.digits.encode())

CATEGORIES = ("punct_run", "digit_run", "other")


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    """Unit-cost edit distance between two id sequences, using two rolling rows."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


@dataclass
class ItemSimilarity:
    source_len: int
    distance: int
    item_sim: float


@dataclass
class SimilarityReport:
    per_item: list[ItemSimilarity]
    aggregate_sim: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"{'item':>6} {'bytes':>8} {'d_L':>6} {'sim':>8}"]
        for i, item in enumerate(self.per_item):
            lines.append(f"{i:>6} {item.source_len:>8} {item.distance:>6} {item.item_sim:>8.4f}")
        lines.append(f"aggregate sim over {self.count} items: {self.aggregate_sim:.6f}")
        return "\n".join(lines) + "\n"


def similarity(
    references: Sequence[Sequence[int]],
    candidates: Sequence[Sequence[int]],
    source_lens: Sequence[int],
) -> SimilarityReport:
    """Mean over items of ``1 - d_L(reference, candidate) / source_bytes``."""
    if not (len(references) == len(candidates) == len(source_lens)):
        raise UsageError(
            f"length mismatch: {len(references)} references, {len(candidates)} candidates, "
            f"{len(source_lens)} source lengths"
        )
    items = []
    for i, (ref, cand, n) in enumerate(zip(references, candidates, source_lens)):
        if n < 1:
            raise UsageError(f"item {i}: source length must be >= 1, got {n}")
        d = levenshtein(ref, cand)
        items.append(ItemSimilarity(int(n), d, 1.0 - d / n))
    agg = sum(item.item_sim for item in items) / len(items) if items else 1.0
    return SimilarityReport(items, agg, len(items))


def divergence_category(data: bytes) -> str:
    """``punct_run`` for a repeated ASCII punctuation byte, ``digit_run`` for
    four or more consecutive ASCII digits, otherwise ``other``."""
    for x, y in zip(data, data[1:]):
        if x == y and x in _PUNCT:
            return "punct_run"
    run = 0
    for x in data:
        run = run + 1 if x in _DIGITS else 0
        if run >= 4:
            return "digit_run"
    return "other"


_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _show_token(data: bytes) -> str:
    out = []
    for ch in data.decode("utf-8", "surrogateescape"):
        if "\udc80" <= ch <= "\udcff":  # undecodable byte
            out.append(f"\\x{ord(ch) - 0xDC00:02x}")
        else:
            out.append(_ESCAPES.get(ch, ch))
    return "".join(out)


@dataclass
class DivergenceItem:
    source: bytes
    byte_level: list[int]
    pattern: list[int]
    differs: bool
    item_sim: float
    category: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source"] = self.source.decode("utf-8", "backslashreplace")
        return d


@dataclass
class DivergenceReport:
    items: list[DivergenceItem]
    aggregate_sim: float
    divergent: int
    by_category: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "count": len(self.items),
                "divergent": self.divergent,
                "aggregate_sim": self.aggregate_sim,
                "by_category": self.by_category,
                "items": [item.to_dict() for item in self.items],
            },
            indent=2,
        )

    def to_text(self, table: MergeTable | None = None) -> str:
        def show(ids):
            if table is None:
                return " ".join(map(str, ids))
            return "|".join(_show_token(table.token_bytes.get(t, b"?")) for t in ids)

        lines = []
        for item in self.items:
            mark = "DIFF" if item.differs else "same"
            lines.append(f"{mark}  {item.category:<10} sim={item.item_sim:.4f}  {item.source!r}")
            if item.differs:
                lines.append(f"      byte-level: {show(item.byte_level)}")
                lines.append(f"      pattern:    {show(item.pattern)}")
        lines.append(
            f"{self.divergent}/{len(self.items)} divergent, aggregate sim {self.aggregate_sim:.6f}, "
            + ", ".join(f"{k}={v}" for k, v in self.by_category.items())
        )
        return "\n".join(lines) + "\n"


def divergence_report(
    inputs: Sequence[bytes | str],
    table: MergeTable,
    specials: SpecialTokenSet | None = None,
    pattern: str = "gpt2",
    config: BlockConfig | None = None,
) -> DivergenceReport:
    """Compare the block engine (byte-level) with pattern pre-tokenization.

    The pattern side plays the reference role in the similarity metric.
    Divergent items are counted per :func:`divergence_category`.
    """
    data = [x.encode("utf-8") if isinstance(x, str) else bytes(x) for x in inputs]
    block_rows = encode_rows(data, table, specials, "block", config)
    items = []
    counts = {c: 0 for c in CATEGORIES}
    for src, bl in zip(data, block_rows):
        ref = encode_reference(src, table, specials, pre="pattern", pattern=pattern, engine="heap")
        differs = ref != bl
        sim = 1.0 - levenshtein(ref, bl) / len(src) if src else 1.0
        cat = divergence_category(src)
        if differs:
            counts[cat] += 1
        items.append(DivergenceItem(src, bl, ref, differs, sim, cat))
    agg = sum(i.item_sim for i in items) / len(items) if items else 1.0
    return DivergenceReport(items, agg, sum(counts.values()), counts)

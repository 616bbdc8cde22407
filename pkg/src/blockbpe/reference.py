"""Sequential reference engines.

``naive_bpe`` is the ground truth every other engine is tested against: one
merge of the left-most occurrence of the lowest-ranked pair per iteration.
``heap_bpe`` produces the same output in O(n log n) using a min-heap over
live adjacent pairs and a doubly linked token list.
"""

from __future__ import annotations

import heapq
from typing import Sequence

from .exceptions import UsageError
from .pretokenize import bytes_to_initial_tokens, pattern_pretokenize, split_specials
from .vocab import MergeTable, SpecialTokenSet


def naive_bpe(tokens: Sequence[int], table: MergeTable, trace: list | None = None) -> list[int]:
    """Merge until no adjacent pair has a rank.

    If ``trace`` is a list, one ``(rank, position)`` tuple is appended per
    merge performed.
    """
    seq = [int(t) for t in tokens]
    ranks = table.pair_rank
    while True:
        best_rank = None
        best_pos = -1
        for i in range(len(seq) - 1):
            r = ranks.get((seq[i], seq[i + 1]))
            # strict < keeps the left-most occurrence of the minimum
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
                best_pos = i
        if best_rank is None:
            return seq
        pair = (seq[best_pos], seq[best_pos + 1])
        seq[best_pos : best_pos + 2] = [table.pair_merged[pair]]
        if trace is not None:
            trace.append((best_rank, best_pos))


def heap_bpe(tokens: Sequence[int], table: MergeTable) -> list[int]:
    seq = [int(t) for t in tokens]
    n = len(seq)
    if n < 2:
        return seq
    ranks = table.pair_rank
    merged = table.pair_merged

    nxt = list(range(1, n + 1))
    nxt[-1] = -1
    prv = list(range(-1, n - 1))
    alive = [True] * n
    # bumped whenever the pair starting at a node changes; stale heap entries
    # carry an old stamp and are skipped on pop
    stamp = [0] * n

    heap = []
    for i in range(n - 1):
        r = ranks.get((seq[i], seq[i + 1]))
        if r is not None:
            heap.append((r, i, 0))
    heapq.heapify(heap)

    def push(i):
        j = nxt[i]
        if j < 0:
            return
        r = ranks.get((seq[i], seq[j]))
        if r is not None:
            heapq.heappush(heap, (r, i, stamp[i]))

    while heap:
        r, i, s = heapq.heappop(heap)
        if not alive[i] or s != stamp[i]:
            continue
        j = nxt[i]
        seq[i] = merged[(seq[i], seq[j])]
        alive[j] = False
        k = nxt[j]
        nxt[i] = k
        if k >= 0:
            prv[k] = i
        stamp[i] += 1
        push(i)
        p = prv[i]
        if p >= 0:
            stamp[p] += 1
            push(p)

    out = []
    i = 0
    while i >= 0:
        out.append(seq[i])
        i = nxt[i]
    return out


REFERENCE_ENGINES = {"naive": naive_bpe, "heap": heap_bpe}


def encode_reference(
    data: bytes,
    table: MergeTable,
    specials: SpecialTokenSet | None = None,
    pre: str = "byte_level",
    pattern: str = "gpt2",
    engine: str = "naive",
) -> list[int]:
    """Tokenize ``data`` with a sequential engine.

    ``pre="byte_level"`` runs BPE across each whole literal segment;
    ``pre="pattern"`` first cuts literals with ``pattern`` and merges inside
    each chunk independently.  Special tokens pass through as their ids.
    """
    if engine not in REFERENCE_ENGINES:
        raise UsageError(f"unknown reference engine {engine!r}")
    bpe = REFERENCE_ENGINES[engine]
    if pre not in ("byte_level", "pattern"):
        raise UsageError(f"unknown pre-tokenization {pre!r}")
    out: list[int] = []
    for seg in split_specials(data, specials):
        if seg.is_special:
            out.append(seg.special_id)
        elif pre == "byte_level":
            out.extend(bpe(bytes_to_initial_tokens(seg, table).tolist(), table))
        else:
            for chunk in pattern_pretokenize(seg.data, pattern):
                out.extend(bpe(bytes_to_initial_tokens(chunk, table).tolist(), table))
    return out

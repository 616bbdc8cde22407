"""Compiled kernels behind the block engine and the pair hash table.

Each phase is written as an explicit loop over the logical threads of one
block (``t in range(block_size)``), each thread looping over its ``d``
coarsened positions.  The end of a phase loop is the barrier.  Kernels report
contract failures through return codes; the Python wrappers in
:mod:`blockbpe.block` turn those into exceptions.
"""

from __future__ import annotations

import os

import numba
import numpy as np
from numba import njit, prange

# prefer OpenMP over TBB (whose version check warns on many installs)
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

NO_RANK = np.iinfo(np.int64).max
EMPTY = -1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

OK = 0
ERR_NOT_A_MERGE = 1
ERR_MAX_PASSES = 2


# --------------------------------------------------------------------------
# pair hash table (open addressing, linear probing)


@njit(cache=True)
def _slot(key, bits):
    h = np.uint64(key) * _GOLDEN
    return np.int64(h >> np.uint64(64 - bits))


@njit(cache=True)
def build_pair_hash(keys, ranks, merged, bits):
    cap = 1 << bits
    hkeys = np.full(cap, EMPTY, dtype=np.int64)
    hranks = np.zeros(cap, dtype=np.int64)
    hmerged = np.zeros(cap, dtype=np.int64)
    mask = cap - 1
    for j in range(keys.size):
        s = _slot(keys[j], bits)
        while hkeys[s] != EMPTY:
            s = (s + 1) & mask
        hkeys[s] = keys[j]
        hranks[s] = ranks[j]
        hmerged[s] = merged[j]
    return hkeys, hranks, hmerged


@njit(cache=True)
def probe(hkeys, bits, key):
    mask = hkeys.size - 1
    s = _slot(key, bits)
    while True:
        k = hkeys[s]
        if k == key:
            return s
        if k == EMPTY:
            return -1
        s = (s + 1) & mask


@njit(cache=True)
def pair_key(a, b, stride):
    if a < 0 or b < 0 or a >= stride or b >= stride:
        return np.int64(-2)
    return a * stride + b


@njit(cache=True)
def lookup_pairs(left, right, stride, hkeys, hranks, hmerged, bits, out_ranks, out_merged):
    for i in range(left.size):
        key = pair_key(left[i], right[i], stride)
        s = probe(hkeys, bits, key) if key >= 0 else -1
        if s < 0:
            out_ranks[i] = -1
            out_merged[i] = -1
        else:
            out_ranks[i] = hranks[s]
            out_merged[i] = hmerged[s]


# --------------------------------------------------------------------------
# phases


@njit(cache=True)
def pair_ranks_phase(seq, n, stride, hkeys, hranks, bits, block_size, out):
    """out[i] = rank of (seq[i], seq[i+1]) or -1; thread t strides t, t+B, ..."""
    m = n - 1
    d = (m + block_size - 1) // block_size
    for t in range(block_size):
        for k in range(d):
            i = t + k * block_size
            if i < m:
                key = pair_key(seq[i], seq[i + 1], stride)
                s = probe(hkeys, bits, key) if key >= 0 else -1
                out[i] = hranks[s] if s >= 0 else -1


@njit(cache=True)
def min_reduce_phase(ranks, m, block_size, lanes):
    """Block minimum of ranks[:m] ignoring -1; NO_RANK when nothing is present.

    ``lanes`` needs room for the next power of two >= block_size.
    """
    width = 1
    while width < block_size:
        width *= 2
    d = (m + block_size - 1) // block_size
    for t in range(width):
        best = NO_RANK
        if t < block_size:
            for k in range(d):
                i = t + k * block_size
                if i < m:
                    r = ranks[i]
                    if r >= 0 and r < best:
                        best = r
        lanes[t] = best
    half = width // 2
    while half >= 1:
        for t in range(half):
            if lanes[t + half] < lanes[t]:
                lanes[t] = lanes[t + half]
        half //= 2
    return lanes[0]


@njit(cache=True)
def mark_phase(ranks, n, min_rank, block_size, flags, maps):
    """Left-greedy marking of the minimum pair.

    Token i+1 is flagged when pair i matches and token i is not flagged.
    Each thread owns a contiguous run of pairs and summarises it as the map
    {incoming state -> outgoing state} of that two-state rule; an exclusive
    fold of the maps gives every thread its incoming state, after which all
    threads replay their pairs independently.  ``maps`` has shape
    (block_size, 2).
    """
    m = n - 1
    c = (m + block_size - 1) // block_size
    for t in range(block_size):
        lo = t * c
        hi = min(lo + c, m)
        for s_in in range(2):
            s = s_in
            for i in range(lo, hi):
                s = 1 if (ranks[i] == min_rank and s == 0) else 0
            maps[t, s_in] = s
    # exclusive fold: maps[t, 0] becomes the state entering thread t
    s = 0
    for t in range(block_size):
        nxt = maps[t, s]
        maps[t, 0] = s
        s = nxt
    flags[0] = 0
    for t in range(block_size):
        lo = t * c
        hi = min(lo + c, m)
        s = maps[t, 0]
        for i in range(lo, hi):
            s = 1 if (ranks[i] == min_rank and s == 0) else 0
            flags[i + 1] = s


@njit(cache=True)
def scan_phase(flags, n, block_size, offsets, tree):
    """Exclusive prefix sum of flags[:n] into offsets; returns the total.

    Threads own contiguous chunks; chunk totals are scanned with an
    up-sweep/down-sweep tree held in ``tree`` (power-of-two length >=
    block_size).
    """
    width = tree.size
    c = (n + block_size - 1) // block_size
    for t in range(width):
        acc = 0
        if t < block_size:
            lo = t * c
            hi = min(lo + c, n)
            for i in range(lo, hi):
                acc += flags[i]
        tree[t] = acc
    step = 1
    while step < width:
        for j in range(2 * step - 1, width, 2 * step):
            tree[j] += tree[j - step]
        step *= 2
    total = tree[width - 1]
    tree[width - 1] = 0
    while step > 1:
        step //= 2
        for j in range(2 * step - 1, width, 2 * step):
            left = tree[j - step]
            tree[j - step] = tree[j]
            tree[j] += left
    for t in range(block_size):
        lo = t * c
        hi = min(lo + c, n)
        acc = tree[t]
        for i in range(lo, hi):
            offsets[i] = acc
            acc += flags[i]
    return total


@njit(cache=True)
def compact_phase(seq, n, flags, offsets, stride, hkeys, hmerged, bits, block_size, out):
    """Write survivors / merged pairs to i - offsets[i]; returns an error code."""
    d = (n + block_size - 1) // block_size
    status = OK
    for t in range(block_size):
        for k in range(d):
            i = t + k * block_size
            if i >= n or flags[i] == 1:
                continue
            if i + 1 < n and flags[i + 1] == 1:
                key = pair_key(seq[i], seq[i + 1], stride)
                s = probe(hkeys, bits, key) if key >= 0 else -1
                if s < 0:
                    status = ERR_NOT_A_MERGE
                    out[i - offsets[i]] = seq[i]
                else:
                    out[i - offsets[i]] = hmerged[s]
            else:
                out[i - offsets[i]] = seq[i]
    return status


# --------------------------------------------------------------------------
# driver


@njit(cache=True)
def block_bpe_kernel(seq, stride, hkeys, hranks, hmerged, bits, block_size, max_passes, trace_rank, trace_merges):
    """Merge ``seq`` in place until no pair has a rank.

    Returns ``(length, passes, status)``; the result is ``seq[:length]``.
    Per-pass minimum ranks and merge counts are written to the trace arrays
    (each at least ``seq.size`` long).
    """
    n = seq.size
    if n < 2:
        return n, 0, OK
    width = 1
    while width < block_size:
        width *= 2
    buf_a = seq
    buf_b = np.empty(n, dtype=np.int64)
    ranks = np.empty(n, dtype=np.int64)
    flags = np.zeros(n, dtype=np.int64)
    offsets = np.empty(n, dtype=np.int64)
    lanes = np.empty(width, dtype=np.int64)
    tree = np.empty(width, dtype=np.int64)
    maps = np.empty((block_size, 2), dtype=np.int64)
    length = n
    passes = 0
    status = OK
    src_is_a = True
    while length >= 2:
        src = buf_a if src_is_a else buf_b
        dst = buf_b if src_is_a else buf_a
        pair_ranks_phase(src, length, stride, hkeys, hranks, bits, block_size, ranks)
        best = min_reduce_phase(ranks, length - 1, block_size, lanes)
        if best == NO_RANK:
            break
        if passes >= max_passes:
            status = ERR_MAX_PASSES
            break
        mark_phase(ranks, length, best, block_size, flags, maps)
        merged = scan_phase(flags, length, block_size, offsets, tree)
        status = compact_phase(src, length, flags, offsets, stride, hkeys, hmerged, bits, block_size, dst)
        if status != OK:
            break
        trace_rank[passes] = best
        trace_merges[passes] = merged
        passes += 1
        length -= merged
        src_is_a = not src_is_a
    if not src_is_a:
        seq[:length] = buf_b[:length]
    return length, passes, status


@njit(cache=True, parallel=True)
def block_bpe_rows(tokens, starts, stride, hkeys, hranks, hmerged, bits, block_size, max_passes, out_len, out_passes, out_status):
    """One block per row: rows ``tokens[starts[r]:starts[r+1]]`` merged in place in parallel."""
    rows = starts.size - 1
    for r in prange(rows):
        lo = starts[r]
        hi = starts[r + 1]
        seg = tokens[lo:hi]
        n = hi - lo
        tr = np.empty(max(n, 1), dtype=np.int64)
        tm = np.empty(max(n, 1), dtype=np.int64)
        cap = max_passes if max_passes > 0 else n
        length, passes, status = block_bpe_kernel(seg, stride, hkeys, hranks, hmerged, bits, block_size, cap, tr, tm)
        out_len[r] = length
        out_passes[r] = passes
        out_status[r] = status

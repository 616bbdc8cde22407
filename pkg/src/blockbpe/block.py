"""Block-parallel BPE.

Every merge pass runs five data-parallel phases over the working sequence:

1. ``pair_ranks``       logical thread i looks up the rank of pair (i, i+1)
2. ``min_rank_reduce``  block-wide minimum over those ranks
3. ``mark_merges``      flag token i+1 when pair (i, i+1) is the minimum pair
                        and token i is not itself being consumed
4. ``exclusive_scan``   prefix sum of the flags gives each survivor's shift
5. ``compact``          survivors write themselves (or the merged pair) to
                        ``i - offset[i]`` in the other buffer

The phases are compiled loops over the logical threads of one block (see
``_kernels``); the end of each phase loop is the barrier.  When a sequence is
longer than ``block_size`` each logical thread handles
``d = ceil(n / block_size)`` positions.  :class:`BarrierBlock` runs the
same phases on a pool of Python threads with explicit barriers.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .exceptions import ContractViolation, MaxPassesExceeded, UsageError
from .vocab import ABSENT, MergeTable

_NO_RANK = np.iinfo(np.int64).max


@dataclass(frozen=True)
class BlockConfig:
    """Execution parameters for :func:`block_bpe`.

    ``block_size`` is the number of logical threads per block (32-1024 on
    real hardware; any positive value is accepted).  ``max_passes`` caps the
    number of merge passes; ``None`` means the input length.
    """

    block_size: int = 256
    max_passes: int | None = None

    def __post_init__(self):
        if not isinstance(self.block_size, (int, np.integer)) or self.block_size < 1:
            raise UsageError(f"block_size must be a positive integer, got {self.block_size!r}")
        if self.max_passes is not None and self.max_passes < 1:
            raise UsageError(f"max_passes must be >= 1, got {self.max_passes!r}")


@dataclass(frozen=True)
class PassRecord:
    pass_index: int
    length: int
    min_rank: int
    merges: int


def coarsening_factor(seq_len: int, config: BlockConfig | int) -> int:
    """Positions each logical thread must stride over: ``ceil(seq_len / block_size)``."""
    block_size = config.block_size if isinstance(config, BlockConfig) else int(config)
    if seq_len < 0:
        raise UsageError("seq_len must be non-negative")
    return -(-seq_len // block_size)


def _as_tokens(tokens) -> np.ndarray:
    return np.asarray(tokens, dtype=np.int64).reshape(-1)


def _as_ranks(ranks) -> np.ndarray:
    if isinstance(ranks, np.ndarray):
        return ranks.astype(np.int64, copy=False)
    return np.array([ABSENT if r is None else r for r in ranks], dtype=np.int64)


def _next_pow2(x: int) -> int:
    return 1 << max(0, (x - 1).bit_length())


# --------------------------------------------------------------------------
# phases


def _width(block_size: int) -> int:
    return _next_pow2(block_size)


def pair_ranks(tokens, table: MergeTable, block_size: int = 256) -> np.ndarray:
    """Rank of every adjacent pair; ``ABSENT`` (-1) where the pair never merges.

    Entry i is computed by logical thread ``i % block_size`` on its
    ``i // block_size``-th stride; the layout never changes the result.
    """
    seq = np.ascontiguousarray(_as_tokens(tokens))
    n = seq.size
    out = np.empty(max(n - 1, 0), dtype=np.int64)
    if n < 2:
        return out
    stride, hkeys, hranks, _, bits = table.kernel_args
    _kernels.pair_ranks_phase(seq, n, stride, hkeys, hranks, bits, int(block_size), out)
    return out


def min_rank_reduce(ranks, block_size: int = 256) -> int | None:
    """Minimum present rank, or ``None`` when every entry is absent.

    Each logical thread folds its strided entries, then the per-thread minima
    are combined by a halving tree.
    """
    r = np.ascontiguousarray(_as_ranks(ranks))
    if r.size == 0:
        return None
    lanes = np.empty(_width(block_size), dtype=np.int64)
    best = _kernels.min_reduce_phase(r, r.size, int(block_size), lanes)
    return None if best == _NO_RANK else int(best)


def mark_merges(tokens, table: MergeTable, min_rank: int, ranks=None, block_size: int = 256) -> np.ndarray:
    """Flag the right-hand token of every occurrence of the minimum pair.

    Overlapping occurrences (``a a a`` for pair ``(a, a)``) resolve left to
    right: ``flags[i+1] = 1`` iff pair i has ``min_rank`` and ``flags[i] == 0``.
    ``flags[0]`` is always 0.
    """
    seq = _as_tokens(tokens)
    n = seq.size
    flags = np.zeros(n, dtype=np.int64)
    if n < 2:
        return flags
    if min_rank is None:
        raise ContractViolation("mark_merges needs a present minimum rank")
    r = pair_ranks(seq, table, block_size) if ranks is None else _as_ranks(ranks)
    if r.size != n - 1:
        raise ContractViolation(f"expected {n - 1} pair ranks, got {r.size}")
    maps = np.empty((int(block_size), 2), dtype=np.int64)
    _kernels.mark_phase(np.ascontiguousarray(r), n, int(min_rank), int(block_size), flags, maps)
    return flags


def _check_flags(f: np.ndarray) -> None:
    if f.size and ((f > 1).any() or (f < 0).any()):
        raise ContractViolation("merge flags must be 0 or 1")
    if f.size and f[0]:
        raise ContractViolation("flags[0] must be 0: the first token cannot be a right element")
    if f.size > 1 and (f[1:] & f[:-1]).any():
        i = int(np.flatnonzero(f[1:] & f[:-1])[0])
        raise ContractViolation(f"adjacent merge flags at {i} and {i + 1}")


def exclusive_scan(flags, block_size: int = 256) -> np.ndarray:
    """Exclusive prefix sum of merge flags: ``offsets[i] = sum(flags[:i])``.

    Threads own contiguous chunks; chunk totals go through an up-sweep /
    down-sweep tree before each thread scans its own chunk.
    """
    f = np.ascontiguousarray(np.asarray(flags).astype(np.int64).reshape(-1))
    _check_flags(f)
    offsets = np.empty(f.size, dtype=np.int64)
    if f.size:
        tree = np.empty(_width(block_size), dtype=np.int64)
        _kernels.scan_phase(f, f.size, int(block_size), offsets, tree)
    return offsets


def compact(tokens, table: MergeTable, flags, offsets, out: np.ndarray | None = None, block_size: int = 256) -> np.ndarray:
    """Close the gaps left by merged-away tokens.

    Token i with ``flags[i] == 1`` was consumed by its left neighbour and
    writes nothing; any other token writes itself, or the merged id of
    ``(tokens[i], tokens[i+1])`` when ``flags[i+1] == 1``, at
    ``i - offsets[i]``.
    """
    seq = np.ascontiguousarray(_as_tokens(tokens))
    f = np.ascontiguousarray(np.asarray(flags).astype(np.int64).reshape(-1))
    off = np.ascontiguousarray(np.asarray(offsets, dtype=np.int64).reshape(-1))
    n = seq.size
    if f.size != n or off.size != n:
        raise ContractViolation(f"tokens, flags and offsets differ in length ({n}, {f.size}, {off.size})")
    _check_flags(f)
    if n and (off[0] != 0 or (n > 1 and not np.array_equal(np.diff(off), f[:-1]))):
        raise ContractViolation("offsets are not the exclusive prefix sum of flags")
    m = n - int(f.sum())
    if out is None:
        out = np.empty(m, dtype=np.int64)
    elif out.size < m:
        raise ContractViolation("output buffer too small")
    if n == 0:
        return out[:0]
    stride, hkeys, _, hmerged, bits = table.kernel_args
    status = _kernels.compact_phase(seq, n, f, off, stride, hkeys, hmerged, bits, int(block_size), out)
    if status != _kernels.OK:
        raise ContractViolation("a flagged pair is not in the merge table")
    return out[:m]


# --------------------------------------------------------------------------
# driver


def block_bpe(
    tokens,
    table: MergeTable,
    config: BlockConfig | None = None,
    trace: list | None = None,
) -> list[int]:
    """Run merge passes until no adjacent pair has a rank.

    Output equals :func:`~blockbpe.reference.naive_bpe` for any table built by
    BPE training (see :meth:`MergeTable.is_rank_ordered`).  Pass ``trace`` as
    a list to collect one :class:`PassRecord` per pass.
    """
    config = config or BlockConfig()
    seq = np.array(_as_tokens(tokens), dtype=np.int64)
    n = seq.size
    if n < 2:
        return seq.tolist()
    max_passes = config.max_passes if config.max_passes is not None else n
    trace_rank = np.empty(n, dtype=np.int64)
    trace_merges = np.empty(n, dtype=np.int64)
    length, passes, status = _kernels.block_bpe_kernel(
        seq, *table.kernel_args, config.block_size, max_passes, trace_rank, trace_merges
    )
    if trace is not None:
        remaining = n
        for p in range(passes):
            trace.append(PassRecord(p, remaining, int(trace_rank[p]), int(trace_merges[p])))
            remaining -= int(trace_merges[p])
    if status == _kernels.ERR_MAX_PASSES:
        raise MaxPassesExceeded(seq[:length].tolist(), passes)
    if status != _kernels.OK:
        raise ContractViolation("a flagged pair is not in the merge table")
    return seq[:length].tolist()


def block_bpe_passes(tokens, table: MergeTable, config: BlockConfig | None = None) -> tuple[list[int], list[PassRecord]]:
    trace: list[PassRecord] = []
    out = block_bpe(tokens, table, config, trace)
    return out, trace


# --------------------------------------------------------------------------
# explicit worker pool


class BarrierBlock:
    """Run the merge-pass phases on ``n_workers`` threads separated by barriers.

    Worker w owns a contiguous slice of positions in every pass.  Cross-slice
    information (the minimum rank, run starts for overlap resolution, scan
    offsets) is exchanged through per-worker slots that are only read after a
    barrier, and every worker folds those slots in the same order, so the
    result does not depend on ``n_workers`` or on thread scheduling.

    This exists to exercise the phase/barrier contract; it is far slower than
    :func:`block_bpe` under the GIL.
    """

    def __init__(self, table: MergeTable, n_workers: int = 4, max_passes: int | None = None):
        if n_workers < 1:
            raise UsageError("n_workers must be >= 1")
        self.table = table
        self.n_workers = n_workers
        self.max_passes = max_passes

    def __call__(self, tokens: Sequence[int]) -> list[int]:
        return self.run(tokens)

    def run(self, tokens: Sequence[int], trace: list | None = None) -> list[int]:
        seq = [int(t) for t in tokens]
        n = len(seq)
        if n < 2:
            return seq
        W = self.n_workers
        ranks_map = self.table.pair_rank
        merged_map = self.table.pair_merged
        max_passes = self.max_passes if self.max_passes is not None else n

        bufs = [seq, [0] * n]
        st = {"cur": 0, "len": n, "passes": 0, "error": None}
        local_min = [None] * W
        # left-greedy marking is a two-state machine (is token i consumed?);
        # each slice publishes where it sends incoming state 0 and 1
        state_map = [(0, 0)] * W
        totals = [0] * W
        match = [False] * n
        flags = [0] * n
        barrier = threading.Barrier(W)

        def bounds(w, size):
            step = -(-size // W)
            return min(w * step, size), min((w + 1) * step, size)

        def worker(w):
            while True:
                src = bufs[st["cur"]]
                length = st["len"]
                lo, hi = bounds(w, length)
                plo, phi = lo, min(hi, length - 1)
                # pair ranks and slice minimum
                ranks = [ranks_map.get((src[i], src[i + 1])) for i in range(plo, phi)]
                present = [r for r in ranks if r is not None]
                local_min[w] = min(present) if present else None
                barrier.wait()
                present = [m for m in local_min if m is not None]
                gmin = min(present) if present else None
                if gmin is None or st["passes"] >= max_passes:
                    if w == 0 and gmin is not None:
                        st["error"] = MaxPassesExceeded(src[:length], st["passes"])
                    return
                # mark: summarise the slice as a state map
                for k, i in enumerate(range(plo, phi)):
                    match[i] = ranks[k] == gmin
                outs = []
                for s_in in (0, 1):
                    s_cur = s_in
                    for i in range(plo, phi):
                        s_cur = int(match[i] and not s_cur)
                    outs.append(s_cur)
                state_map[w] = tuple(outs)
                barrier.wait()
                s_cur = 0
                for v in range(w):
                    s_cur = state_map[v][s_cur]
                if w == 0 and length:
                    flags[0] = 0
                for i in range(plo, phi):
                    s_cur = int(match[i] and not s_cur)
                    flags[i + 1] = s_cur
                barrier.wait()
                # scan
                totals[w] = sum(flags[lo:hi])
                barrier.wait()
                offset = sum(totals[:w])
                dst = bufs[1 - st["cur"]]
                # compact
                for i in range(lo, hi):
                    if flags[i]:
                        offset += 1
                        continue
                    if i + 1 < length and flags[i + 1]:
                        dst[i - offset] = merged_map[(src[i], src[i + 1])]
                    else:
                        dst[i - offset] = src[i]
                barrier.wait()
                if w == 0:
                    merged = sum(totals)
                    if trace is not None:
                        trace.append(PassRecord(st["passes"], length, gmin, merged))
                    st["len"] = length - merged
                    st["cur"] = 1 - st["cur"]
                    st["passes"] += 1
                barrier.wait()

        threads = [threading.Thread(target=worker, args=(w,), daemon=True) for w in range(W)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if st["error"] is not None:
            raise st["error"]
        return bufs[st["cur"]][: st["len"]]


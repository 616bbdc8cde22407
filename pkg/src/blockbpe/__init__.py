"""Byte-level BPE tokenization with a block-parallel merge engine."""

from .batch import BatchEncoding, decode_batch, encode, encode_batch, encode_rows
from .bench import BenchConfig, BenchRow, emit_report, ingest_corpus, occupancy_estimate, run_benchmark
from .block import (
    BarrierBlock,
    BlockConfig,
    PassRecord,
    block_bpe,
    coarsening_factor,
    compact,
    exclusive_scan,
    mark_merges,
    min_rank_reduce,
    pair_ranks,
)
from .estimator import BPETokenizer
from .eval import SimilarityReport, divergence_report, levenshtein, similarity
from .exceptions import (
    BatchRowError,
    BPEError,
    ContractViolation,
    DecodeError,
    EngineMismatch,
    IntegrityError,
    MaxPassesExceeded,
    ParseError,
    UsageError,
)
from .pretokenize import GPT2_PATTERN, Segment, bytes_to_initial_tokens, pattern_pretokenize, split_specials
from .reference import encode_reference, heap_bpe, naive_bpe
from .vocab import MergeTable, SpecialTokenSet, decode, load_merge_table, load_specials, rank_of

__version__ = "0.1.0"

"""scikit-learn style front end.

:class:`BPETokenizer` loads its merge table in ``fit`` and encodes batches of
strings in ``transform``, so it can sit at the head of a
:class:`sklearn.pipeline.Pipeline` and be cloned, grid-searched over
``block_size`` or ``engine``, and pickled like any other estimator.

    >>> tok = BPETokenizer(vocab="vocab.json", merges="merges.txt").fit()  # doctest: +SKIP
    >>> tok.transform(["hello world"])                                      # doctest: +SKIP
    array([[31373,   995]])
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .batch import ENGINES, BatchEncoding, decode_batch, encode_batch
from .block import BlockConfig
from .exceptions import UsageError
from .validation import check_byte_strings, check_positive_int, check_token_rows
from .vocab import MergeTable, SpecialTokenSet, load_merge_table, load_specials


class BPETokenizer(TransformerMixin, BaseEstimator):
    """Byte-level BPE tokenizer with interchangeable engines.

    Parameters
    ----------
    vocab, merges : path or bytes, optional
        Table sources, read with ``format``.  Ignored when ``table`` is given.
    format : {"gpt2", "canonical_json"}
    table : MergeTable, optional
        An already loaded table.
    specials : SpecialTokenSet, mapping or path, optional
    engine : {"block", "heap", "naive"}
    block_size : int
        Logical threads per block for the block engine.
    max_passes : int, optional
        Pass cap for the block engine; defaults to the sequence length.
    pad_id, bos_id, eos_id : int, optional
        ``pad_id`` falls back to ``eos_id``.  With a single special token it
        serves as BOS and EOS unless these are set.
    add_bos, add_eos : bool
    max_len : int, optional
        Fixed output width; longer rows are truncated and counted.
    n_workers : int, optional
        Parallel rows for the block engine; defaults to ``$BLOCKBPE_WORKERS``
        or all threads.
    """

    def __init__(
        self,
        vocab=None,
        merges=None,
        format="gpt2",
        table=None,
        specials=None,
        engine="block",
        block_size=256,
        max_passes=None,
        pad_id=None,
        bos_id=None,
        eos_id=None,
        add_bos=False,
        add_eos=False,
        max_len=None,
        n_workers=None,
    ):
        self.vocab = vocab
        self.merges = merges
        self.format = format
        self.table = table
        self.specials = specials
        self.engine = engine
        self.block_size = block_size
        self.max_passes = max_passes
        self.pad_id = pad_id
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.add_bos = add_bos
        self.add_eos = add_eos
        self.max_len = max_len
        self.n_workers = n_workers

    def _resolve_specials(self) -> SpecialTokenSet:
        sp = self.specials
        if sp is None:
            return SpecialTokenSet()
        if isinstance(sp, SpecialTokenSet):
            return sp
        if isinstance(sp, Mapping):
            return SpecialTokenSet(sp)
        return load_specials(sp)

    def fit(self, X=None, y=None):
        """Load and validate the merge table; ``X`` and ``y`` are ignored."""
        if self.engine not in ENGINES:
            raise UsageError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        check_positive_int(self.block_size, "block_size")
        if self.max_passes is not None:
            check_positive_int(self.max_passes, "max_passes")
        if self.max_len is not None:
            check_positive_int(self.max_len, "max_len", minimum=0)
        if self.n_workers is not None:
            check_positive_int(self.n_workers, "n_workers")

        if self.table is not None:
            if not isinstance(self.table, MergeTable):
                raise UsageError(f"table must be a MergeTable, got {type(self.table).__name__}")
            table = self.table
        elif self.vocab is not None:
            table = load_merge_table(self.vocab, self.merges, self.format)
        else:
            raise UsageError("BPETokenizer needs either table= or vocab= (and merges=)")
        specials = self._resolve_specials()
        specials.check_against(table)

        self.table_ = table
        self.specials_ = specials
        self.config_ = BlockConfig(self.block_size, self.max_passes)
        self.n_tokens_ = len(table)
        self.n_merges_ = table.n_merges
        return self

    def encode_batch(self, X) -> BatchEncoding:
        check_is_fitted(self, "table_")
        return encode_batch(
            check_byte_strings(X),
            self.table_,
            self.specials_,
            self.config_,
            pad_id=self.pad_id,
            add_bos=self.add_bos,
            add_eos=self.add_eos,
            bos_id=self.bos_id,
            eos_id=self.eos_id,
            max_len=self.max_len,
            engine=self.engine,
            n_workers=self.n_workers,
        )

    def transform(self, X) -> np.ndarray:
        """Padded ``(n_samples, max_len)`` id matrix; see :meth:`encode_batch` for lengths and mask."""
        return self.encode_batch(X).ids

    def inverse_transform(self, X, lengths=None, skip_specials=False) -> list[bytes]:
        """Decode an id matrix (or a :class:`BatchEncoding`) back to byte strings.

        Without ``lengths`` trailing ``pad_id`` entries of a matrix are
        treated as padding.
        """
        check_is_fitted(self, "table_")
        if isinstance(X, BatchEncoding):
            enc = X
        else:
            rows = check_token_rows(X)
            if lengths is None:
                pad = self.pad_id if self.pad_id is not None else self.eos_id
                if pad is not None:
                    rows = [_strip_trailing(r, pad) for r in rows]
            else:
                rows = [r[: int(n)] for r, n in zip(rows, lengths)]
            enc = BatchEncoding.from_rows(rows, 0)
        return decode_batch(enc, self.table_, self.specials_, skip_specials)

    def _more_tags(self):
        return {"X_types": ["string"], "requires_fit": True, "stateless": False}


def _strip_trailing(row: list[int], pad: int) -> list[int]:
    end = len(row)
    while end and row[end - 1] == pad:
        end -= 1
    return row[:end]

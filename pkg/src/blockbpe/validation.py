"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import UsageError


def check_byte_strings(X, *, allow_str: bool = True, name: str = "X") -> list[bytes]:
    """Coerce an iterable of text / byte strings to a list of ``bytes``.

    Accepts lists, tuples, 1-d object arrays and pandas Series.  ``str``
    items are UTF-8 encoded; anything else is rejected with the offending
    row index.  A bare string is rejected because iterating it would yield
    characters, which is almost never what the caller meant.
    """
    if X is None:
        raise UsageError(f"{name} is None; expected a sequence of strings")
    if isinstance(X, (str, bytes, bytearray)):
        raise UsageError(f"{name} must be a sequence of strings, not a single string")
    if isinstance(X, np.ndarray):
        if X.ndim == 2 and X.shape[1] == 1:
            X = X[:, 0]
        elif X.ndim != 1:
            raise UsageError(f"{name} must be one-dimensional, got shape {X.shape}")
    elif hasattr(X, "to_numpy") and not hasattr(X, "columns"):
        X = X.to_numpy()
    out = []
    for i, item in enumerate(X):
        if isinstance(item, bytes):
            out.append(item)
        elif isinstance(item, (bytearray, memoryview, np.bytes_)):
            out.append(bytes(item))
        elif allow_str and isinstance(item, str):
            out.append(item.encode("utf-8"))
        else:
            raise UsageError(f"{name}[{i}] is {type(item).__name__}, expected bytes or str")
    return out


def check_token_rows(X, name: str = "X") -> list[list[int]]:
    """Coerce a 2-d id matrix or a list of id lists to ``list[list[int]]``."""
    if isinstance(X, np.ndarray):
        if X.ndim != 2:
            raise UsageError(f"{name} must be 2-dimensional, got shape {X.shape}")
        if not np.issubdtype(X.dtype, np.integer):
            raise UsageError(f"{name} must hold integers, got {X.dtype}")
        return X.tolist()
    rows = []
    for i, row in enumerate(X):
        try:
            rows.append([int(v) for v in row])
        except (TypeError, ValueError):
            raise UsageError(f"{name}[{i}] is not a sequence of integers") from None
    return rows


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise UsageError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)

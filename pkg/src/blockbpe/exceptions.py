"""Exception hierarchy shared by every engine and the CLI."""


class BPEError(Exception):
    """Base class for all errors raised by blockbpe."""

    exit_code = 2


class UsageError(BPEError, ValueError):
    """Bad arguments or configuration supplied by the caller."""

    exit_code = 1


class ConfigurationError(UsageError):
    pass


class ParseError(BPEError):
    """A vocabulary or merges source could not be parsed."""

    def __init__(self, message, *, source=None, line=None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f"{source}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class IntegrityError(BPEError):
    """A loaded table violates one of its structural invariants."""


class DecodeError(BPEError):
    def __init__(self, message, *, index=None, token_id=None, row=None):
        self.index = index
        self.token_id = token_id
        self.row = row
        super().__init__(message)


class ContractViolation(BPEError):
    """A block-engine phase received input breaking its precondition."""


class MaxPassesExceeded(BPEError):
    """The block engine hit its pass cap before reaching a fixed point.

    ``tokens`` holds the partially merged sequence and ``passes`` the number
    of passes completed.
    """

    def __init__(self, tokens, passes):
        self.tokens = list(tokens)
        self.passes = passes
        super().__init__(
            f"merge did not converge after {passes} passes "
            f"({len(self.tokens)} tokens remain)"
        )


class BatchRowError(BPEError):
    """Wraps an error raised while encoding one row of a batch."""

    def __init__(self, row, cause):
        self.row = row
        self.cause = cause
        super().__init__(f"row {row}: {cause}")


class EngineMismatch(BPEError):
    """Two engines disagreed on the same input during a correctness gate."""

    def __init__(self, engines, data, outputs):
        self.engines = engines
        self.data = data
        self.outputs = outputs
        super().__init__(
            f"engines {engines[0]!r} and {engines[1]!r} disagree on input {data!r}"
        )

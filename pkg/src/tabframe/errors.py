"""Exception hierarchy.

Everything raised on purpose derives from :class:`TabframeError` so callers
can distinguish library failures from programming errors.  Mixins with the
closest builtin (``ValueError``, ``IndexError``, ...) keep ``except`` clauses
written against builtins working.
"""


class TabframeError(Exception):
    """Base class for all tabframe errors."""


# --- data structures ---------------------------------------------------------

class RaggedShapeError(TabframeError, ValueError):
    """Nested input rows do not agree on the number of cells, or a ragged
    tensor's internal offsets are inconsistent."""


class MixedDtypeError(TabframeError, TypeError):
    """A ragged tensor was fed cells mixing integer and floating scalars."""


class RowCountMismatchError(TabframeError, ValueError):
    """Column blocks disagree on the number of rows."""


class IndexOutOfBoundsError(TabframeError, IndexError):
    """A row or column index is outside ``[0, size)``."""


class ShapeMismatchError(TabframeError, ValueError):
    """Operand shapes do not conform; the message carries both shapes."""


class ColumnCountMismatchError(TabframeError, ValueError):
    """Assembled column embeddings do not cover the schema's columns."""


# --- schemas and materialization ---------------------------------------------

class SchemaError(TabframeError, ValueError):
    """Malformed schema: unknown semantic type, duplicate names, bad target."""


class EmptyColumnError(TabframeError, ValueError):
    """A column holds no non-missing cells, so nothing can be inferred."""


class ParseError(TabframeError, ValueError):
    """A raw cell could not be converted to its semantic type."""

    def __init__(self, column: str, row: int, message: str):
        super().__init__(f"column {column!r}, row {row}: {message}")
        self.column = column
        self.row = row


class MissingEmbedderError(TabframeError, KeyError):
    """No embedder is registered for a text_embedded column."""


class MissingStatsError(TabframeError, KeyError):
    """Encoder needs column statistics that the frame does not carry."""


class IndexOutOfRangeError(TabframeError, ValueError):
    """A categorical index is >= the column's category count."""


class TokenOutOfRangeError(TabframeError, ValueError):
    """A token id is outside ``[0, vocab_size)``."""


# --- binary containers --------------------------------------------------------

class BadMagicError(TabframeError, ValueError):
    """File does not start with the expected 4-byte magic."""


class VersionMismatchError(TabframeError, ValueError):
    """Container version byte is not supported."""


class CorruptError(TabframeError, ValueError):
    """A container section is truncated or inconsistent."""

    def __init__(self, section: str, message: str = ""):
        detail = f": {message}" if message else ""
        super().__init__(f"corrupt section {section!r}{detail}")
        self.section = section


class KeyMismatchError(TabframeError, ValueError):
    """Stored content key does not match the expected one; the cached frame
    belongs to different inputs."""


# --- embedding clients --------------------------------------------------------

class HttpError(TabframeError, RuntimeError):
    """Embedding endpoint answered with a non-retryable error status."""

    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class DimensionMismatchError(TabframeError, ValueError):
    """Endpoint returned vectors of a different width than the spec's dim."""


class EmbedTimeoutError(TabframeError, TimeoutError):
    """Embedding request did not complete within the configured timeout."""


# --- autodiff ------------------------------------------------------------------

class NotScalarLossError(TabframeError, ValueError):
    """backward() requires a scalar (single-element) loss."""


class DetachedTensorError(TabframeError, ValueError):
    """The loss was not produced by operations recorded on this tape."""


# --- training -------------------------------------------------------------------

class LabelOutOfRangeError(TabframeError, ValueError):
    """Binary-classification labels must be 0 or 1."""


class SingleClassError(TabframeError, ValueError):
    """ROC-AUC needs both a positive and a negative example."""


class EmptySplitError(TabframeError, ValueError):
    """Train/validation split left one side empty."""


class NonFiniteLossError(TabframeError, ArithmeticError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class UsageError(TabframeError, ValueError):
    """Command line was malformed (maps to exit code 1)."""

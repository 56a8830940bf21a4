"""Materialization: raw tables -> tensor frames.

Converts parsed CSV columns (strings, numbers, lists, timestamps, embedding
vectors) into the typed blocks of a :class:`~tabframe.frame.TensorFrame` and
computes per-column statistics.  Feature normalization deliberately does NOT
happen here; it happens at encoding time using the statistics computed here,
so imputation/normalization strategies can change without re-materializing.

Missing-value sentinels per semantic type:

* numerical -> ``NaN``
* categorical -> ``-1`` (also used for categories unseen at inference time)
* multicategorical -> empty cell
* timestamp -> all components ``-1``
* text_tokenized -> empty cell
* text_embedded / embedding -> all-zero vector
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyColumnError,
    ParseError,
    RowCountMismatchError,
    SchemaError,
    TabframeError,
)
from .frame import TIMESTAMP_COMPONENTS, ColumnStats, TensorFrame, frame_validate
from .hashutil import fnv1a_64
from .ragged import MultiEmbeddingTensor, MultiNestedTensor
from .stypes import CANONICAL_TYPE_ORDER, Schema, SemanticType, TaskType

DEFAULT_LIST_SEPARATOR = "|"
DEFAULT_VOCAB_SIZE = 30000
NUM_QUANTILES = 17

#: cells are str | float | None | list[str] | np.ndarray (vector)
Cell = object


@dataclass
class RawTable:
    """Ordered raw columns of equal length, as parsed from CSV or built in code."""

    columns: list[tuple[str, list]]
    num_rows: int

    def __post_init__(self):
        for name, cells in self.columns:
            if len(cells) != self.num_rows:
                raise RowCountMismatchError(
                    f"column {name!r} has {len(cells)} cells, expected {self.num_rows}"
                )

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def column(self, name: str) -> list:
        for n, cells in self.columns:
            if n == name:
                return cells
        raise KeyError(name)


def read_csv(path: str | Path) -> RawTable:
    """Read an RFC-4180 CSV with a header row; empty fields become missing."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(str(path), 0, "CSV file is empty (header row required)") from None
        rows = list(reader)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(str(path), i + 1, f"row has {len(row)} fields, header has {len(header)}")
    columns: list[tuple[str, list]] = []
    for j, name in enumerate(header):
        columns.append((name, [row[j] if row[j] != "" else None for row in rows]))
    return RawTable(columns=columns, num_rows=len(rows))


# --- parsing helpers ----------------------------------------------------------

def _try_real(cell) -> float | None:
    if isinstance(cell, (int, float, np.integer, np.floating)) and not isinstance(cell, bool):
        return float(cell)
    if isinstance(cell, str):
        try:
            return float(cell)
        except ValueError:
            return None
    return None


_TS_RE = re.compile(r"^\d{4}-\d{2}-\d{2}([T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:\d{2})?)?$")


def _try_timestamp(cell) -> datetime | None:
    if not isinstance(cell, str) or not _TS_RE.match(cell):
        return None
    text = cell[:-1] + "+00:00" if cell.endswith("Z") else cell
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


# --- semantic type inference ----------------------------------------------------

def infer_stype(cells: Sequence, list_separator: str = DEFAULT_LIST_SEPARATOR) -> SemanticType:
    """Infer a column's semantic type from a sample of raw cells.

    Deterministic rule cascade: (1) all non-missing cells parse as real ->
    numerical; (2) all parse as ISO-8601 timestamps -> timestamp; (3) any cell
    contains the list separator -> multicategorical; (4) distinct-string count
    <= min(50, ceil(0.1 * N)) -> categorical; (5) otherwise text_embedded.
    """
    present = [c for c in cells if c is not None]
    if not present:
        raise EmptyColumnError("all cells missing; cannot infer a semantic type")
    if all(_try_real(c) is not None for c in present):
        return SemanticType.numerical
    if all(_try_timestamp(c) is not None for c in present):
        return SemanticType.timestamp
    if any(isinstance(c, str) and list_separator in c for c in present) or any(
        isinstance(c, (list, tuple)) for c in present
    ):
        return SemanticType.multicategorical
    distinct = len({str(c) for c in present})
    threshold = min(50, math.ceil(0.1 * len(cells)))
    if distinct <= threshold:
        return SemanticType.categorical
    return SemanticType.text_embedded


def infer_schema(
    table: RawTable,
    target: str | None = None,
    list_separator: str = DEFAULT_LIST_SEPARATOR,
) -> Schema:
    """Infer a full schema for ``table``; ``target`` defaults to the last column.

    The task is binary_classification when every target value is 0 or 1,
    regression otherwise (target must be numeric either way).
    """
    if not table.columns:
        raise SchemaError("table has no columns")
    columns = tuple(
        (name, infer_stype(cells, list_separator)) for name, cells in table.columns
    )
    target_name = target if target is not None else table.columns[-1][0]
    if target_name not in table.names:
        raise SchemaError(f"target {target_name!r} is not a column of the table")
    tcells = [c for c in table.column(target_name) if c is not None]
    reals = [_try_real(c) for c in tcells]
    if not tcells or any(r is None for r in reals):
        raise SchemaError(
            f"target {target_name!r} must be numeric (0/1 for binary classification)"
        )
    task = (
        TaskType.binary_classification
        if set(reals) <= {0.0, 1.0}
        else TaskType.regression
    )
    return Schema(columns=columns, target=target_name, task=task)


# --- categorical encoding ---------------------------------------------------------

@dataclass
class CategoryMap:
    """Bijection between category strings and contiguous indices ``0..K-1``."""

    forward: dict[str, int]
    reverse: list[str]

    @classmethod
    def from_values(cls, values: Iterable[str]) -> "CategoryMap":
        """Assign indices by first occurrence order."""
        forward: dict[str, int] = {}
        reverse: list[str] = []
        for v in values:
            if v not in forward:
                forward[v] = len(reverse)
                reverse.append(v)
        return cls(forward=forward, reverse=reverse)

    def index_of(self, category: str) -> int:
        """Index of ``category``; -1 when unseen."""
        return self.forward.get(category, -1)

    def __len__(self) -> int:
        return len(self.reverse)


def encode_categorical_indices(
    cells: Sequence, existing: CategoryMap | None = None
) -> tuple[np.ndarray, CategoryMap]:
    """Map category cells to indices; missing and unseen categories become -1.

    Without ``existing`` the map is built from the cells themselves in first
    occurrence order; with it (inference time) the map is applied as-is.
    """
    cmap = existing if existing is not None else CategoryMap.from_values(
        str(c) for c in cells if c is not None
    )
    out = np.full(len(cells), -1, dtype=np.int64)
    for i, c in enumerate(cells):
        if c is not None:
            out[i] = cmap.index_of(str(c))
    return out, cmap


def _as_category_list(cell, list_separator: str, column: str, row: int) -> list[str]:
    if cell is None:
        return []
    if isinstance(cell, (list, tuple)):
        return [str(x) for x in cell]
    if isinstance(cell, str):
        return [part for part in cell.split(list_separator) if part != ""]
    raise ParseError(column, row, f"cannot read {cell!r} as a category list")


# --- text tokenization ---------------------------------------------------------------

class SimpleTokenizer:
    """Deterministic fallback tokenizer: lowercase, alphanumeric runs, FNV ids.

    Token ids are ``fnv1a_64(token) mod vocab_size``, so any implementation
    reproduces the same ids without a learned vocabulary.
    """

    _WORD = re.compile(r"[^\W_]+", re.UNICODE)

    def __init__(self, vocab_size: int = DEFAULT_VOCAB_SIZE):
        if vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        self.vocab_size = vocab_size

    def __call__(self, text: str) -> list[int]:
        return [
            fnv1a_64(tok.encode("utf-8")) % self.vocab_size
            for tok in self._WORD.findall(text.lower())
        ]


def tokenize_text(cells: Sequence, tokenizer: SimpleTokenizer | None = None) -> MultiNestedTensor:
    """Tokenize one text column into a ``[N, 1, .]`` ragged tensor.

    Missing or empty text produces an empty cell.
    """
    tok = tokenizer if tokenizer is not None else SimpleTokenizer()
    nested = [[tok(c) if isinstance(c, str) and c else []] for c in cells]
    return MultiNestedTensor.from_nested(nested, num_cols=1)


# --- timestamps -------------------------------------------------------------------------

def timestamp_components(cell, column: str = "<timestamp>", row: int = 0) -> list[int]:
    """Decompose one ISO-8601 UTC timestamp into
    ``[year, month, day, day_of_week, hour, minute, second]`` (Monday = 0);
    missing cells become all ``-1``."""
    if cell is None:
        return [-1] * TIMESTAMP_COMPONENTS
    dt = _try_timestamp(cell) if isinstance(cell, str) else None
    if dt is None:
        raise ParseError(column, row, f"cannot parse {cell!r} as an ISO-8601 timestamp")
    return [dt.year, dt.month, dt.day, dt.weekday(), dt.hour, dt.minute, dt.second]


def materialize_timestamp(cells: Sequence, column: str = "<timestamp>") -> np.ndarray:
    """Materialize one timestamp column into int64 ``[N, 1, 7]``."""
    out = np.empty((len(cells), 1, TIMESTAMP_COMPONENTS), dtype=np.int64)
    for i, cell in enumerate(cells):
        out[i, 0] = timestamp_components(cell, column, i)
    return out


# --- statistics ----------------------------------------------------------------------------

def _numeric_column_stats(values: np.ndarray) -> ColumnStats:
    mask = np.isnan(values)
    present = values[~mask]
    if present.size == 0:
        return ColumnStats(
            mean=0.0, std=0.0, count_missing=int(mask.sum()),
            quantiles=[0.0] * NUM_QUANTILES,
        )
    qs = np.quantile(present, np.linspace(0.0, 1.0, NUM_QUANTILES))
    return ColumnStats(
        mean=float(present.mean()),
        std=float(present.std()),
        count_missing=int(mask.sum()),
        quantiles=[float(q) for q in qs],
    )


def _count_stats(values: np.ndarray, num_categories: int, dense: bool) -> ColumnStats:
    present = values[values >= 0]
    if dense:
        counts = np.bincount(present, minlength=num_categories)
        category_count = {int(i): int(c) for i, c in enumerate(counts)}
    else:
        ids, counts = np.unique(present, return_counts=True)
        category_count = {int(i): int(c) for i, c in zip(ids, counts)}
    return ColumnStats(
        count_missing=int((values < 0).sum()),
        category_count=category_count,
        num_categories=num_categories,
    )


_DENSE_COUNT_LIMIT = 4096  # categorical maps get dense counts, token vocabularies sparse


def compute_stats(
    block,
    stype: SemanticType,
    num_categories: Sequence[int] | None = None,
) -> list[ColumnStats]:
    """Per-column statistics of a materialized block.

    ``num_categories`` supplies K per column for the categorical family (the
    block alone cannot know about categories that never occur).
    """
    if stype is SemanticType.numerical:
        return [_numeric_column_stats(block[:, j]) for j in range(block.shape[1])]
    if stype is SemanticType.timestamp:
        out = []
        for j in range(block.shape[1]):
            comps = block[:, j, :]
            missing = comps[:, 0] < 0
            present = comps[~missing].astype(np.float64)
            if present.shape[0] == 0:
                mean = [0.0] * TIMESTAMP_COMPONENTS
                std = [0.0] * TIMESTAMP_COMPONENTS
            else:
                mean = [float(m) for m in present.mean(axis=0)]
                std = [float(s) for s in present.std(axis=0)]
            out.append(ColumnStats(mean=mean, std=std, count_missing=int(missing.sum())))
        return out
    if stype is SemanticType.categorical:
        ks = num_categories or [int(block[:, j].max()) + 1 if block.shape[0] else 0 for j in range(block.shape[1])]
        return [
            _count_stats(block[:, j], int(ks[j]), dense=ks[j] <= _DENSE_COUNT_LIMIT)
            for j in range(block.shape[1])
        ]
    if stype in (SemanticType.multicategorical, SemanticType.text_tokenized):
        out = []
        for j in range(block.num_cols):
            vals, _ = block.column_values(j)
            if num_categories is not None:
                k = int(num_categories[j])
            else:
                k = int(vals.max()) + 1 if vals.size else 0
            out.append(_count_stats(vals, k, dense=k <= _DENSE_COUNT_LIMIT))
        return out
    if stype.uses_embedding_block:
        # embedding blocks carry no normalization stats; record missingness only
        out = []
        for j in range(block.num_cols):
            col = block.column(j)
            missing = int((np.abs(col).sum(axis=1) == 0.0).sum())
            out.append(ColumnStats(count_missing=missing))
        return out
    raise TabframeError(f"no statistics rule for {stype}")


# --- materialization ---------------------------------------------------------------------------

def _materialize_numerical(names, table, out_cols):
    block = np.empty((table.num_rows, len(names)), dtype=np.float64)
    for j, name in enumerate(names):
        for i, cell in enumerate(table.column(name)):
            if cell is None:
                block[i, j] = np.nan
            else:
                value = _try_real(cell)
                if value is None:
                    raise ParseError(name, i, f"cannot parse {cell!r} as a number")
                block[i, j] = value
    out_cols[SemanticType.numerical] = block


def _materialize_vector_cell(cell, list_separator, column, row) -> np.ndarray | None:
    if cell is None:
        return None
    if isinstance(cell, np.ndarray):
        return cell.astype(np.float64)
    if isinstance(cell, (list, tuple)):
        return np.asarray(cell, dtype=np.float64)
    if isinstance(cell, str):
        parts = [p for p in cell.split(list_separator) if p != ""]
        try:
            return np.asarray([float(p) for p in parts], dtype=np.float64)
        except ValueError:
            raise ParseError(column, row, f"cannot parse {cell!r} as a vector") from None
    raise ParseError(column, row, f"cannot read {cell!r} as a vector")


def materialize(
    table: RawTable,
    schema: Schema,
    embedders=None,
    list_separator: str = DEFAULT_LIST_SEPARATOR,
    tokenizer: SimpleTokenizer | None = None,
) -> TensorFrame:
    """Convert a raw table into a :class:`TensorFrame` per the schema.

    ``embedders`` is an :class:`~tabframe.embedders.EmbedderRegistry` (or any
    object with ``for_column``) and is required when the schema declares
    text_embedded columns.  The result is a pure function of the table, the
    schema, and the embedder outputs.
    """
    missing_cols = [n for n in schema.feature_names if n not in table.names]
    if missing_cols:
        raise SchemaError(f"schema columns missing from table: {missing_cols}")

    n = table.num_rows
    blocks: dict[SemanticType, object] = {}
    names_by_stype: dict[SemanticType, list[str]] = {}
    stats: dict[str, ColumnStats] = {}
    category_maps: dict[str, CategoryMap] = {}
    tok = tokenizer if tokenizer is not None else SimpleTokenizer()

    for stype in CANONICAL_TYPE_ORDER:
        names = schema.feature_names_by_stype(stype)
        if not names:
            continue
        names_by_stype[stype] = list(names)

        if stype is SemanticType.numerical:
            _materialize_numerical(names, table, blocks)
            for name, st in zip(names, compute_stats(blocks[stype], stype)):
                stats[name] = st

        elif stype is SemanticType.categorical:
            block = np.empty((n, len(names)), dtype=np.int64)
            for j, name in enumerate(names):
                cells = table.column(name)
                block[:, j], category_maps[name] = encode_categorical_indices(cells)
            blocks[stype] = block
            ks = [len(category_maps[name]) for name in names]
            for name, st in zip(names, compute_stats(block, stype, ks)):
                stats[name] = st

        elif stype is SemanticType.multicategorical:
            per_col_lists: list[list[list[int]]] = []
            for name in names:
                cells = table.column(name)
                as_lists = [
                    _as_category_list(c, list_separator, name, i)
                    for i, c in enumerate(cells)
                ]
                cmap = CategoryMap.from_values(
                    cat for cell in as_lists for cat in cell
                )
                category_maps[name] = cmap
                per_col_lists.append([[cmap.index_of(cat) for cat in cell] for cell in as_lists])
            nested = [
                [per_col_lists[j][i] for j in range(len(names))] for i in range(n)
            ]
            block = MultiNestedTensor.from_nested(nested, num_cols=len(names))
            blocks[stype] = block
            ks = [len(category_maps[name]) for name in names]
            for name, st in zip(names, compute_stats(block, stype, ks)):
                stats[name] = st

        elif stype is SemanticType.timestamp:
            cols = [materialize_timestamp(table.column(name), name) for name in names]
            block = np.concatenate(cols, axis=1) if len(cols) > 1 else cols[0]
            blocks[stype] = block
            for name, st in zip(names, compute_stats(block, stype)):
                stats[name] = st

        elif stype is SemanticType.text_tokenized:
            nested = []
            token_lists = {
                name: [
                    tok(c) if isinstance(c, str) and c else []
                    for c in table.column(name)
                ]
                for name in names
            }
            for i in range(n):
                nested.append([token_lists[name][i] for name in names])
            block = MultiNestedTensor.from_nested(nested, num_cols=len(names))
            blocks[stype] = block
            vs = [tok.vocab_size] * len(names)
            for name, st in zip(names, compute_stats(block, stype, vs)):
                stats[name] = st

        elif stype is SemanticType.text_embedded:
            if embedders is None:
                raise SchemaError(
                    "schema declares text_embedded columns but no embedders were given"
                )
            cols = []
            for name in names:
                embedder = embedders.for_column(name)
                cells = [c if isinstance(c, str) and c else None for c in table.column(name)]
                cols.append(embedder.embed_batch(cells) if n else
                            np.zeros((0, embedder.spec.dim)))
            block = MultiEmbeddingTensor.from_columns(cols)
            blocks[stype] = block
            for name, st in zip(names, compute_stats(block, stype)):
                stats[name] = st

        elif stype is SemanticType.embedding:
            cols = []
            for name in names:
                cells = table.column(name)
                vecs = [
                    _materialize_vector_cell(c, list_separator, name, i)
                    for i, c in enumerate(cells)
                ]
                dims = {v.shape[0] for v in vecs if v is not None}
                if not dims:
                    raise EmptyColumnError(
                        f"embedding column {name!r} has no non-missing vectors"
                    )
                if len(dims) > 1:
                    raise ParseError(name, 0, f"inconsistent vector widths {sorted(dims)}")
                d = dims.pop()
                col = np.zeros((n, d), dtype=np.float64)
                for i, v in enumerate(vecs):
                    if v is not None:
                        col[i] = v
                cols.append(col)
            block = MultiEmbeddingTensor.from_columns(cols)
            blocks[stype] = block
            for name, st in zip(names, compute_stats(block, stype)):
                stats[name] = st

    target = None
    if schema.target is not None and schema.target in table.names:
        cells = table.column(schema.target)
        target = np.empty(n, dtype=np.float64)
        for i, cell in enumerate(cells):
            if cell is None:
                raise ParseError(schema.target, i, "target value is missing")
            value = _try_real(cell)
            if value is None:
                raise ParseError(schema.target, i, f"cannot parse target {cell!r} as a number")
            target[i] = value

    frame = TensorFrame(
        num_rows=n,
        blocks=blocks,
        column_names_by_stype=names_by_stype,
        stats=stats,
        schema=schema,
        category_maps=category_maps,
        target=target,
    )
    violation = frame_validate(frame)
    if violation is not None:
        raise TabframeError(f"materialization produced an invalid frame: {violation}")
    return frame

"""Tensor frames: the materialized, typed form of a table.

A :class:`TensorFrame` groups column data by semantic type into typed blocks:

==================  =========================================
semantic type       block layout
==================  =========================================
numerical           float64 ``[N, k]`` (missing = NaN)
categorical         int64 ``[N, k]`` (missing = -1)
timestamp           int64 ``[N, k, 7]`` component decomposition
multicategorical    :class:`~tabframe.ragged.MultiNestedTensor`
text_tokenized      :class:`~tabframe.ragged.MultiNestedTensor`
text_embedded       :class:`~tabframe.ragged.MultiEmbeddingTensor`
embedding           :class:`~tabframe.ragged.MultiEmbeddingTensor`
==================  =========================================

Frames are immutable after materialization: row selection builds a new frame
and statistics travel with it unchanged, so a mini-batch still normalizes with
the statistics of the full materialized table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

from .errors import IndexOutOfBoundsError
from .ragged import MultiEmbeddingTensor, MultiNestedTensor, _check_row_indices
from .stypes import Schema, SemanticType

if TYPE_CHECKING:
    from .materialize import CategoryMap

Block = Union[np.ndarray, MultiNestedTensor, MultiEmbeddingTensor]

#: Number of integer components a timestamp decomposes into
#: (year, month, day, day_of_week, hour, minute, second).
TIMESTAMP_COMPONENTS = 7


@dataclass
class ColumnStats:
    """Per-column statistics computed at materialization.

    Numerical columns carry ``mean``/``std`` (population) over non-missing
    entries plus 17 equally spaced quantiles; timestamp columns carry
    per-component mean/std vectors.  Categorical-family columns carry the
    count per category index and the category count.
    """

    mean: float | list[float] | None = None
    std: float | list[float] | None = None
    count_missing: int = 0
    quantiles: list[float] | None = None
    category_count: dict[int, int] | None = None
    num_categories: int | None = None

    def to_dict(self) -> dict:
        out: dict = {"count_missing": self.count_missing}
        if self.mean is not None:
            out["mean"] = self.mean
        if self.std is not None:
            out["std"] = self.std
        if self.quantiles is not None:
            out["quantiles"] = self.quantiles
        if self.category_count is not None:
            out["category_count"] = {str(k): v for k, v in self.category_count.items()}
        if self.num_categories is not None:
            out["num_categories"] = self.num_categories
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ColumnStats":
        cc = obj.get("category_count")
        return cls(
            mean=obj.get("mean"),
            std=obj.get("std"),
            count_missing=obj.get("count_missing", 0),
            quantiles=obj.get("quantiles"),
            category_count={int(k): v for k, v in cc.items()} if cc is not None else None,
            num_categories=obj.get("num_categories"),
        )


def expected_block_kind(stype: SemanticType) -> type:
    if stype.uses_ragged:
        return MultiNestedTensor
    if stype.uses_embedding_block:
        return MultiEmbeddingTensor
    return np.ndarray


@dataclass(eq=False)
class TensorFrame:
    """Mapping from semantic type to a typed column block, plus statistics.

    ``target`` optionally holds the materialized target column (float64) so a
    cached frame is self-sufficient for training and evaluation.
    """

    num_rows: int
    blocks: dict[SemanticType, Block]
    column_names_by_stype: dict[SemanticType, list[str]]
    stats: dict[str, ColumnStats]
    schema: Schema
    category_maps: dict[str, "CategoryMap"] = field(default_factory=dict)
    target: np.ndarray | None = None

    @property
    def num_feature_columns(self) -> int:
        return sum(len(names) for names in self.column_names_by_stype.values())

    def block_num_rows(self, block: Block) -> int:
        if isinstance(block, np.ndarray):
            return block.shape[0]
        return block.num_rows

    def block_num_cols(self, block: Block) -> int:
        if isinstance(block, np.ndarray):
            return block.shape[1]
        return block.num_cols


def columns_by_stype(frame: TensorFrame, stype: SemanticType) -> list[int]:
    """Global feature-column indices (schema order) of columns typed ``stype``."""
    return frame.schema.feature_indices_by_stype(stype)


def frame_row_select(frame: TensorFrame, rows: Sequence[int] | np.ndarray) -> TensorFrame:
    """Gather rows (duplicates allowed) into a new frame.

    Statistics, category maps, and the schema are carried over unchanged:
    they are properties of the materialized table, not of the batch.
    """
    idx = _check_row_indices(rows, frame.num_rows)
    blocks: dict[SemanticType, Block] = {}
    for stype, block in frame.blocks.items():
        if isinstance(block, np.ndarray):
            blocks[stype] = block[idx]
        else:
            blocks[stype] = block.select_rows(idx)
    target = frame.target[idx] if frame.target is not None else None
    return TensorFrame(
        num_rows=int(idx.size),
        blocks=blocks,
        column_names_by_stype={s: list(n) for s, n in frame.column_names_by_stype.items()},
        stats=frame.stats,
        schema=frame.schema,
        category_maps=frame.category_maps,
        target=target,
    )


def frame_validate(frame: TensorFrame) -> str | None:
    """Check the frame's structural invariants.

    Returns ``None`` when the frame is consistent, otherwise a message naming
    the first violated invariant (and column, when applicable).  Violations
    are reported, not raised: a malformed frame is data, not control flow.
    """
    schema_features = list(frame.schema.feature_columns)
    expected_names: dict[SemanticType, list[str]] = {}
    for name, stype in schema_features:
        expected_names.setdefault(stype, []).append(name)

    for stype, block in frame.blocks.items():
        names = frame.column_names_by_stype.get(stype, [])
        n = frame.block_num_rows(block)
        if n != frame.num_rows:
            return f"row count mismatch: block {stype.value} has {n} rows, frame has {frame.num_rows}"
        if not isinstance(block, expected_block_kind(stype)):
            return f"block {stype.value} has wrong layout {type(block).__name__}"
        if frame.block_num_cols(block) != len(names):
            return (
                f"block {stype.value} has {frame.block_num_cols(block)} columns "
                f"but {len(names)} names"
            )
        if isinstance(block, np.ndarray):
            if stype is SemanticType.numerical and block.dtype != np.float64:
                return f"block {stype.value} must be float64"
            if stype is SemanticType.categorical and block.dtype != np.int64:
                return f"block {stype.value} must be int64"
            if stype is SemanticType.timestamp and (
                block.ndim != 3 or block.shape[2] != TIMESTAMP_COMPONENTS
            ):
                return f"block {stype.value} must have shape [N, k, {TIMESTAMP_COMPONENTS}]"

    for stype, names in frame.column_names_by_stype.items():
        if sorted(names) != sorted(expected_names.get(stype, [])):
            return (
                f"column names for {stype.value} do not match schema: "
                f"{names} vs {expected_names.get(stype, [])}"
            )
    for stype in expected_names:
        if stype not in frame.blocks:
            return f"schema declares {stype.value} columns but the frame has no such block"

    for name, _ in schema_features:
        if name not in frame.stats:
            return f"column {name!r} has no statistics"

    # index hygiene for the categorical family
    cat_block = frame.blocks.get(SemanticType.categorical)
    if cat_block is not None:
        for j, name in enumerate(frame.column_names_by_stype[SemanticType.categorical]):
            k = frame.stats[name].num_categories
            col = cat_block[:, j]
            if col.size and (col.min() < -1 or (k is not None and col.max() >= k)):
                return f"column {name!r} has category index outside [-1, {k})"
    mc_block = frame.blocks.get(SemanticType.multicategorical)
    if mc_block is not None:
        for j, name in enumerate(frame.column_names_by_stype[SemanticType.multicategorical]):
            k = frame.stats[name].num_categories
            vals, _ = mc_block.column_values(j)
            if vals.size and (vals.min() < -1 or (k is not None and vals.max() >= k)):
                return f"column {name!r} has category index outside [-1, {k})"
    tok_block = frame.blocks.get(SemanticType.text_tokenized)
    if tok_block is not None:
        for j, name in enumerate(frame.column_names_by_stype[SemanticType.text_tokenized]):
            v = frame.stats[name].num_categories
            vals, _ = tok_block.column_values(j)
            if vals.size and (vals.min() < 0 or (v is not None and vals.max() >= v)):
                return f"column {name!r} has token id outside [0, {v})"

    if frame.target is not None and frame.target.shape[0] != frame.num_rows:
        return "target length does not match num_rows"
    return None


def frame_equal(a: TensorFrame, b: TensorFrame) -> bool:
    """Bit-exact equality of two frames (blocks, stats, maps, schema, target)."""
    if a.num_rows != b.num_rows or a.schema != b.schema:
        return False
    if set(a.blocks) != set(b.blocks):
        return False
    for stype, block in a.blocks.items():
        other = b.blocks[stype]
        if isinstance(block, np.ndarray):
            if not (
                isinstance(other, np.ndarray)
                and block.dtype == other.dtype
                and block.shape == other.shape
                and np.array_equal(block, other, equal_nan=True)
            ):
                return False
        elif not block.equals(other):
            return False
    if a.column_names_by_stype != b.column_names_by_stype:
        return False
    if set(a.stats) != set(b.stats):
        return False
    for name, st in a.stats.items():
        if st.to_dict() != b.stats[name].to_dict():
            return False
    if set(a.category_maps) != set(b.category_maps):
        return False
    for name, cm in a.category_maps.items():
        if cm.reverse != b.category_maps[name].reverse:
            return False
    if (a.target is None) != (b.target is None):
        return False
    if a.target is not None and not np.array_equal(a.target, b.target, equal_nan=True):
        return False
    return True

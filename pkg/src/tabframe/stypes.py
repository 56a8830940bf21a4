"""Semantic types and table schemas.

A :class:`SemanticType` declares the modality of a column and thereby selects
how the column is materialized and later encoded.  A :class:`Schema` is the
ordered list of ``(name, semantic type)`` pairs for a table plus the target
column and the prediction task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import SchemaError


class SemanticType(Enum):
    """Closed enumeration of column modalities.

    The order of members below is the canonical type order: when column
    embeddings of different semantic types are concatenated, type blocks
    appear in this order (and columns keep schema order within a type).
    """

    numerical = "numerical"
    categorical = "categorical"
    multicategorical = "multicategorical"
    timestamp = "timestamp"
    text_embedded = "text_embedded"
    text_tokenized = "text_tokenized"
    embedding = "embedding"

    @classmethod
    def from_tag(cls, tag: str) -> "SemanticType":
        try:
            return cls(tag)
        except ValueError:
            known = ", ".join(m.value for m in cls)
            raise SchemaError(f"unknown semantic type {tag!r} (known: {known})") from None

    @property
    def uses_ragged(self) -> bool:
        return self in (SemanticType.multicategorical, SemanticType.text_tokenized)

    @property
    def uses_embedding_block(self) -> bool:
        return self in (SemanticType.text_embedded, SemanticType.embedding)


#: Canonical type-major order used when assembling column embeddings.
CANONICAL_TYPE_ORDER: tuple[SemanticType, ...] = tuple(SemanticType)


class TaskType(Enum):
    binary_classification = "binary_classification"
    regression = "regression"

    @classmethod
    def from_tag(cls, tag: str) -> "TaskType":
        try:
            return cls(tag)
        except ValueError:
            raise SchemaError(f"unknown task {tag!r}") from None


@dataclass(frozen=True)
class Schema:
    """Ordered column declarations, target column, and task.

    ``columns`` lists every column of the table including the target; the
    feature columns are all columns except the target, and their order in
    ``columns`` defines the global column index used throughout.
    """

    columns: tuple[tuple[str, SemanticType], ...]
    target: str | None = None
    task: TaskType | None = None

    def __post_init__(self):
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dupes}")
        if self.target is not None and self.target not in names:
            raise SchemaError(f"target {self.target!r} is not a column")

    @property
    def feature_columns(self) -> tuple[tuple[str, SemanticType], ...]:
        return tuple((n, s) for n, s in self.columns if n != self.target)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.feature_columns)

    @property
    def num_feature_columns(self) -> int:
        return len(self.feature_columns)

    def stype_of(self, name: str) -> SemanticType:
        for n, s in self.columns:
            if n == name:
                return s
        raise SchemaError(f"no column named {name!r}")

    def feature_indices_by_stype(self, stype: SemanticType) -> list[int]:
        """Global indices (in feature-column order) of columns typed ``stype``."""
        return [j for j, (_, s) in enumerate(self.feature_columns) if s is stype]

    def feature_names_by_stype(self, stype: SemanticType) -> list[str]:
        return [n for n, s in self.feature_columns if s is stype]

    def canonical_encode_order(self) -> list[int]:
        """Global feature indices in the type-major concatenation order."""
        order: list[int] = []
        for stype in CANONICAL_TYPE_ORDER:
            order.extend(self.feature_indices_by_stype(stype))
        return order

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": n, "stype": s.value} for n, s in self.columns],
            "target": self.target,
            "task": self.task.value if self.task is not None else None,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Schema":
        if not isinstance(obj, dict):
            raise SchemaError("schema document must be a JSON object")
        unknown = set(obj) - {"columns", "target", "task"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        if "columns" not in obj:
            raise SchemaError("schema document lacks 'columns'")
        cols = []
        for entry in obj["columns"]:
            extra = set(entry) - {"name", "stype"}
            if extra:
                raise SchemaError(f"unknown column keys: {sorted(extra)}")
            cols.append((entry["name"], SemanticType.from_tag(entry["stype"])))
        target = obj.get("target")
        task_tag = obj.get("task")
        task = TaskType.from_tag(task_tag) if task_tag is not None else None
        return cls(columns=tuple(cols), target=target, task=task)


def load_schema(path: str | Path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema file is not valid JSON: {exc}") from exc
    return Schema.from_dict(obj)


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")

"""On-disk materialization cache.

Frames round-trip bit-exactly through ``cache_save``/``cache_load``.  A file
may carry a content key (hash of the raw inputs); loading with an expected key
raises :class:`KeyMismatchError` when the cached frame belongs to different
inputs, forcing re-materialization.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import CorruptError, KeyMismatchError
from .frame import ColumnStats, TensorFrame
from .materialize import CategoryMap
from .ragged import MultiEmbeddingTensor, MultiNestedTensor
from .stypes import Schema, SemanticType

MAGIC = b"TFRM"


def content_key(*parts: bytes | str) -> str:
    """SHA-256 over length-prefixed parts (table bytes, schema bytes, embedder id)."""
    h = hashlib.sha256()
    for part in parts:
        data = part.encode("utf-8") if isinstance(part, str) else part
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return h.hexdigest()


def cache_save(frame: TensorFrame, path: str | Path, key: str | None = None) -> None:
    """Serialize ``frame`` to ``path`` with optional content key."""
    arrays: dict[str, np.ndarray] = {}
    block_meta: dict[str, dict] = {}
    for stype, block in frame.blocks.items():
        tag = stype.value
        if isinstance(block, MultiNestedTensor):
            arrays[f"{tag}/val"] = block.val
            arrays[f"{tag}/ptr"] = block.ptr
            block_meta[tag] = {
                "kind": "mnt",
                "num_cols": block.num_cols,
                "val_dtype": "<f8" if block.val.dtype == np.float64 else "<i8",
            }
        elif isinstance(block, MultiEmbeddingTensor):
            arrays[f"{tag}/values"] = block.values
            block_meta[tag] = {"kind": "met", "dims": list(block.dims)}
        else:
            arrays[f"{tag}/data"] = block
            block_meta[tag] = {"kind": "dense"}
    if frame.target is not None:
        arrays["target"] = frame.target
    header = {
        "kind": "tensor_frame",
        "num_rows": frame.num_rows,
        "schema": frame.schema.to_dict(),
        "column_names_by_stype": {
            s.value: names for s, names in frame.column_names_by_stype.items()
        },
        "stats": {name: st.to_dict() for name, st in frame.stats.items()},
        "category_maps": {name: cm.reverse for name, cm in frame.category_maps.items()},
        "blocks": block_meta,
        "content_key": key,
        "has_target": frame.target is not None,
    }
    write_container(path, MAGIC, header, arrays)


def cache_load(path: str | Path, expected_key: str | None = None) -> TensorFrame:
    """Load a frame; ``expected_key`` (when given) must match the stored key."""
    header, arrays = read_container(path, MAGIC)
    if expected_key is not None and header.get("content_key") != expected_key:
        raise KeyMismatchError(
            f"cache {path} was built from different inputs "
            f"(stored key {header.get('content_key')!r})"
        )
    schema = Schema.from_dict(header["schema"])
    num_rows = int(header["num_rows"])
    blocks = {}
    names_by_stype = {}
    for tag, names in header["column_names_by_stype"].items():
        stype = SemanticType.from_tag(tag)
        names_by_stype[stype] = list(names)
        meta = header["blocks"][tag]
        if meta["kind"] == "mnt":
            val = arrays[f"{tag}/val"]
            if meta["val_dtype"] == "<i8":
                val = val.astype(np.int64, copy=False)
            blocks[stype] = MultiNestedTensor(
                num_rows, int(meta["num_cols"]), val, arrays[f"{tag}/ptr"]
            )
        elif meta["kind"] == "met":
            blocks[stype] = MultiEmbeddingTensor(
                num_rows, [int(d) for d in meta["dims"]], arrays[f"{tag}/values"]
            )
        else:
            blocks[stype] = arrays[f"{tag}/data"]
    stats = {name: ColumnStats.from_dict(obj) for name, obj in header["stats"].items()}
    category_maps = {
        name: CategoryMap(
            forward={cat: i for i, cat in enumerate(rev)}, reverse=list(rev)
        )
        for name, rev in header["category_maps"].items()
    }
    target = None
    if header.get("has_target"):
        if "target" not in arrays:
            raise CorruptError("target", "header declares a target but no section exists")
        target = arrays["target"]
    return TensorFrame(
        num_rows=num_rows,
        blocks=blocks,
        column_names_by_stype=names_by_stype,
        stats=stats,
        schema=schema,
        category_maps=category_maps,
        target=target,
    )


def stored_key(path: str | Path) -> str | None:
    """Content key stored in a cache file, or None."""
    header, _ = read_container(path, MAGIC)
    return header.get("content_key")

"""tabframe: multi-modal tabular deep learning on a self-contained stack.

The pipeline has four stages: materialization (raw table -> typed tensor
frame), per-semantic-type encoding into a shared column-embedding space,
column-wise interaction via self-attention, and decoding into row embeddings
with an optional prediction head.  Everything runs on float64 numpy arrays
through a small reverse-mode autodiff engine; no deep-learning framework is
required.
"""

from .autodiff import DiffTensor, Tape, backward, grad_check, grad_check_tensors
from .cache import cache_load, cache_save, content_key
from .embedders import (
    EmbedderRegistry,
    EmbedderSpec,
    HashStubEmbedder,
    HttpEmbedder,
    embed_batch,
    hash_embed,
    make_embedder,
)
from .errors import TabframeError
from .frame import (
    ColumnStats,
    TensorFrame,
    columns_by_stype,
    frame_equal,
    frame_row_select,
    frame_validate,
)
from .materialize import (
    CategoryMap,
    RawTable,
    SimpleTokenizer,
    compute_stats,
    encode_categorical_indices,
    infer_schema,
    infer_stype,
    materialize,
    materialize_timestamp,
    read_csv,
    tokenize_text,
)
from .model import (
    ColumnLayout,
    ModelConfig,
    TabularModel,
    model_forward,
    model_from_checkpoint,
    save_checkpoint,
)
from .ragged import MultiEmbeddingTensor, MultiNestedTensor
from .stypes import Schema, SemanticType, TaskType, load_schema, save_schema
from .train import (
    AdamState,
    TrainConfig,
    TrainResult,
    adam_step,
    bce_with_logits,
    export_row_embeddings,
    load_row_embeddings,
    mae,
    mse,
    roc_auc,
    split_rows,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CategoryMap",
    "ColumnLayout",
    "ColumnStats",
    "DiffTensor",
    "EmbedderRegistry",
    "EmbedderSpec",
    "HashStubEmbedder",
    "HttpEmbedder",
    "ModelConfig",
    "MultiEmbeddingTensor",
    "MultiNestedTensor",
    "RawTable",
    "Schema",
    "SemanticType",
    "SimpleTokenizer",
    "TabframeError",
    "TabularModel",
    "Tape",
    "TaskType",
    "TensorFrame",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "backward",
    "bce_with_logits",
    "cache_load",
    "cache_save",
    "columns_by_stype",
    "compute_stats",
    "content_key",
    "embed_batch",
    "encode_categorical_indices",
    "export_row_embeddings",
    "frame_equal",
    "frame_row_select",
    "frame_validate",
    "grad_check",
    "grad_check_tensors",
    "hash_embed",
    "infer_schema",
    "infer_stype",
    "load_row_embeddings",
    "load_schema",
    "mae",
    "make_embedder",
    "materialize",
    "materialize_timestamp",
    "model_forward",
    "model_from_checkpoint",
    "mse",
    "read_csv",
    "roc_auc",
    "save_checkpoint",
    "save_schema",
    "split_rows",
    "tokenize_text",
    "train",
]

"""The four-stage tabular model.

Stage 1 (materialization) lives in :mod:`tabframe.materialize`.  This module
implements the remaining three on top of the autodiff engine:

* **Encoding** — per-semantic-type encoders map each column into a shared
  ``F``-dimensional space, producing ``X`` of shape ``[N, C, F]``.  Feature
  normalization (mean imputation, z-scoring) happens here using the
  statistics carried by the frame.
* **Column-wise interaction** — ``L`` pre-norm Transformer blocks whose
  self-attention runs over the column axis, batched over rows; rows never
  attend across rows.  The ``self_attention_positional`` variant adds a
  learnable per-column position vector before attention.
* **Decoding** — mean pooling, attention pooling, CLS readout, or an MLP over
  the flattened columns, producing row embeddings ``Z`` of shape ``[N, D]``,
  optionally followed by a scalar prediction head.

Parameters are plain float64 arrays in a flat ``name -> DiffTensor`` dict;
every parameter is initialized from its own deterministic stream derived from
``(seed, name)``, so rebuilding a model with the same seed reproduces it
exactly regardless of construction order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor, constant
from .container import read_container, write_container
from .errors import (
    ColumnCountMismatchError,
    IndexOutOfRangeError,
    MissingStatsError,
    SchemaError,
    ShapeMismatchError,
    TokenOutOfRangeError,
)
from .frame import TensorFrame
from .hashutil import fnv1a_64
from .stypes import CANONICAL_TYPE_ORDER, SemanticType

PARAMS_MAGIC = b"TFPM"

_INTERACTIONS = ("self_attention", "self_attention_positional", "none")
_DECODERS = ("mean_pool", "attention_pool", "cls", "flatten_mlp")
_NUM_ENCODERS = ("linear", "periodic")
_HEADS = ("logit", "regression", "none")

#: timestamp components fed through z-normalized linear maps (index, name)
_TS_NUMERIC_COMPONENTS = ((0, "year"), (2, "day"), (4, "hour"), (5, "minute"), (6, "second"))


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters of the model stack."""

    channels: int = 32
    num_layers: int = 2
    num_heads: int = 4
    interaction: str = "self_attention"
    decoder: str = "mean_pool"
    numerical_encoder: str = "linear"
    out_channels: int = 16
    head: str = "logit"

    def __post_init__(self):
        if self.channels < 1 or self.out_channels < 1 or self.num_heads < 1:
            raise SchemaError("channels, out_channels, and num_heads must be >= 1")
        if self.num_layers < 0:
            raise SchemaError("num_layers must be >= 0")
        if self.channels % self.num_heads != 0:
            raise SchemaError(
                f"channels ({self.channels}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.interaction not in _INTERACTIONS:
            raise SchemaError(f"unknown interaction {self.interaction!r}")
        if self.decoder not in _DECODERS:
            raise SchemaError(f"unknown decoder {self.decoder!r}")
        if self.numerical_encoder not in _NUM_ENCODERS:
            raise SchemaError(f"unknown numerical_encoder {self.numerical_encoder!r}")
        if self.head not in _HEADS:
            raise SchemaError(f"unknown head {self.head!r}")
        if self.decoder == "cls" and self.interaction == "none":
            raise SchemaError("decoder 'cls' requires an interaction stage")
        if self.interaction == "none" and self.num_layers != 0:
            raise SchemaError("interaction 'none' requires num_layers == 0")
        if self.numerical_encoder == "periodic" and self.channels % 2 != 0:
            raise SchemaError("periodic numerical encoder needs even channels")

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "interaction": self.interaction,
            "decoder": self.decoder,
            "numerical_encoder": self.numerical_encoder,
            "out_channels": self.out_channels,
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = set(cls().to_dict())
        unknown = set(obj) - known
        if unknown:
            raise SchemaError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class ColumnEmbeddings:
    """Shared-space column embeddings ``[N, C, F]`` plus their column order."""

    tensor: DiffTensor
    column_names: list[str]


@dataclass(frozen=True)
class ColumnLayout:
    """Everything the model needs to know about the frame's columns."""

    numerical: tuple[str, ...]
    categorical: tuple[tuple[str, int], ...]
    multicategorical: tuple[tuple[str, int], ...]
    timestamp: tuple[str, ...]
    text_embedded: tuple[tuple[str, int], ...]
    text_tokenized: tuple[str, ...]
    vocab_size: int
    embedding: tuple[tuple[str, int], ...]

    @classmethod
    def from_frame(cls, frame: TensorFrame) -> "ColumnLayout":
        def names(st):
            return tuple(frame.column_names_by_stype.get(st, []))

        def with_cardinality(st):
            return tuple(
                (n, int(frame.stats[n].num_categories)) for n in names(st)
            )

        def with_dims(st):
            block = frame.blocks.get(st)
            return tuple(
                (n, int(block.dims[j]))
                for j, n in enumerate(names(st))
            ) if block is not None else ()

        vocab = 0
        for n in names(SemanticType.text_tokenized):
            vocab = max(vocab, int(frame.stats[n].num_categories))
        return cls(
            numerical=names(SemanticType.numerical),
            categorical=with_cardinality(SemanticType.categorical),
            multicategorical=with_cardinality(SemanticType.multicategorical),
            timestamp=names(SemanticType.timestamp),
            text_embedded=with_dims(SemanticType.text_embedded),
            text_tokenized=names(SemanticType.text_tokenized),
            vocab_size=vocab,
            embedding=with_dims(SemanticType.embedding),
        )

    @property
    def num_columns(self) -> int:
        return (
            len(self.numerical) + len(self.categorical) + len(self.multicategorical)
            + len(self.timestamp) + len(self.text_embedded) + len(self.text_tokenized)
            + len(self.embedding)
        )

    @property
    def encode_order(self) -> list[str]:
        """Column names in type-major concatenation order."""
        return (
            list(self.numerical)
            + [n for n, _ in self.categorical]
            + [n for n, _ in self.multicategorical]
            + list(self.timestamp)
            + [n for n, _ in self.text_embedded]
            + list(self.text_tokenized)
            + [n for n, _ in self.embedding]
        )

    def to_dict(self) -> dict:
        return {
            "numerical": list(self.numerical),
            "categorical": [[n, k] for n, k in self.categorical],
            "multicategorical": [[n, k] for n, k in self.multicategorical],
            "timestamp": list(self.timestamp),
            "text_embedded": [[n, d] for n, d in self.text_embedded],
            "text_tokenized": list(self.text_tokenized),
            "vocab_size": self.vocab_size,
            "embedding": [[n, d] for n, d in self.embedding],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ColumnLayout":
        return cls(
            numerical=tuple(obj["numerical"]),
            categorical=tuple((n, int(k)) for n, k in obj["categorical"]),
            multicategorical=tuple((n, int(k)) for n, k in obj["multicategorical"]),
            timestamp=tuple(obj["timestamp"]),
            text_embedded=tuple((n, int(d)) for n, d in obj["text_embedded"]),
            text_tokenized=tuple(obj["text_tokenized"]),
            vocab_size=int(obj["vocab_size"]),
            embedding=tuple((n, int(d)) for n, d in obj["embedding"]),
        )


# --- parameter initialization -----------------------------------------------------

def _rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, fnv1a_64(name.encode("utf-8"))])
    )


def _linear_init(seed, name, fan_in, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return _rng_for(seed, name).uniform(-bound, bound, size=shape)


def _table_init(seed, name, shape) -> np.ndarray:
    return _rng_for(seed, name).normal(0.0, 0.02, size=shape)


def _freq_init(seed, name, shape) -> np.ndarray:
    return _rng_for(seed, name).normal(0.0, 1.0, size=shape)


def build_parameters(config: ModelConfig, layout: ColumnLayout, seed: int = 0) -> dict[str, DiffTensor]:
    """Initialize the full parameter dict for ``config`` over ``layout``."""
    f = config.channels
    d = config.out_channels
    p: dict[str, np.ndarray] = {}

    for name in layout.numerical:
        base = f"enc.numerical.{name}"
        if config.numerical_encoder == "linear":
            p[f"{base}.w"] = _linear_init(seed, f"{base}.w", 1, (f,))
            p[f"{base}.b"] = _linear_init(seed, f"{base}.b", 1, (f,))
        else:
            p[f"{base}.freq"] = _freq_init(seed, f"{base}.freq", (f // 2,))
            p[f"{base}.w"] = _linear_init(seed, f"{base}.w", f, (f, f))
            p[f"{base}.b"] = _linear_init(seed, f"{base}.b", f, (f,))
    for name, k in layout.categorical:
        pname = f"enc.categorical.{name}.table"
        p[pname] = _table_init(seed, pname, (k + 1, f))
    for name, k in layout.multicategorical:
        pname = f"enc.multicategorical.{name}.table"
        p[pname] = _table_init(seed, pname, (k + 1, f))
    for name in layout.timestamp:
        base = f"enc.timestamp.{name}"
        p[f"{base}.month"] = _table_init(seed, f"{base}.month", (13, f))
        p[f"{base}.dow"] = _table_init(seed, f"{base}.dow", (8, f))
        for _, comp in _TS_NUMERIC_COMPONENTS:
            p[f"{base}.{comp}.w"] = _linear_init(seed, f"{base}.{comp}.w", 1, (f,))
            p[f"{base}.{comp}.b"] = _linear_init(seed, f"{base}.{comp}.b", 1, (f,))
    for name, dj in layout.text_embedded:
        base = f"enc.text_embedded.{name}"
        p[f"{base}.w"] = _linear_init(seed, f"{base}.w", dj, (dj, f))
        p[f"{base}.b"] = _linear_init(seed, f"{base}.b", dj, (f,))
    for name, dj in layout.embedding:
        base = f"enc.embedding.{name}"
        p[f"{base}.w"] = _linear_init(seed, f"{base}.w", dj, (dj, f))
        p[f"{base}.b"] = _linear_init(seed, f"{base}.b", dj, (f,))
    if layout.text_tokenized:
        p["enc.text_tokenized.shared.table"] = _table_init(
            seed, "enc.text_tokenized.shared.table", (layout.vocab_size, f)
        )
        p["enc.text_tokenized.shared.w"] = _linear_init(
            seed, "enc.text_tokenized.shared.w", f, (f, f)
        )
        p["enc.text_tokenized.shared.b"] = _linear_init(
            seed, "enc.text_tokenized.shared.b", f, (f,)
        )

    c_eff = layout.num_columns + (1 if config.decoder == "cls" else 0)
    for layer in range(config.num_layers):
        base = f"layers.{layer}"
        if config.interaction == "self_attention_positional":
            p[f"{base}.pos"] = _table_init(seed, f"{base}.pos", (c_eff, f))
        for ln in ("ln1", "ln2"):
            p[f"{base}.{ln}.gain"] = np.ones(f)
            p[f"{base}.{ln}.bias"] = np.zeros(f)
        for mat in ("wq", "wk", "wv", "wo"):
            p[f"{base}.attn.{mat}"] = _linear_init(seed, f"{base}.attn.{mat}", f, (f, f))
        for vec in ("bq", "bk", "bv", "bo"):
            p[f"{base}.attn.{vec}"] = _linear_init(seed, f"{base}.attn.{vec}", f, (f,))
        p[f"{base}.ff.w1"] = _linear_init(seed, f"{base}.ff.w1", f, (f, 2 * f))
        p[f"{base}.ff.b1"] = _linear_init(seed, f"{base}.ff.b1", f, (2 * f,))
        p[f"{base}.ff.w2"] = _linear_init(seed, f"{base}.ff.w2", 2 * f, (2 * f, f))
        p[f"{base}.ff.b2"] = _linear_init(seed, f"{base}.ff.b2", 2 * f, (f,))

    if config.decoder == "cls":
        p["cls.vector"] = _table_init(seed, "cls.vector", (f,))
    if config.decoder in ("mean_pool", "attention_pool", "cls"):
        p["dec.w"] = _linear_init(seed, "dec.w", f, (f, d))
        p["dec.b"] = _linear_init(seed, "dec.b", f, (d,))
        if config.decoder == "attention_pool":
            p["dec.query"] = _linear_init(seed, "dec.query", f, (f,))
    else:  # flatten_mlp
        p["dec.w1"] = _linear_init(seed, "dec.w1", c_eff * f, (c_eff * f, 2 * f))
        p["dec.b1"] = _linear_init(seed, "dec.b1", c_eff * f, (2 * f,))
        p["dec.w2"] = _linear_init(seed, "dec.w2", 2 * f, (2 * f, d))
        p["dec.b2"] = _linear_init(seed, "dec.b2", 2 * f, (d,))
    if config.head != "none":
        p["head.w"] = _linear_init(seed, "head.w", d, (d, 1))
        p["head.b"] = _linear_init(seed, "head.b", d, (1,))
    return {name: ad.parameter(arr) for name, arr in p.items()}


# --- encoders --------------------------------------------------------------------------

def _column_stack(cols: list[DiffTensor], n: int, f: int) -> DiffTensor:
    shaped = [ad.reshape(c, (n, 1, f)) for c in cols]
    return shaped[0] if len(shaped) == 1 else ad.concat_axis(shaped, axis=1)


def _scalar_linear(z: np.ndarray, w: DiffTensor, b: DiffTensor, n: int, f: int) -> DiffTensor:
    """Affine map of one scalar feature: ``z * w + b`` giving ``[N, F]``."""
    zt = constant(z.reshape(n, 1))
    return ad.add(ad.matmul(zt, ad.reshape(w, (1, f))), b)


def encode_numerical(frame: TensorFrame, params, layout: ColumnLayout, config: ModelConfig) -> DiffTensor:
    """Impute missing with the column mean, z-normalize, then embed per column."""
    block = frame.blocks[SemanticType.numerical]
    n, f = frame.num_rows, config.channels
    cols = []
    for j, name in enumerate(layout.numerical):
        stats = frame.stats.get(name)
        if stats is None or stats.mean is None or stats.std is None:
            raise MissingStatsError(f"no mean/std statistics for column {name!r}")
        x = block[:, j]
        imputed = np.where(np.isnan(x), stats.mean, x)
        z = (imputed - stats.mean) / max(stats.std, 1e-12)
        base = f"enc.numerical.{name}"
        if config.numerical_encoder == "linear":
            col = _scalar_linear(z, params[f"{base}.w"], params[f"{base}.b"], n, f)
        else:
            two_pi_freq = ad.mul(params[f"{base}.freq"], constant(2.0 * math.pi))
            angles = ad.matmul(constant(z.reshape(n, 1)), ad.reshape(two_pi_freq, (1, f // 2)))
            feats = ad.concat_axis([ad.sin(angles), ad.cos(angles)], axis=1)
            col = ad.add(ad.matmul(feats, params[f"{base}.w"]), params[f"{base}.b"])
        cols.append(col)
    return _column_stack(cols, n, f)


def encode_categorical(frame: TensorFrame, params, layout: ColumnLayout, config: ModelConfig) -> DiffTensor:
    """Shallow per-category embeddings; index -1 selects the reserved row."""
    block = frame.blocks[SemanticType.categorical]
    n, f = frame.num_rows, config.channels
    cols = []
    for j, (name, k) in enumerate(layout.categorical):
        ids = block[:, j]
        if ids.size and ids.max() >= k:
            raise IndexOutOfRangeError(
                f"column {name!r} has category index {int(ids.max())} >= {k}"
            )
        shifted = np.where(ids < 0, k, ids)
        cols.append(ad.gather_rows(params[f"enc.categorical.{name}.table"], shifted))
    return _column_stack(cols, n, f)


def encode_multicategorical(frame: TensorFrame, params, layout: ColumnLayout, config: ModelConfig) -> DiffTensor:
    """Mean of category embeddings per cell; empty cells embed to zero."""
    block = frame.blocks[SemanticType.multicategorical]
    n, f = frame.num_rows, config.channels
    cols = []
    for j, (name, k) in enumerate(layout.multicategorical):
        vals, offsets = block.column_values(j)
        if vals.size and vals.max() >= k:
            raise IndexOutOfRangeError(
                f"column {name!r} has category index {int(vals.max())} >= {k}"
            )
        shifted = np.where(vals < 0, k, vals)
        table = params[f"enc.multicategorical.{name}.table"]
        cols.append(ad.segment_mean(table, shifted, offsets))
    return _column_stack(cols, n, f)


def encode_tokenized(frame: TensorFrame, params, layout: ColumnLayout, config: ModelConfig) -> DiffTensor:
    """Token-bag encoder: mean token embedding per cell, then a shared linear."""
    block = frame.blocks[SemanticType.text_tokenized]
    n, f = frame.num_rows, config.channels
    table = params["enc.text_tokenized.shared.table"]
    cols = []
    for j, name in enumerate(layout.text_tokenized):
        vals, offsets = block.column_values(j)
        if vals.size and (vals.min() < 0 or vals.max() >= layout.vocab_size):
            raise TokenOutOfRangeError(
                f"column {name!r} has token id outside [0, {layout.vocab_size})"
            )
        cols.append(ad.segment_mean(table, vals, offsets))
    stacked = _column_stack(cols, n, f)
    return ad.add(
        ad.matmul(stacked, params["enc.text_tokenized.shared.w"]),
        params["enc.text_tokenized.shared.b"],
    )


def _encode_met(frame, params, pairs, stype, n, f):
    block = frame.blocks[stype]
    cols = []
    for j, (name, dj) in enumerate(pairs):
        if block.dims[j] != dj:
            raise ShapeMismatchError(
                f"column {name!r} has width {block.dims[j]}, model expects {dj}"
            )
        base = f"enc.{stype.value}.{name}"
        v = constant(block.column(j))
        cols.append(ad.add(ad.matmul(v, params[f"{base}.w"]), params[f"{base}.b"]))
    return _column_stack(cols, n, f)


def encode_embedding_block(frame: TensorFrame, params, layout: ColumnLayout, config: ModelConfig,
                           stype: SemanticType = SemanticType.embedding) -> DiffTensor:
    """Per-column linear maps ``D_j -> F``; an all-zero row embeds to the bias."""
    pairs = layout.embedding if stype is SemanticType.embedding else layout.text_embedded
    return _encode_met(frame, params, pairs, stype, frame.num_rows, config.channels)


def encode_timestamp(frame: TensorFrame, params, layout: ColumnLayout, config: ModelConfig) -> DiffTensor:
    """Sum of month/day-of-week table embeddings and z-normalized linear maps
    of the year/day/hour/minute/second components; missing rows hit the
    reserved table rows and contribute zero through the linear maps."""
    block = frame.blocks[SemanticType.timestamp]
    n, f = frame.num_rows, config.channels
    cols = []
    for j, name in enumerate(layout.timestamp):
        stats = frame.stats.get(name)
        if stats is None or stats.mean is None:
            raise MissingStatsError(f"no component statistics for column {name!r}")
        comps = block[:, j, :]
        missing = comps[:, 0] < 0
        base = f"enc.timestamp.{name}"
        month_ids = np.where(missing, 12, comps[:, 1] - 1)
        dow_ids = np.where(missing, 7, comps[:, 3])
        acc = ad.add(
            ad.gather_rows(params[f"{base}.month"], month_ids),
            ad.gather_rows(params[f"{base}.dow"], dow_ids),
        )
        for idx, comp in _TS_NUMERIC_COMPONENTS:
            mean = stats.mean[idx]
            std = stats.std[idx]
            z = np.where(missing, 0.0, (comps[:, idx] - mean) / max(std, 1e-12))
            term = _scalar_linear(z, params[f"{base}.{comp}.w"], params[f"{base}.{comp}.b"], n, f)
            acc = ad.add(acc, term)
        cols.append(acc)
    return _column_stack(cols, n, f)


_ENCODERS = {
    SemanticType.numerical: encode_numerical,
    SemanticType.categorical: encode_categorical,
    SemanticType.multicategorical: encode_multicategorical,
    SemanticType.timestamp: encode_timestamp,
    SemanticType.text_embedded: lambda fr, p, lo, cf: encode_embedding_block(
        fr, p, lo, cf, SemanticType.text_embedded
    ),
    SemanticType.text_tokenized: encode_tokenized,
    SemanticType.embedding: encode_embedding_block,
}


def assemble_X(parts: list[tuple[SemanticType, list[str], DiffTensor]], expected_columns: int) -> ColumnEmbeddings:
    """Concatenate per-type encodings along the column axis in canonical order."""
    names: list[str] = []
    tensors: list[DiffTensor] = []
    for _, part_names, tensor in parts:
        names.extend(part_names)
        tensors.append(tensor)
    if len(names) != expected_columns:
        raise ColumnCountMismatchError(
            f"assembled {len(names)} columns, schema declares {expected_columns}"
        )
    x = tensors[0] if len(tensors) == 1 else ad.concat_axis(tensors, axis=1)
    return ColumnEmbeddings(tensor=x, column_names=names)


# --- interaction ---------------------------------------------------------------------------

def _affine_norm(x, params, base):
    h = ad.layer_norm_lastdim(x)
    return ad.add(ad.mul(h, params[f"{base}.gain"]), params[f"{base}.bias"])


def interaction_layer(x: DiffTensor, params, layer: int, config: ModelConfig) -> DiffTensor:
    """One pre-norm Transformer block with self-attention over the column axis."""
    n, c, f = x.shape
    heads = config.num_heads
    dh = f // heads
    base = f"layers.{layer}"
    if config.interaction == "self_attention_positional":
        x = ad.add(x, params[f"{base}.pos"])

    h = _affine_norm(x, params, f"{base}.ln1")

    def project(mat, vec):
        proj = ad.add(ad.matmul(h, params[f"{base}.attn.{mat}"]), params[f"{base}.attn.{vec}"])
        return ad.transpose(ad.reshape(proj, (n, c, heads, dh)), (0, 2, 1, 3))

    q = project("wq", "bq")
    k = project("wk", "bk")
    v = project("wv", "bv")
    scores = ad.mul(
        ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
        constant(1.0 / math.sqrt(dh)),
    )
    attn = ad.softmax_lastdim(scores)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (n, c, f))
    attn_out = ad.add(ad.matmul(ctx, params[f"{base}.attn.wo"]), params[f"{base}.attn.bo"])
    x = ad.add(x, attn_out)

    h2 = _affine_norm(x, params, f"{base}.ln2")
    hidden = ad.relu(ad.add(ad.matmul(h2, params[f"{base}.ff.w1"]), params[f"{base}.ff.b1"]))
    ff_out = ad.add(ad.matmul(hidden, params[f"{base}.ff.w2"]), params[f"{base}.ff.b2"])
    return ad.add(x, ff_out)


# --- decoding -------------------------------------------------------------------------------

def decode(x: DiffTensor, params, config: ModelConfig) -> DiffTensor:
    """Summarize column embeddings into row embeddings ``Z`` of shape ``[N, D]``."""
    n, c, f = x.shape
    if config.decoder == "mean_pool":
        pooled = ad.mean_axis(x, axis=1)
        return ad.add(ad.matmul(pooled, params["dec.w"]), params["dec.b"])
    if config.decoder == "attention_pool":
        logits = ad.reshape(ad.matmul(x, ad.reshape(params["dec.query"], (f, 1))), (n, c))
        weights = ad.reshape(ad.softmax_lastdim(logits), (n, 1, c))
        pooled = ad.reshape(ad.matmul(weights, x), (n, f))
        return ad.add(ad.matmul(pooled, params["dec.w"]), params["dec.b"])
    if config.decoder == "cls":
        first = ad.reshape(ad.slice_axis(x, axis=1, start=0, stop=1), (n, f))
        return ad.add(ad.matmul(first, params["dec.w"]), params["dec.b"])
    # flatten_mlp
    flat = ad.reshape(x, (n, c * f))
    hidden = ad.relu(ad.add(ad.matmul(flat, params["dec.w1"]), params["dec.b1"]))
    return ad.add(ad.matmul(hidden, params["dec.w2"]), params["dec.b2"])


def apply_head(z: DiffTensor, params, config: ModelConfig) -> DiffTensor | None:
    if config.head == "none":
        return None
    score = ad.add(ad.matmul(z, params["head.w"]), params["head.b"])
    return ad.reshape(score, (z.shape[0],))


# --- the model -------------------------------------------------------------------------------

class TabularModel:
    """Encoders + interaction layers + decoder over a tensor frame."""

    def __init__(self, config: ModelConfig, layout: ColumnLayout, params: dict[str, DiffTensor]):
        self.config = config
        self.layout = layout
        self.params = params

    @classmethod
    def build(cls, config: ModelConfig, frame: TensorFrame, seed: int = 0) -> "TabularModel":
        layout = ColumnLayout.from_frame(frame)
        if layout.num_columns == 0:
            raise SchemaError("frame has no feature columns to model")
        return cls(config, layout, build_parameters(config, layout, seed))

    def _check_frame(self, frame: TensorFrame) -> None:
        layout = ColumnLayout.from_frame(frame)
        if layout != self.layout:
            raise ShapeMismatchError(
                "frame columns do not match the columns this model was built for"
            )

    def forward(self, frame: TensorFrame) -> tuple[DiffTensor, DiffTensor | None]:
        """Run all stages; returns ``(Z, prediction)``.

        ``Z`` is the decoder output (pre-head row embeddings); ``prediction``
        is the scalar per-row head output, or None when ``head == 'none'``.
        """
        self._check_frame(frame)
        n, f = frame.num_rows, self.config.channels
        parts = []
        for stype in CANONICAL_TYPE_ORDER:
            names = frame.column_names_by_stype.get(stype)
            if not names:
                continue
            encoded = _ENCODERS[stype](frame, self.params, self.layout, self.config)
            parts.append((stype, list(names), encoded))
        embeddings = assemble_X(parts, self.layout.num_columns)
        x = embeddings.tensor

        if self.config.decoder == "cls":
            ones = constant(np.ones((n, 1)))
            tile = ad.reshape(
                ad.matmul(ones, ad.reshape(self.params["cls.vector"], (1, f))), (n, 1, f)
            )
            x = ad.concat_axis([tile, x], axis=1)

        for layer in range(self.config.num_layers):
            x = interaction_layer(x, self.params, layer, self.config)

        z = decode(x, self.params, self.config)
        return z, apply_head(z, self.params, self.config)

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of all parameter arrays."""
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_snapshot(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) - set(arrays)
            extra = set(arrays) - set(self.params)
            raise ShapeMismatchError(
                f"parameter names do not match (missing {sorted(missing)}, extra {sorted(extra)})"
            )
        for name, arr in arrays.items():
            if arr.shape != self.params[name].shape:
                raise ShapeMismatchError(
                    f"parameter {name!r} has shape {arr.shape}, expected {self.params[name].shape}"
                )
            self.params[name].data = np.asarray(arr, dtype=np.float64).copy()
            self.params[name].grad = None


def model_forward(model: TabularModel, frame: TensorFrame) -> tuple[DiffTensor, DiffTensor | None]:
    """Functional alias for :meth:`TabularModel.forward`."""
    return model.forward(frame)


# --- checkpoints ------------------------------------------------------------------------------

def save_checkpoint(model: TabularModel, path: str | Path, extra: dict | None = None) -> None:
    """Write config, column layout, and parameters to a ``TFPM`` container."""
    header = {
        "kind": "model_checkpoint",
        "config": model.config.to_dict(),
        "layout": model.layout.to_dict(),
    }
    if extra:
        header["extra"] = extra
    arrays = {name: model.params[name].data for name in sorted(model.params)}
    write_container(path, PARAMS_MAGIC, header, arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ColumnLayout, dict[str, np.ndarray]]:
    header, arrays = read_container(path, PARAMS_MAGIC)
    config = ModelConfig.from_dict(header["config"])
    layout = ColumnLayout.from_dict(header["layout"])
    return config, layout, arrays


def model_from_checkpoint(path: str | Path, frame: TensorFrame) -> TabularModel:
    """Rebuild a model from a checkpoint, validating shapes against the frame."""
    config, layout, arrays = load_checkpoint(path)
    frame_layout = ColumnLayout.from_frame(frame)
    if frame_layout != layout:
        raise ShapeMismatchError(
            "checkpoint was trained on different columns than this frame provides"
        )
    model = TabularModel(config, layout, build_parameters(config, layout, seed=0))
    model.load_snapshot(arrays)
    return model
